//! Shared fixture builders for the benchmark suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triroute_core::data::{generate_synthetic, make_split, SplitSizes, SynthTaskSpec, Vocab};
use triroute_core::data::DataSplit;
use triroute_core::lm::{train_lm, NGramModel};
use triroute_core::model::{ModelConfig, Seq2SeqModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small prepared corpus: encoded split plus vocabularies.
pub struct Fixture {
    pub data: DataSplit<u32>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub lm: NGramModel,
    pub model: Seq2SeqModel,
}

pub fn fixture(hidden: usize) -> Fixture {
    let spec = SynthTaskSpec {
        size: 600,
        ..SynthTaskSpec::default()
    };
    let corpus = generate_synthetic(&spec).expect("synthetic corpus");
    let sizes = SplitSizes {
        labeled: 200,
        unlabeled_src: 100,
        unlabeled_tgt: 100,
        dev: 50,
        test: 50,
    };
    let split = make_split(&corpus, sizes, 1).expect("split");
    let (src_vocab, tgt_vocab) = triroute_core::experiment::build_vocabs(&split, 1);
    let data = split.encode(&src_vocab, &tgt_vocab);
    let lm_corpus = triroute_core::experiment::lm_corpus(&data);
    let lm = train_lm(&lm_corpus).expect("lm");
    let model = Seq2SeqModel::new(
        ModelConfig {
            src_vocab: src_vocab.size(),
            tgt_vocab: tgt_vocab.size(),
            embed_dim: hidden,
            hidden_dim: hidden,
            enc_layers: 1,
            dec_layers: 1,
        },
        7,
    )
    .expect("model");
    Fixture {
        data,
        src_vocab,
        tgt_vocab,
        lm,
        model,
    }
}
