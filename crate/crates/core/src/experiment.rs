//! End-to-end experiment pipeline: vocabularies from a split, LM training,
//! model training, and final metrics. The CLI and the acceptance suite both
//! drive runs through this module.

use crate::data::{DataSplit, Vocab};
use crate::error::{Error, Result};
use crate::eval::{bleu, decode_corpus, perplexity, token_accuracy};
use crate::lm::{train_lm, NGramModel};
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::training::{train, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

/// Architecture sizes without the vocabulary dimensions (those come from
/// the data).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed_dim: 64,
            hidden_dim: 64,
            enc_layers: 1,
            dec_layers: 1,
        }
    }
}

impl ModelDims {
    pub fn to_model_config(self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
        }
    }
}

/// Where the reward LM comes from.
pub enum LmSource<'a> {
    /// No LM; only valid for configurations that never request RL.
    None,
    /// Train a trigram LM on the split's target text (labeled + unlabeled)
    /// before training, then freeze it.
    FromSplit,
    /// Parse a serialized LM file; its vocabulary hash must match the
    /// target vocabulary built from the split.
    Text(&'a str),
}

/// Greedy-decode metrics over labeled pairs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairMetrics {
    pub bleu: f64,
    pub ppl: f64,
    pub token_acc: f64,
}

/// Everything a finished run produces.
pub struct Experiment {
    pub model: Seq2SeqModel,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub lm: Option<NGramModel>,
    pub outcome: TrainOutcome,
    pub dev: PairMetrics,
    pub test: PairMetrics,
}

/// Vocabularies over exactly the text the trainer may see: labeled pairs
/// plus the unlabeled pools. Dev and test stay out; their unknown tokens
/// map to UNK.
pub fn build_vocabs(split: &DataSplit<String>, min_count: usize) -> (Vocab, Vocab) {
    let src = split
        .labeled
        .iter()
        .map(|(x, _)| x.as_slice())
        .chain(split.unlabeled_src.iter().map(|x| x.as_slice()));
    let tgt = split
        .labeled
        .iter()
        .map(|(_, y)| y.as_slice())
        .chain(split.unlabeled_tgt.iter().map(|y| y.as_slice()));
    (Vocab::build(src, min_count), Vocab::build(tgt, min_count))
}

/// The LM training corpus of a split: labeled targets plus the unlabeled
/// target pool.
pub fn lm_corpus(data: &DataSplit<u32>) -> Vec<Vec<u32>> {
    data.labeled
        .iter()
        .map(|(_, y)| y.clone())
        .chain(data.unlabeled_tgt.iter().cloned())
        .collect()
}

/// Greedy-decode `pairs` and score BLEU, perplexity, and token accuracy.
pub fn evaluate_pairs(
    model: &Seq2SeqModel,
    pairs: &[(Vec<u32>, Vec<u32>)],
    max_decode_len: usize,
) -> Result<PairMetrics> {
    if pairs.is_empty() {
        return Err(Error::sizing("evaluate_pairs: empty pair set"));
    }
    let sources: Vec<Vec<u32>> = pairs.iter().map(|(x, _)| x.clone()).collect();
    let refs: Vec<Vec<u32>> = pairs.iter().map(|(_, y)| y.clone()).collect();
    let hyps = decode_corpus(model, &sources, max_decode_len)?;
    Ok(PairMetrics {
        bleu: bleu(&hyps, &refs)?,
        ppl: perplexity(model, pairs)?,
        token_acc: token_accuracy(&hyps, &refs)?,
    })
}

/// Run one experiment: build vocabularies, encode the split, train (or
/// load) the LM, train the model, and evaluate dev and test with the
/// best-dev parameters.
pub fn run_experiment(
    split: &DataSplit<String>,
    min_count: usize,
    dims: ModelDims,
    cfg: &TrainConfig,
    lm_source: LmSource,
) -> Result<Experiment> {
    let (src_vocab, tgt_vocab) = build_vocabs(split, min_count);
    let data = split.encode(&src_vocab, &tgt_vocab);

    let lm = match lm_source {
        LmSource::None => None,
        LmSource::FromSplit => {
            let corpus = lm_corpus(&data);
            if corpus.is_empty() {
                return Err(Error::sizing(
                    "cannot train an LM: the split has no target-side text",
                ));
            }
            Some(train_lm(&corpus)?)
        }
        LmSource::Text(text) => Some(NGramModel::from_text(text, &tgt_vocab)?),
    };
    if cfg.uses_rl() && lm.is_none() {
        return Err(Error::contract(
            "this configuration needs an LM reward; provide one or disable RL",
        ));
    }

    let model_cfg = dims.to_model_config(src_vocab.size(), tgt_vocab.size());
    let mut model = Seq2SeqModel::new(model_cfg, cfg.seed)?;
    let outcome = train(&mut model, &data, lm.as_ref(), cfg)?;

    let dev = evaluate_pairs(&model, &data.dev, cfg.max_decode_len)?;
    let test = evaluate_pairs(&model, &data.test, cfg.max_decode_len)?;
    Ok(Experiment {
        model,
        src_vocab,
        tgt_vocab,
        lm,
        outcome,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_split, SplitSizes, SynthTaskSpec};
    use crate::training::Preset;

    fn tiny_split() -> DataSplit<String> {
        let spec = SynthTaskSpec {
            entities: 5,
            relations: 3,
            values: 5,
            max_triples: 2,
            size: 120,
            seed: 3,
            grammar: 0,
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let sizes = SplitSizes {
            labeled: 40,
            unlabeled_src: 20,
            unlabeled_tgt: 20,
            dev: 10,
            test: 10,
        };
        make_split(&corpus, sizes, 5).unwrap()
    }

    #[test]
    fn vocabs_cover_trainer_visible_text_only() {
        let split = tiny_split();
        let (sv, tv) = build_vocabs(&split, 1);
        for (x, _) in &split.labeled {
            for tok in x {
                assert!(sv.id(tok).is_some(), "{tok} missing from source vocab");
            }
        }
        for y in &split.unlabeled_tgt {
            for tok in y {
                assert!(tv.id(tok).is_some(), "{tok} missing from target vocab");
            }
        }
    }

    #[test]
    fn experiment_runs_and_is_seed_deterministic() {
        let split = tiny_split();
        let dims = ModelDims {
            embed_dim: 8,
            hidden_dim: 8,
            enc_layers: 1,
            dec_layers: 1,
        };
        let mut cfg = TrainConfig {
            max_steps: 8,
            eval_every: 4,
            batch_size: 2,
            max_decode_len: 12,
            seed: 17,
            ..TrainConfig::default()
        };
        Preset::R123Lm.apply(&mut cfg);
        let run = || {
            match run_experiment(&split, 1, dims, &cfg, LmSource::FromSplit) {
                Ok(e) => (e.model.params.fingerprint(""), e.test.bleu, e.test.ppl),
                Err(e) => panic!("experiment failed: {e}"),
            }
        };
        let (f1, b1, p1) = run();
        let (f2, b2, p2) = run();
        assert_eq!(f1, f2);
        assert_eq!(b1.to_bits(), b2.to_bits());
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    #[test]
    fn rl_preset_without_lm_is_rejected() {
        let split = tiny_split();
        let mut cfg = TrainConfig::default();
        Preset::R123Lm.apply(&mut cfg);
        match run_experiment(&split, 1, ModelDims::default(), &cfg, LmSource::None) {
            Ok(_) => panic!("RL preset without an LM should be rejected"),
            Err(err) => assert!(err.to_string().contains("LM")),
        }
    }
}
