use triroute_core::data::{generate_synthetic, make_split, SplitSizes, SynthTaskSpec};
use triroute_core::experiment::{run_experiment, LmSource, ModelDims};
use triroute_core::training::{Preset, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn calib_criterion10() {
    let spec = SynthTaskSpec {
        entities: 12, relations: 5, values: 12, max_triples: 2, grammar: 0,
        size: 4600, seed: 9,
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let sizes = SplitSizes { labeled: 100, unlabeled_src: 2000, unlabeled_tgt: 2000, dev: 120, test: 150 };
    let dims = ModelDims { embed_dim: 32, hidden_dim: 32, enc_layers: 1, dec_layers: 1 };
    for seed in [1u64, 2] {
        let split = make_split(&corpus, sizes, 30 + seed).unwrap();
        for preset in [Preset::R1, Preset::R12Lm, Preset::R123Lm] {
            let mut cfg = TrainConfig {
                max_steps: 1500,
                eval_every: 100,
                patience: 6,
                max_decode_len: 24,
                alpha: 0.2,
                seed,
                ..TrainConfig::default()
            };
            preset.apply(&mut cfg);
            let lm = if cfg.uses_rl() { LmSource::FromSplit } else { LmSource::None };
            let t0 = Instant::now();
            let e = run_experiment(&split, 1, dims, &cfg, lm).unwrap();
            println!(
                "seed {seed} preset {:8} steps {:4} best {:4} | test bleu {:6.2} ppl {:7.3} acc {:.3} | dev bleu {:6.2} ppl {:7.3} | {:?}",
                preset.name(), e.outcome.steps_run, e.outcome.best_step,
                e.test.bleu, e.test.ppl, e.test.token_acc, e.dev.bleu, e.dev.ppl, t0.elapsed()
            );
        }
    }
}
