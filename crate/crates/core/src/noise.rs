//! Word-level corruption for denoising auto-encoder training: per word,
//! one categorical draw picks delete, duplicate, swap-with-next, or keep.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Corruption rates. Each word is deleted, duplicated, or swapped with its
/// successor with the given probabilities, otherwise kept.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p_delete: f64,
    pub p_duplicate: f64,
    pub p_swap: f64,
    /// Seed for self-contained use (the CLI `corrupt` command); the training
    /// loop supplies its own RNG streams instead.
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_delete: 0.1,
            p_duplicate: 0.1,
            p_swap: 0.1,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_delete", self.p_delete),
            ("p_duplicate", self.p_duplicate),
            ("p_swap", self.p_swap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.p_delete + self.p_duplicate + self.p_swap > 1.0 {
            return Err(Error::contract(
                "p_delete + p_duplicate + p_swap must not exceed 1",
            ));
        }
        Ok(())
    }
}

/// Outcome counts of the categorical draws inside [`corrupt_with_stats`].
/// Positions consumed by a swap receive no draw and are not counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoiseStats {
    pub deletes: u64,
    pub duplicates: u64,
    pub swaps: u64,
    pub keeps: u64,
}

impl NoiseStats {
    pub fn draws(&self) -> u64 {
        self.deletes + self.duplicates + self.swaps + self.keeps
    }
}

/// Corrupt a token sequence in a single left-to-right pass over the
/// original input. Swap emits next-then-current and consumes the partner
/// position; swap at the final position degrades to keep. A fully deleted
/// sequence falls back to the first original token, so the output is never
/// empty.
pub fn corrupt<T: Clone>(tokens: &[T], cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<Vec<T>> {
    corrupt_with_stats(tokens, cfg, rng).map(|(out, _)| out)
}

/// [`corrupt`] variant that also reports how often each operation fired.
pub fn corrupt_with_stats<T: Clone>(
    tokens: &[T],
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<T>, NoiseStats)> {
    cfg.validate()?;
    if tokens.is_empty() {
        return Err(Error::contract("corrupt: empty input sequence"));
    }
    let mut out = Vec::with_capacity(tokens.len() + 2);
    let mut stats = NoiseStats::default();
    let mut i = 0;
    while i < tokens.len() {
        let u: f64 = rng.gen();
        if u < cfg.p_delete {
            stats.deletes += 1;
            i += 1;
        } else if u < cfg.p_delete + cfg.p_duplicate {
            stats.duplicates += 1;
            out.push(tokens[i].clone());
            out.push(tokens[i].clone());
            i += 1;
        } else if u < cfg.p_delete + cfg.p_duplicate + cfg.p_swap {
            if i + 1 < tokens.len() {
                stats.swaps += 1;
                out.push(tokens[i + 1].clone());
                out.push(tokens[i].clone());
                i += 2;
            } else {
                stats.keeps += 1;
                out.push(tokens[i].clone());
                i += 1;
            }
        } else {
            stats.keeps += 1;
            out.push(tokens[i].clone());
            i += 1;
        }
    }
    if out.is_empty() {
        out.push(tokens[0].clone());
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn zero_probabilities_are_identity() {
        let cfg = NoiseConfig {
            p_delete: 0.0,
            p_duplicate: 0.0,
            p_swap: 0.0,
            seed: 0,
        };
        let mut rng = stream_rng(1, 0);
        let tokens = vec![4, 5, 6, 7];
        assert_eq!(corrupt(&tokens, &cfg, &mut rng).unwrap(), tokens);
    }

    #[test]
    fn full_deletion_falls_back_to_first_token() {
        let cfg = NoiseConfig {
            p_delete: 1.0,
            p_duplicate: 0.0,
            p_swap: 0.0,
            seed: 0,
        };
        let mut rng = stream_rng(2, 0);
        assert_eq!(corrupt(&[9, 8, 7], &cfg, &mut rng).unwrap(), vec![9]);
    }

    #[test]
    fn swap_emits_next_then_current_and_consumes_partner() {
        let cfg = NoiseConfig {
            p_delete: 0.0,
            p_duplicate: 0.0,
            p_swap: 1.0,
            seed: 0,
        };
        let mut rng = stream_rng(3, 0);
        assert_eq!(
            corrupt(&[1, 2, 3, 4], &cfg, &mut rng).unwrap(),
            vec![2, 1, 4, 3]
        );
        // odd length: trailing position degrades to keep
        assert_eq!(corrupt(&[1, 2, 3], &cfg, &mut rng).unwrap(), vec![2, 1, 3]);
    }

    #[test]
    fn invalid_rates_rejected() {
        let cfg = NoiseConfig {
            p_delete: 0.5,
            p_duplicate: 0.4,
            p_swap: 0.2,
            seed: 0,
        };
        let mut rng = stream_rng(4, 0);
        assert!(corrupt(&[1], &cfg, &mut rng).is_err());
    }

    #[test]
    fn empty_input_rejected() {
        let mut rng = stream_rng(5, 0);
        assert!(corrupt::<u32>(&[], &NoiseConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_rates_and_length() {
        let cfg = NoiseConfig::default();
        let mut rng = stream_rng(6, 0);
        let tokens: Vec<u32> = (0..100_000).map(|i| (i % 50) as u32 + 4).collect();
        let (out, stats) = corrupt_with_stats(&tokens, &cfg, &mut rng).unwrap();
        let draws = stats.draws() as f64;
        for (name, n) in [
            ("delete", stats.deletes),
            ("duplicate", stats.duplicates),
            ("swap", stats.swaps),
        ] {
            let freq = n as f64 / draws;
            assert!((freq - 0.1).abs() < 0.005, "{name} frequency {freq}");
        }
        // deletes and duplicates cancel in expectation
        let ratio = out.len() as f64 / tokens.len() as f64;
        assert!((ratio - 1.0).abs() < 0.01, "length ratio {ratio}");
    }

    proptest! {
        #[test]
        fn output_never_empty_and_seeded_deterministic(
            tokens in prop::collection::vec(0u32..100, 1..40),
            seed in 0u64..1000,
        ) {
            let cfg = NoiseConfig::default();
            let a = corrupt(&tokens, &cfg, &mut stream_rng(seed, 0)).unwrap();
            let b = corrupt(&tokens, &cfg, &mut stream_rng(seed, 0)).unwrap();
            prop_assert!(!a.is_empty());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn without_swap_output_tokens_come_from_input(
            tokens in prop::collection::vec(0u32..100, 1..40),
            seed in 0u64..1000,
        ) {
            let cfg = NoiseConfig { p_swap: 0.0, ..NoiseConfig::default() };
            let out = corrupt(&tokens, &cfg, &mut stream_rng(seed, 0)).unwrap();
            for t in out {
                prop_assert!(tokens.contains(&t));
            }
        }
    }
}
