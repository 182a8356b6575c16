//! Automatic metrics: corpus BLEU, teacher-forced perplexity, and token
//! accuracy.

use crate::data::EOS_ID;
use crate::error::{Error, Result};
use crate::model::{Forward, Seq2SeqModel, Side};
use crate::tensor::Tape;
use std::collections::HashMap;
use std::hash::Hash;

pub const BLEU_MAX_ORDER: usize = 4;

/// Corpus-level BLEU with clipped modified n-gram precisions up to order 4,
/// geometric mean, and a brevity penalty when the hypothesis side is
/// shorter. No smoothing: if any order's precision is zero the score is
/// zero, matching the usual corpus-BLEU tooling.
pub fn bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    bleu_max_order(hypotheses, references, BLEU_MAX_ORDER)
}

pub fn bleu_max_order<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_order: usize,
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::contract("bleu: references must be nonempty"));
    }
    if max_order == 0 {
        return Err(Error::contract("bleu: max_order must be >= 1"));
    }

    let mut correct = vec![0u64; max_order];
    let mut total = vec![0u64; max_order];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;

    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len() as u64;
        ref_len += reference.len() as u64;
        for n in 1..=max_order {
            if hyp.len() < n {
                continue;
            }
            let hyp_counts = ngram_counts(hyp, n);
            let ref_counts = ngram_counts(reference, n);
            total[n - 1] += (hyp.len() + 1 - n) as u64;
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(&gram).copied().unwrap_or(0);
                correct[n - 1] += count.min(clip);
            }
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_order {
        if total[n] == 0 || correct[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (correct[n] as f64 / total[n] as f64).ln();
    }
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / max_order as f64).exp())
}

/// Clipped modified precision counts for a single order. Exposed so the
/// counting behavior is checkable against hand-computed examples.
pub fn modified_precision<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    order: usize,
) -> Result<(u64, u64)> {
    if hypotheses.len() != references.len() {
        return Err(Error::contract("modified_precision: length mismatch"));
    }
    let mut correct = 0u64;
    let mut total = 0u64;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        if hyp.len() < order {
            continue;
        }
        total += (hyp.len() + 1 - order) as u64;
        let ref_counts = ngram_counts(reference, order);
        for (gram, count) in ngram_counts(hyp, order) {
            correct += count.min(ref_counts.get(&gram).copied().unwrap_or(0));
        }
    }
    Ok((correct, total))
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts: HashMap<&[T], u64> = HashMap::new();
    if seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Positionwise match fraction: matches over the min-length alignment,
/// divided by the total reference token count.
pub fn token_accuracy<T: Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "token_accuracy: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = 0u64;
    let mut total = 0u64;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        total += reference.len() as u64;
        matches += hyp.iter().zip(reference).filter(|(h, r)| h == r).count() as u64;
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(matches as f64 / total as f64)
}

/// Mean per-token teacher-forced cross entropy over labeled pairs, in eval
/// mode (dropout off). Targets are scored with a terminating EOS, the same
/// convention the training losses use.
pub fn corpus_cross_entropy(model: &Seq2SeqModel, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("corpus_cross_entropy: empty corpus"));
    }
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for (src, tgt) in pairs {
        let mut tape = Tape::new();
        let mut fwd = Forward::eval(&mut tape);
        let enc = model.encode(&mut fwd, src, Side::Source)?;
        let mut target = tgt.clone();
        target.push(EOS_ID);
        let dists = model.decode_teacher_forced(&mut fwd, &target, &enc)?;
        for (p, &y) in dists.iter().zip(&target) {
            log_sum += p.values()[y as usize].ln();
            count += 1;
        }
    }
    Ok(log_sum * (-1.0 / count as f64))
}

/// Perplexity over labeled pairs: `exp` of the corpus cross entropy.
pub fn perplexity(model: &Seq2SeqModel, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    Ok(corpus_cross_entropy(model, pairs)?.exp())
}

/// The CE -> PPL transformation, natural base.
pub fn perplexity_from_ce(ce: f64) -> f64 {
    ce.exp()
}

/// Greedy-decode every source sequence in eval mode (EOS stripped).
pub fn decode_corpus(
    model: &Seq2SeqModel,
    sources: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    sources.iter().map(|s| model.generate(s, max_len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_corpora_score_100() {
        let hyps = vec![toks("the cat sat on the mat"), toks("a b c d")];
        assert!((bleu(&hyps, &hyps).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn clipped_counts_match_hand_computation() {
        // "the the the the" against "the cat": only one "the" is creditable,
        // so the clipped 1-gram precision is 1/4.
        let hyps = vec![toks("the the the the")];
        let refs = vec![toks("the cat")];
        let (correct, total) = modified_precision(&hyps, &refs, 1).unwrap();
        assert_eq!((correct, total), (1, 4));

        // with a reference containing "the" twice the clip rises to 2/4
        let refs2 = vec![toks("the cat the mat")];
        let (correct, total) = modified_precision(&hyps, &refs2, 1).unwrap();
        assert_eq!((correct, total), (2, 4));
    }

    #[test]
    fn empty_hypothesis_zeroes_the_score() {
        let hyps = vec![vec![], toks("a b")];
        let refs = vec![toks("a"), toks("a b")];
        assert_eq!(bleu(&hyps, &refs).unwrap(), 0.0);
    }

    #[test]
    fn any_zero_precision_zeroes_the_score() {
        // no 4-gram overlap possible: hypotheses shorter than 4 tokens
        let hyps = vec![toks("a b")];
        let refs = vec![toks("a b")];
        assert_eq!(bleu(&hyps, &refs).unwrap(), 0.0);
        assert!((bleu_max_order(&hyps, &refs, 2).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_applies_when_short() {
        let hyps = vec![toks("a b c d")];
        let refs = vec![toks("a b c d e f g h")];
        // precisions are perfect, so the score is 100 * exp(1 - 8/4)
        let expect = 100.0 * (1.0f64 - 2.0).exp();
        assert!((bleu(&hyps, &refs).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_error() {
        let hyps = vec![toks("a")];
        let refs: Vec<Vec<&str>> = vec![];
        assert!(bleu(&hyps, &refs).is_err());
        assert!(token_accuracy(&hyps, &refs).is_err());
    }

    proptest! {
        #[test]
        fn bleu_is_permutation_invariant_and_bounded(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..6);
            let mut pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..n)
                .map(|_| {
                    let len_r = rng.gen_range(4..10);
                    let len_h = rng.gen_range(4..10);
                    let r: Vec<u32> = (0..len_r).map(|_| rng.gen_range(0..6)).collect();
                    let h: Vec<u32> = (0..len_h).map(|_| rng.gen_range(0..6)).collect();
                    (h, r)
                })
                .collect();
            let hyps: Vec<Vec<u32>> = pairs.iter().map(|(h, _)| h.clone()).collect();
            let refs: Vec<Vec<u32>> = pairs.iter().map(|(_, r)| r.clone()).collect();
            let score = bleu(&hyps, &refs).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&score));

            pairs.shuffle(&mut rng);
            let hyps2: Vec<Vec<u32>> = pairs.iter().map(|(h, _)| h.clone()).collect();
            let refs2: Vec<Vec<u32>> = pairs.iter().map(|(_, r)| r.clone()).collect();
            let score2 = bleu(&hyps2, &refs2).unwrap();
            prop_assert!((score - score2).abs() < 1e-9);
        }

        #[test]
        fn self_bleu_is_always_100(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..5);
            let hyps: Vec<Vec<u32>> = (0..n)
                .map(|_| {
                    let len = rng.gen_range(4..12);
                    (0..len).map(|_| rng.gen_range(0..9)).collect()
                })
                .collect();
            prop_assert!((bleu(&hyps, &hyps).unwrap() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn token_accuracy_cases() {
        let a = vec![toks("a b c")];
        assert_eq!(token_accuracy(&a, &a).unwrap(), 1.0);
        let b = vec![toks("x y z")];
        assert_eq!(token_accuracy(&a, &b).unwrap(), 0.0);
        // short hypothesis: missing positions count as misses
        let hyp = vec![toks("a")];
        let r = vec![toks("a b c")];
        assert!((token_accuracy(&hyp, &r).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_has_vocab_sized_perplexity() {
        // zeroing the output projection makes every distribution uniform
        let cfg = ModelConfig {
            src_vocab: 9,
            tgt_vocab: 11,
            embed_dim: 4,
            hidden_dim: 3,
            enc_layers: 1,
            dec_layers: 1,
        };
        let mut model = Seq2SeqModel::new(cfg, 5).unwrap();
        for name in ["dec.out_w", "dec.out_b"] {
            let id = model.params.find(name).unwrap();
            model
                .params
                .value_mut(id)
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let pairs = vec![(vec![4, 5], vec![6, 7, 8]), (vec![5], vec![4])];
        let ppl = perplexity(&model, &pairs).unwrap();
        assert!((ppl - 11.0).abs() < 1e-9, "ppl {ppl}");

        let ce = corpus_cross_entropy(&model, &pairs).unwrap();
        assert!((perplexity_from_ce(ce) - ppl).abs() < 1e-12);
    }

    #[test]
    fn perfect_probability_means_unit_perplexity() {
        assert_eq!(perplexity_from_ce(0.0), 1.0);
        // two tokens at probability 0.5 each -> PPL 2
        let ce = -(0.5f64.ln() + 0.5f64.ln()) / 2.0;
        assert!((perplexity_from_ce(ce) - 2.0).abs() < 1e-12);
    }
}
