//! Interpolated trigram language model over target-side text and the
//! trigram-window reward used by the policy-gradient route.

use crate::data::{Vocab, BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const LAMBDA3: f64 = 0.7;
pub const LAMBDA2: f64 = 0.2;
pub const LAMBDA1: f64 = 0.09;

const FILE_TAG: &str = "triroute-lm v1";

/// Trigram/bigram/unigram counts with fixed-weight interpolation smoothing
/// and a floor probability. Immutable after training; the training loop
/// treats it as a frozen reward source.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NGramModel {
    uni: HashMap<u32, u64>,
    bi: HashMap<(u32, u32), u64>,
    tri: HashMap<(u32, u32, u32), u64>,
    /// Total padded token count (the unigram denominator).
    total: u64,
    lambda3: f64,
    lambda2: f64,
    lambda1: f64,
    /// Floor probability; keeps every trigram probability strictly positive.
    epsilon: f64,
    /// Number of distinct token types observed, sentinels included.
    vocab_size: usize,
}

impl NGramModel {
    /// Empty model with explicit interpolation weights. Every trigram
    /// probability of an empty model is exactly `epsilon`.
    pub fn with_weights(
        lambda3: f64,
        lambda2: f64,
        lambda1: f64,
        epsilon: f64,
        vocab_size: usize,
    ) -> Result<Self> {
        if lambda3 < 0.0 || lambda2 < 0.0 || lambda1 < 0.0 || lambda3 + lambda2 + lambda1 > 1.0 {
            return Err(Error::contract(
                "interpolation weights must be nonnegative and sum to at most 1",
            ));
        }
        if epsilon <= 0.0 {
            return Err(Error::contract("epsilon floor must be positive"));
        }
        Ok(NGramModel {
            uni: HashMap::new(),
            bi: HashMap::new(),
            tri: HashMap::new(),
            total: 0,
            lambda3,
            lambda2,
            lambda1,
            epsilon,
            vocab_size,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambdas(&self) -> (f64, f64, f64) {
        (self.lambda3, self.lambda2, self.lambda1)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn unigram_count(&self, w: u32) -> u64 {
        self.uni.get(&w).copied().unwrap_or(0)
    }

    pub fn bigram_count(&self, w1: u32, w2: u32) -> u64 {
        self.bi.get(&(w1, w2)).copied().unwrap_or(0)
    }

    pub fn trigram_count(&self, w1: u32, w2: u32, w3: u32) -> u64 {
        self.tri.get(&(w1, w2, w3)).copied().unwrap_or(0)
    }

    /// Interpolated trigram probability with a floor:
    /// `l3*c(w1w2w3)/c(w1w2) + l2*c(w2w3)/c(w2) + l1*c(w3)/N + eps`,
    /// any term with a zero denominator contributing 0, clamped to <= 1.
    pub fn trigram_prob(&self, w1: u32, w2: u32, w3: u32) -> f64 {
        let mut p = self.epsilon;
        let c12 = self.bigram_count(w1, w2);
        if c12 > 0 {
            p += self.lambda3 * self.trigram_count(w1, w2, w3) as f64 / c12 as f64;
        }
        let c2 = self.unigram_count(w2);
        if c2 > 0 {
            p += self.lambda2 * self.bigram_count(w2, w3) as f64 / c2 as f64;
        }
        if self.total > 0 {
            p += self.lambda1 * self.unigram_count(w3) as f64 / self.total as f64;
        }
        p.min(1.0)
    }

    /// Per-token rewards over a generated sequence: pad with two BOS in
    /// front and two EOS behind, then give each original position the mean
    /// of the natural logs of the three trigram probabilities covering it.
    pub fn sequence_rewards(&self, ys: &[u32]) -> Result<Vec<f64>> {
        if ys.is_empty() {
            return Err(Error::contract("sequence_rewards: empty sequence"));
        }
        let mut padded = Vec::with_capacity(ys.len() + 4);
        padded.extend([BOS_ID, BOS_ID]);
        padded.extend_from_slice(ys);
        padded.extend([EOS_ID, EOS_ID]);

        let mut rewards = Vec::with_capacity(ys.len());
        for t in 0..ys.len() {
            let i = t + 2; // position of ys[t] in the padded sequence
            let mut acc = 0.0;
            for off in 0..3 {
                let s = i - 2 + off;
                acc += self
                    .trigram_prob(padded[s], padded[s + 1], padded[s + 2])
                    .ln();
            }
            rewards.push(acc / 3.0);
        }
        Ok(rewards)
    }

    /// Serialize as a plain-text listing: header, then `(n-gram, count)`
    /// lines per order, tokens rendered through `vocab` and sorted by id.
    pub fn to_text(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        writeln!(out, "{FILE_TAG}").unwrap();
        writeln!(out, "vocab_size {}", self.vocab_size).unwrap();
        writeln!(out, "vocab_hash {:016x}", vocab.hash()).unwrap();
        writeln!(out, "total_tokens {}", self.total).unwrap();
        writeln!(
            out,
            "lambdas {} {} {}",
            self.lambda3, self.lambda2, self.lambda1
        )
        .unwrap();
        writeln!(out, "epsilon {}", self.epsilon).unwrap();

        let mut unis: Vec<(u32, u64)> = self.uni.iter().map(|(&k, &v)| (k, v)).collect();
        unis.sort_unstable();
        writeln!(out, "\\1-grams: {}", unis.len()).unwrap();
        for (w, c) in unis {
            writeln!(out, "{} {}", vocab.token(w), c).unwrap();
        }

        let mut bis: Vec<((u32, u32), u64)> = self.bi.iter().map(|(&k, &v)| (k, v)).collect();
        bis.sort_unstable();
        writeln!(out, "\\2-grams: {}", bis.len()).unwrap();
        for ((w1, w2), c) in bis {
            writeln!(out, "{} {} {}", vocab.token(w1), vocab.token(w2), c).unwrap();
        }

        let mut tris: Vec<((u32, u32, u32), u64)> =
            self.tri.iter().map(|(&k, &v)| (k, v)).collect();
        tris.sort_unstable();
        writeln!(out, "\\3-grams: {}", tris.len()).unwrap();
        for ((w1, w2, w3), c) in tris {
            writeln!(
                out,
                "{} {} {} {}",
                vocab.token(w1),
                vocab.token(w2),
                vocab.token(w3),
                c
            )
            .unwrap();
        }
        writeln!(out, "\\end\\").unwrap();
        out
    }

    pub fn save(&self, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text(vocab))?;
        Ok(())
    }

    /// Parse the text format back, re-encoding tokens through `vocab`.
    /// The stored vocabulary hash must match `vocab` exactly.
    pub fn from_text(text: &str, vocab: &Vocab) -> Result<Self> {
        let mut lines = text.lines();
        let tag = lines.next().unwrap_or_default();
        if tag != FILE_TAG {
            return Err(Error::format(format!(
                "unrecognized LM file tag {tag:?}, expected {FILE_TAG:?}"
            )));
        }
        let mut header = HashMap::new();
        let mut pending: Option<String> = None;
        for line in lines.by_ref() {
            if line.starts_with('\\') {
                pending = Some(line.to_string());
                break;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::format(format!("bad LM header line {line:?}")))?;
            header.insert(key.to_string(), value.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            header
                .get(k)
                .ok_or_else(|| Error::format(format!("LM header missing {k}")))
        };
        let stored_hash = u64::from_str_radix(get("vocab_hash")?, 16)
            .map_err(|e| Error::format(format!("bad vocab_hash: {e}")))?;
        if stored_hash != vocab.hash() {
            return Err(Error::format(
                "LM vocabulary hash does not match the supplied vocabulary; \
                 retrain the LM on the same corpus and min_count"
                    .to_string(),
            ));
        }
        let lambdas: Vec<f64> = get("lambdas")?
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::format(format!("bad lambda: {e}")))
            })
            .collect::<Result<_>>()?;
        if lambdas.len() != 3 {
            return Err(Error::format("expected 3 lambdas".to_string()));
        }
        let mut model = NGramModel::with_weights(
            lambdas[0],
            lambdas[1],
            lambdas[2],
            get("epsilon")?
                .parse()
                .map_err(|e| Error::format(format!("bad epsilon: {e}")))?,
            get("vocab_size")?
                .parse()
                .map_err(|e| Error::format(format!("bad vocab_size: {e}")))?,
        )?;
        model.total = get("total_tokens")?
            .parse()
            .map_err(|e| Error::format(format!("bad total_tokens: {e}")))?;

        let tok = |s: &str| -> Result<u32> {
            vocab
                .id(s)
                .ok_or_else(|| Error::format(format!("LM token {s:?} not in vocabulary")))
        };
        let mut section = pending;
        while let Some(head) = section.take() {
            let order = match head.split(':').next().unwrap_or_default() {
                "\\1-grams" => 1,
                "\\2-grams" => 2,
                "\\3-grams" => 3,
                "\\end\\" => break,
                other => {
                    return Err(Error::format(format!("unknown LM section {other:?}")));
                }
            };
            for line in lines.by_ref() {
                if line.starts_with('\\') {
                    section = Some(line.to_string());
                    break;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != order + 1 {
                    return Err(Error::format(format!(
                        "expected {} fields in {order}-gram line {line:?}",
                        order + 1
                    )));
                }
                let count: u64 = fields[order]
                    .parse()
                    .map_err(|e| Error::format(format!("bad count in {line:?}: {e}")))?;
                match order {
                    1 => {
                        model.uni.insert(tok(fields[0])?, count);
                    }
                    2 => {
                        model.bi.insert((tok(fields[0])?, tok(fields[1])?), count);
                    }
                    _ => {
                        model
                            .tri
                            .insert((tok(fields[0])?, tok(fields[1])?, tok(fields[2])?), count);
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_text(&text, vocab)
    }
}

/// Train the trigram model: each sentence is padded with two BOS and one
/// EOS sentinel, then all 1/2/3-gram counts over the padded sequence are
/// accumulated. The floor is 0.01 / V with V the number of observed types.
pub fn train_lm(corpus: &[Vec<u32>]) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(Error::contract("train_lm: empty corpus"));
    }
    let mut uni: HashMap<u32, u64> = HashMap::new();
    let mut bi: HashMap<(u32, u32), u64> = HashMap::new();
    let mut tri: HashMap<(u32, u32, u32), u64> = HashMap::new();
    let mut total: u64 = 0;

    for sentence in corpus {
        let mut padded = Vec::with_capacity(sentence.len() + 3);
        padded.extend([BOS_ID, BOS_ID]);
        padded.extend_from_slice(sentence);
        padded.push(EOS_ID);

        total += padded.len() as u64;
        for &w in &padded {
            *uni.entry(w).or_insert(0) += 1;
        }
        for pair in padded.windows(2) {
            *bi.entry((pair[0], pair[1])).or_insert(0) += 1;
        }
        for win in padded.windows(3) {
            *tri.entry((win[0], win[1], win[2])).or_insert(0) += 1;
        }
    }

    let vocab_size = uni.len();
    let epsilon = 0.01 / vocab_size as f64;
    Ok(NGramModel {
        uni,
        bi,
        tri,
        total,
        lambda3: LAMBDA3,
        lambda2: LAMBDA2,
        lambda1: LAMBDA1,
        epsilon,
        vocab_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn toy_vocab(lines: &[&str]) -> Vocab {
        let sents: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
        Vocab::build(sents.iter().map(|s| s.as_slice()), 1)
    }

    fn encode_corpus(vocab: &Vocab, lines: &[&str]) -> Vec<Vec<u32>> {
        lines.iter().map(|l| vocab.encode(&tokenize(l))).collect()
    }

    #[test]
    fn counts_match_hand_enumeration() {
        let vocab = toy_vocab(&["a b"]);
        let corpus = encode_corpus(&vocab, &["a b"]);
        let lm = train_lm(&corpus).unwrap();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        assert_eq!(lm.trigram_count(BOS_ID, BOS_ID, a), 1);
        assert_eq!(lm.trigram_count(BOS_ID, a, b), 1);
        assert_eq!(lm.trigram_count(a, b, EOS_ID), 1);
        assert_eq!(lm.unigram_count(BOS_ID), 2);
        assert_eq!(lm.total_tokens(), 5);
    }

    #[test]
    fn unigram_counts_accumulate() {
        let vocab = toy_vocab(&["a", "a"]);
        let corpus = encode_corpus(&vocab, &["a", "a"]);
        let lm = train_lm(&corpus).unwrap();
        assert_eq!(lm.unigram_count(vocab.id("a").unwrap()), 2);
    }

    #[test]
    fn trigram_counts_never_exceed_prefix_bigram() {
        let vocab = toy_vocab(&["a b c a b", "b c c a"]);
        let corpus = encode_corpus(&vocab, &["a b c a b", "b c c a"]);
        let lm = train_lm(&corpus).unwrap();
        for (&(w1, w2, w3), &c) in &lm.tri {
            assert!(c <= lm.bigram_count(w1, w2), "({w1},{w2},{w3})");
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(train_lm(&[]).is_err());
    }

    #[test]
    fn unseen_trigram_over_unseen_words_floors_at_epsilon() {
        let vocab = toy_vocab(&["a b c"]);
        let corpus = encode_corpus(&vocab, &["a b c"]);
        let lm = train_lm(&corpus).unwrap();
        let p = lm.trigram_prob(900, 901, 902);
        assert_eq!(p, lm.epsilon());
    }

    #[test]
    fn repeated_sentence_puts_full_weight_on_lambda3() {
        let lines = ["a b c", "a b c", "a b c"];
        let vocab = toy_vocab(&lines);
        let corpus = encode_corpus(&vocab, &lines);
        let lm = train_lm(&corpus).unwrap();
        let (a, b, c) = (
            vocab.id("a").unwrap(),
            vocab.id("b").unwrap(),
            vocab.id("c").unwrap(),
        );
        // c(abc)/c(ab) = 1, so PL >= lambda3
        assert!(lm.trigram_prob(a, b, c) >= LAMBDA3);
    }

    #[test]
    fn adding_an_occurrence_never_decreases_probability() {
        let base = ["a b c", "b c a"];
        let more = ["a b c", "b c a", "a b c"];
        let vocab = toy_vocab(&more);
        let lm1 = train_lm(&encode_corpus(&vocab, &base)).unwrap();
        let lm2 = train_lm(&encode_corpus(&vocab, &more)).unwrap();
        let (a, b, c) = (
            vocab.id("a").unwrap(),
            vocab.id("b").unwrap(),
            vocab.id("c").unwrap(),
        );
        assert!(lm2.trigram_prob(a, b, c) >= lm1.trigram_prob(a, b, c));
    }

    #[test]
    fn brute_force_interpolation_oracle() {
        // Independent recomputation of the interpolation formula from raw
        // counts, over every (w1,w2,w3) in a small id cube.
        let lines = ["a b c a", "c b a", "a a b"];
        let vocab = toy_vocab(&lines);
        let corpus = encode_corpus(&vocab, &lines);
        let lm = train_lm(&corpus).unwrap();
        for w1 in 0..8u32 {
            for w2 in 0..8u32 {
                for w3 in 0..8u32 {
                    let mut expect = lm.epsilon();
                    let c12 = lm.bigram_count(w1, w2);
                    if c12 > 0 {
                        expect += LAMBDA3 * lm.trigram_count(w1, w2, w3) as f64 / c12 as f64;
                    }
                    let c2 = lm.unigram_count(w2);
                    if c2 > 0 {
                        expect += LAMBDA2 * lm.bigram_count(w2, w3) as f64 / c2 as f64;
                    }
                    expect += LAMBDA1 * lm.unigram_count(w3) as f64 / lm.total_tokens() as f64;
                    let expect = expect.min(1.0);
                    assert!(
                        (lm.trigram_prob(w1, w2, w3) - expect).abs() < 1e-15,
                        "({w1},{w2},{w3})"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_probability_model_gives_ln_p_rewards() {
        // An empty model floors every trigram at epsilon, so every reward
        // is exactly ln(epsilon).
        let lm = NGramModel::with_weights(0.7, 0.2, 0.09, 0.25, 4).unwrap();
        let rewards = lm.sequence_rewards(&[5, 6, 7]).unwrap();
        for r in rewards {
            assert!((r - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_token_windows_follow_padding() {
        let lines = ["a b", "a a b"];
        let vocab = toy_vocab(&lines);
        let corpus = encode_corpus(&vocab, &lines);
        let lm = train_lm(&corpus).unwrap();
        let a = vocab.id("a").unwrap();
        let r = lm.sequence_rewards(&[a]).unwrap();
        assert_eq!(r.len(), 1);
        let expect = (lm.trigram_prob(BOS_ID, BOS_ID, a).ln()
            + lm.trigram_prob(BOS_ID, a, EOS_ID).ln()
            + lm.trigram_prob(a, EOS_ID, EOS_ID).ln())
            / 3.0;
        assert!((r[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn rewards_are_nonpositive_finite_and_length_preserving() {
        let lines = ["a b c d", "d c b a", "a c"];
        let vocab = toy_vocab(&lines);
        let corpus = encode_corpus(&vocab, &lines);
        let lm = train_lm(&corpus).unwrap();
        let ys = vocab.encode(&tokenize("a b a d c"));
        let rewards = lm.sequence_rewards(&ys).unwrap();
        assert_eq!(rewards.len(), ys.len());
        for r in rewards {
            assert!(r <= 0.0 && r.is_finite());
        }
    }

    #[test]
    fn deterministic_retraining_and_text_roundtrip() {
        let lines = ["a b c", "c b a", "b b"];
        let vocab = toy_vocab(&lines);
        let corpus = encode_corpus(&vocab, &lines);
        let lm1 = train_lm(&corpus).unwrap();
        let lm2 = train_lm(&corpus).unwrap();
        assert_eq!(lm1.to_text(&vocab), lm2.to_text(&vocab));

        let parsed = NGramModel::from_text(&lm1.to_text(&vocab), &vocab).unwrap();
        assert_eq!(parsed.to_text(&vocab), lm1.to_text(&vocab));
        let (a, b, c) = (
            vocab.id("a").unwrap(),
            vocab.id("b").unwrap(),
            vocab.id("c").unwrap(),
        );
        assert_eq!(parsed.trigram_prob(a, b, c), lm1.trigram_prob(a, b, c));
    }

    #[test]
    fn vocab_hash_mismatch_is_rejected() {
        let lines = ["a b"];
        let vocab = toy_vocab(&lines);
        let lm = train_lm(&encode_corpus(&vocab, &lines)).unwrap();
        let other = toy_vocab(&["x y z"]);
        assert!(NGramModel::from_text(&lm.to_text(&vocab), &other).is_err());
    }
}
