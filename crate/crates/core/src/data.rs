//! Vocabulary, corpus handling, labeled/unlabeled split construction, and a
//! deterministic synthetic verbalization task for desk-scale experiments.

use crate::error::{Error, Result};
use crate::util::fnv1a64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token <-> id bijection with reserved ids 0..=3 for PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build from sentences, keeping tokens with frequency >= `min_count`.
    /// Ordering is frequency descending, then lexicographic, so id
    /// assignment is stable across runs.
    pub fn build<'a, I>(sentences: I, min_count: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sent in sentences {
            for tok in sent {
                if RESERVED_TOKENS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Vocab::from_tokens(tokens)
    }

    /// Rebuild from a serialized token list (reserved tokens must lead).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encode tokens; anything outside the vocabulary maps to UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Stable content hash over the ordered token list.
    pub fn hash(&self) -> u64 {
        let joined = self.tokens.join("\x1f");
        fnv1a64(joined.as_bytes())
    }
}

/// Labeled pairs plus unpaired pools. The unlabeled pools keep only one side
/// of their underlying pairs, so no code path can re-pair them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSplit<T> {
    pub labeled: Vec<(Vec<T>, Vec<T>)>,
    pub unlabeled_src: Vec<Vec<T>>,
    pub unlabeled_tgt: Vec<Vec<T>>,
    pub dev: Vec<(Vec<T>, Vec<T>)>,
    pub test: Vec<(Vec<T>, Vec<T>)>,
    pub seed: u64,
}

/// Requested sizes for [`make_split`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSizes {
    pub labeled: usize,
    pub unlabeled_src: usize,
    pub unlabeled_tgt: usize,
    pub dev: usize,
    pub test: usize,
}

/// Corpus indices backing a split; serializable so a split can be recorded
/// next to generated data and replayed exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub unlabeled_src: Vec<usize>,
    pub unlabeled_tgt: Vec<usize>,
    pub seed: u64,
}

/// Seeded disjoint index sampling: every slice is disjoint from every
/// other, including the two unlabeled pools.
pub fn make_split_indices(corpus_len: usize, sizes: SplitSizes, seed: u64) -> Result<SplitIndices> {
    let need = sizes.labeled + sizes.dev + sizes.test + sizes.unlabeled_src + sizes.unlabeled_tgt;
    if need > corpus_len {
        return Err(Error::sizing(format!(
            "corpus has {} examples but the split needs {} \
             (labeled {} + dev {} + test {} + unlabeled_src {} + unlabeled_tgt {})",
            corpus_len,
            need,
            sizes.labeled,
            sizes.dev,
            sizes.test,
            sizes.unlabeled_src,
            sizes.unlabeled_tgt
        )));
    }
    let mut order: Vec<usize> = (0..corpus_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut cursor = order.into_iter();
    let mut take = |n: usize| -> Vec<usize> { cursor.by_ref().take(n).collect() };
    Ok(SplitIndices {
        labeled: take(sizes.labeled),
        dev: take(sizes.dev),
        test: take(sizes.test),
        unlabeled_src: take(sizes.unlabeled_src),
        unlabeled_tgt: take(sizes.unlabeled_tgt),
        seed,
    })
}

/// Materialize a split from recorded indices. The unlabeled pools keep only
/// their respective sides.
pub fn apply_split<T: Clone>(
    corpus: &[(Vec<T>, Vec<T>)],
    indices: &SplitIndices,
) -> Result<DataSplit<T>> {
    let check = |idx: &[usize]| -> Result<()> {
        match idx.iter().find(|&&i| i >= corpus.len()) {
            Some(&bad) => Err(Error::sizing(format!(
                "split index {bad} out of range for corpus of {} examples",
                corpus.len()
            ))),
            None => Ok(()),
        }
    };
    check(&indices.labeled)?;
    check(&indices.dev)?;
    check(&indices.test)?;
    check(&indices.unlabeled_src)?;
    check(&indices.unlabeled_tgt)?;

    let pair =
        |idx: &[usize]| -> Vec<(Vec<T>, Vec<T>)> { idx.iter().map(|&i| corpus[i].clone()).collect() };
    Ok(DataSplit {
        labeled: pair(&indices.labeled),
        dev: pair(&indices.dev),
        test: pair(&indices.test),
        unlabeled_src: indices
            .unlabeled_src
            .iter()
            .map(|&i| corpus[i].0.clone())
            .collect(),
        unlabeled_tgt: indices
            .unlabeled_tgt
            .iter()
            .map(|&i| corpus[i].1.clone())
            .collect(),
        seed: indices.seed,
    })
}

/// Seeded disjoint sampling of labeled/dev/test pairs and unlabeled pools.
pub fn make_split<T: Clone>(
    corpus: &[(Vec<T>, Vec<T>)],
    sizes: SplitSizes,
    seed: u64,
) -> Result<DataSplit<T>> {
    let indices = make_split_indices(corpus.len(), sizes, seed)?;
    apply_split(corpus, &indices)
}

impl DataSplit<String> {
    /// Encode a token-level split into id space with the given vocabularies.
    pub fn encode(&self, src_vocab: &Vocab, tgt_vocab: &Vocab) -> DataSplit<u32> {
        let enc_pair = |pairs: &[(Vec<String>, Vec<String>)]| {
            pairs
                .iter()
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect()
        };
        DataSplit {
            labeled: enc_pair(&self.labeled),
            dev: enc_pair(&self.dev),
            test: enc_pair(&self.test),
            unlabeled_src: self
                .unlabeled_src
                .iter()
                .map(|s| src_vocab.encode(s))
                .collect(),
            unlabeled_tgt: self
                .unlabeled_tgt
                .iter()
                .map(|t| tgt_vocab.encode(t))
                .collect(),
            seed: self.seed,
        }
    }
}

/// Parameters of the synthetic triple-verbalization task. Sources linearize
/// 1..max_triples (entity, relation, value) triples; targets render each
/// triple through a fixed per-relation template. Generation is a pure
/// function of the spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthTaskSpec {
    pub entities: usize,
    pub relations: usize,
    pub values: usize,
    pub max_triples: usize,
    pub grammar: u32,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            entities: 15,
            relations: 6,
            values: 15,
            max_triples: 3,
            grammar: 0,
            size: 3000,
            seed: 7,
        }
    }
}

const SEPARATOR: &str = "sep";
const CONJUNCTION: &str = "and";

/// Relation phrase banks, selected by grammar id and cycled by relation
/// index. Phrases sit between the entity and value tokens.
const GRAMMAR_BANKS: [&[&[&str]]; 2] = [
    &[
        &["has", "size"],
        &["is", "linked", "to"],
        &["was", "built", "in"],
        &["owns"],
        &["lives", "near"],
        &["costs"],
        &["is", "part", "of"],
        &["needs"],
    ],
    &[
        &["holds"],
        &["meets"],
        &["sends", "mail", "to"],
        &["runs", "past"],
        &["stores"],
        &["follows"],
        &["feeds"],
        &["guards"],
    ],
];

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::contract("synthetic task size must be positive"));
        }
        if self.entities == 0 || self.relations == 0 || self.values == 0 {
            return Err(Error::contract(
                "entity, relation, and value vocabulary sizes must be positive",
            ));
        }
        if !(1..=7).contains(&self.max_triples) {
            return Err(Error::contract(format!(
                "max_triples must be in 1..=7, got {}",
                self.max_triples
            )));
        }
        if self.grammar as usize >= GRAMMAR_BANKS.len() {
            return Err(Error::contract(format!(
                "grammar id {} unknown ({} available)",
                self.grammar,
                GRAMMAR_BANKS.len()
            )));
        }
        Ok(())
    }

    fn phrase(&self, relation: usize) -> &'static [&'static str] {
        let bank = GRAMMAR_BANKS[self.grammar as usize];
        bank[relation % bank.len()]
    }

    /// Render the target side for one triple sequence. This is the template
    /// mapping that defines the task's BLEU-100 ceiling.
    pub fn render_target(&self, triples: &[(usize, usize, usize)]) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &(e, r, v)) in triples.iter().enumerate() {
            if i > 0 {
                out.push(CONJUNCTION.to_string());
            }
            out.push(format!("e{e}"));
            out.extend(self.phrase(r).iter().map(|w| w.to_string()));
            out.push(format!("v{v}"));
        }
        out
    }

    pub fn render_source(&self, triples: &[(usize, usize, usize)]) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &(e, r, v)) in triples.iter().enumerate() {
            if i > 0 {
                out.push(SEPARATOR.to_string());
            }
            out.push(format!("e{e}"));
            out.push(format!("r{r}"));
            out.push(format!("v{v}"));
        }
        out
    }

    /// Parse a generated source back into triples. Tests use this to check
    /// that template inversion recovers the reference exactly.
    pub fn parse_source(&self, tokens: &[String]) -> Result<Vec<(usize, usize, usize)>> {
        let mut triples = Vec::new();
        let mut chunk: Vec<&str> = Vec::new();
        for tok in tokens.iter().map(|s| s.as_str()).chain(std::iter::once(SEPARATOR)) {
            if tok == SEPARATOR {
                if chunk.len() != 3 {
                    return Err(Error::format(format!(
                        "malformed triple chunk {chunk:?} in synthetic source"
                    )));
                }
                let parse = |s: &str, prefix: char| -> Result<usize> {
                    s.strip_prefix(prefix)
                        .and_then(|d| d.parse().ok())
                        .ok_or_else(|| Error::format(format!("bad synthetic token {s}")))
                };
                triples.push((
                    parse(chunk[0], 'e')?,
                    parse(chunk[1], 'r')?,
                    parse(chunk[2], 'v')?,
                ));
                chunk.clear();
            } else {
                chunk.push(tok);
            }
        }
        Ok(triples)
    }
}

/// Generate the full parallel corpus for a synthetic task spec.
pub fn generate_synthetic(spec: &SynthTaskSpec) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut corpus = Vec::with_capacity(spec.size);
    for _ in 0..spec.size {
        let k = rng.gen_range(1..=spec.max_triples);
        let entity = rng.gen_range(0..spec.entities);
        // Distinct relations per example keep the example self-consistent.
        let mut relations: Vec<usize> = (0..spec.relations).collect();
        relations.shuffle(&mut rng);
        relations.truncate(k.min(spec.relations));
        let triples: Vec<(usize, usize, usize)> = relations
            .into_iter()
            .map(|r| (entity, r, rng.gen_range(0..spec.values)))
            .collect();
        corpus.push((spec.render_source(&triples), spec.render_target(&triples)));
    }
    Ok(corpus)
}

/// Load a line-aligned parallel corpus from two text files with whitespace
/// tokenization.
pub fn load_parallel(
    path_src: impl AsRef<Path>,
    path_tgt: impl AsRef<Path>,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let src = std::fs::read_to_string(path_src.as_ref())?;
    let tgt = std::fs::read_to_string(path_tgt.as_ref())?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::format(format!(
            "parallel files differ in length: {} source lines vs {} target lines",
            src_lines.len(),
            tgt_lines.len()
        )));
    }
    Ok(src_lines
        .into_iter()
        .zip(tgt_lines)
        .map(|(s, t)| (tokenize(s), tokenize(t)))
        .collect())
}

/// Write a parallel corpus as two line-aligned UTF-8 text files.
pub fn write_parallel(
    corpus: &[(Vec<String>, Vec<String>)],
    path_src: impl AsRef<Path>,
    path_tgt: impl AsRef<Path>,
) -> Result<()> {
    let mut src = String::new();
    let mut tgt = String::new();
    for (s, t) in corpus {
        src.push_str(&s.join(" "));
        src.push('\n');
        tgt.push_str(&t.join(" "));
        tgt.push('\n');
    }
    std::fs::write(path_src.as_ref(), src)?;
    std::fs::write(path_tgt.as_ref(), tgt)?;
    Ok(())
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn vocab_min_count_prunes() {
        let corpus = sents(&["a a b"]);
        let vocab = Vocab::build(corpus.iter().map(|s| s.as_slice()), 2);
        assert!(vocab.id("a").is_some());
        assert!(vocab.id("b").is_none());
        assert_eq!(vocab.encode(&tokenize("b"))[0], UNK_ID);
    }

    #[test]
    fn vocab_ids_are_stable_and_ordered() {
        let corpus = sents(&["b a a c c c"]);
        let build = || {
            let v = Vocab::build(corpus.iter().map(|s| s.as_slice()), 1);
            v.tokens().to_vec()
        };
        assert_eq!(build(), build());
        let v = Vocab::build(corpus.iter().map(|s| s.as_slice()), 1);
        // frequency desc, lexicographic tie-break, after the 4 reserved ids
        assert_eq!(v.token(4), "c");
        assert_eq!(v.token(5), "a");
        assert_eq!(v.token(6), "b");
    }

    #[test]
    fn vocab_roundtrip() {
        let corpus = sents(&["x y z"]);
        let v = Vocab::build(corpus.iter().map(|s| s.as_slice()), 1);
        let sent = tokenize("z y x");
        assert_eq!(v.decode(&v.encode(&sent)), sent);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SynthTaskSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), spec.size);
    }

    #[test]
    fn synthetic_single_triple_is_one_template() {
        let spec = SynthTaskSpec {
            max_triples: 1,
            size: 50,
            ..SynthTaskSpec::default()
        };
        for (src, tgt) in generate_synthetic(&spec).unwrap() {
            assert!(!src.contains(&SEPARATOR.to_string()));
            assert!(!tgt.contains(&CONJUNCTION.to_string()));
        }
    }

    #[test]
    fn synthetic_size_zero_rejected() {
        let spec = SynthTaskSpec {
            size: 0,
            ..SynthTaskSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn template_inversion_recovers_targets() {
        let spec = SynthTaskSpec::default();
        for (src, tgt) in generate_synthetic(&spec).unwrap().into_iter().take(100) {
            let triples = spec.parse_source(&src).unwrap();
            assert_eq!(spec.render_target(&triples), tgt);
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let corpus: Vec<(Vec<String>, Vec<String>)> = (0..30)
            .map(|i| (tokenize(&format!("s{i}")), tokenize(&format!("t{i}"))))
            .collect();
        let sizes = SplitSizes {
            labeled: 5,
            unlabeled_src: 8,
            unlabeled_tgt: 8,
            dev: 4,
            test: 5,
        };
        let split = make_split(&corpus, sizes, 3).unwrap();
        assert_eq!(split.labeled.len(), 5);
        assert_eq!(split.unlabeled_src.len(), 8);
        assert_eq!(split.unlabeled_tgt.len(), 8);
        assert_eq!(split.dev.len(), 4);
        assert_eq!(split.test.len(), 5);

        let mut seen: Vec<String> = Vec::new();
        for (s, _) in split
            .labeled
            .iter()
            .chain(split.dev.iter())
            .chain(split.test.iter())
        {
            seen.push(s[0].clone());
        }
        for s in &split.unlabeled_src {
            seen.push(s[0].clone());
        }
        // unlabeled_tgt keeps target sides; map back via the shared index
        for t in &split.unlabeled_tgt {
            seen.push(t[0].replace('t', "s"));
        }
        let unique: std::collections::HashSet<&String> = seen.iter().collect();
        assert_eq!(unique.len(), seen.len(), "split slices overlap");
    }

    #[test]
    fn split_pure_supervised() {
        let corpus: Vec<(Vec<String>, Vec<String>)> = (0..10)
            .map(|i| (tokenize(&format!("s{i}")), tokenize(&format!("t{i}"))))
            .collect();
        let sizes = SplitSizes {
            labeled: 6,
            unlabeled_src: 0,
            unlabeled_tgt: 0,
            dev: 2,
            test: 2,
        };
        let split = make_split(&corpus, sizes, 0).unwrap();
        assert!(split.unlabeled_src.is_empty());
        assert!(split.unlabeled_tgt.is_empty());
    }

    #[test]
    fn split_insufficient_corpus_reports_requirements() {
        let corpus: Vec<(Vec<String>, Vec<String>)> = vec![(tokenize("a"), tokenize("b")); 3];
        let sizes = SplitSizes {
            labeled: 2,
            unlabeled_src: 2,
            unlabeled_tgt: 0,
            dev: 1,
            test: 1,
        };
        let err = make_split(&corpus, sizes, 0).unwrap_err();
        assert!(err.to_string().contains("needs 6"));
    }

    #[test]
    fn parallel_file_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.src");
        let tgt = dir.path().join("a.tgt");
        let corpus = vec![
            (tokenize("a b"), tokenize("x")),
            (tokenize("c"), tokenize("y z")),
            (tokenize("d"), tokenize("w")),
        ];
        write_parallel(&corpus, &src, &tgt).unwrap();
        assert_eq!(load_parallel(&src, &tgt).unwrap(), corpus);

        // trailing-newline tolerance
        let with_extra = std::fs::read_to_string(&src).unwrap();
        std::fs::write(&src, with_extra.trim_end()).unwrap();
        assert_eq!(load_parallel(&src, &tgt).unwrap(), corpus);

        std::fs::write(&tgt, "only one line\n").unwrap();
        let err = load_parallel(&src, &tgt).unwrap_err();
        assert!(err.to_string().contains("3 source lines vs 1"));
    }

    #[test]
    fn empty_files_give_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("e.src");
        let tgt = dir.path().join("e.tgt");
        std::fs::write(&src, "").unwrap();
        std::fs::write(&tgt, "").unwrap();
        let corpus = load_parallel(&src, &tgt).unwrap();
        assert!(corpus.is_empty());
        let sizes = SplitSizes {
            labeled: 1,
            unlabeled_src: 0,
            unlabeled_tgt: 0,
            dev: 0,
            test: 0,
        };
        assert!(make_split(&corpus, sizes, 0).is_err());
    }
}
