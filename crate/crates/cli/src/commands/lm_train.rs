//! `lm-train`: build a trigram LM from target-side text files.

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use std::path::{Path, PathBuf};
use triroute_core::data::{tokenize, Vocab};
use triroute_core::lm::train_lm;

pub fn run(corpus_paths: &[PathBuf], out: &Path, min_count: usize) -> CliResult<()> {
    let mut sentences: Vec<Vec<String>> = Vec::new();
    for path in corpus_paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading corpus {}", path.display()))
            .phase(Phase::Data)?;
        sentences.extend(text.lines().map(tokenize));
    }
    let vocab = Vocab::build(sentences.iter().map(|s| s.as_slice()), min_count);
    let corpus: Vec<Vec<u32>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let lm = train_lm(&corpus).phase(Phase::Data)?;
    lm.save(&vocab, out).phase(Phase::Data)?;
    println!(
        "trained trigram LM on {} sentences ({} types) -> {}",
        corpus.len(),
        lm.vocab_size(),
        out.display()
    );
    Ok(())
}
