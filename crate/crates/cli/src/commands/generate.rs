//! `generate`: greedy-decode a source text file with a trained checkpoint.

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use std::path::Path;
use triroute_core::data::tokenize;
use triroute_core::model::load_checkpoint;

pub fn run(checkpoint: &Path, input: &Path, output: &Path, max_len: usize) -> CliResult<()> {
    let (model, src_vocab, tgt_vocab) = load_checkpoint(checkpoint).phase(Phase::Data)?;
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading source file {}", input.display()))
        .phase(Phase::Data)?;

    let mut out = String::new();
    for line in text.lines() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            return Err(anyhow::anyhow!("empty source line in {}", input.display()))
                .phase(Phase::Data);
        }
        let ids = src_vocab.encode(&tokens);
        let hyp = model.generate(&ids, max_len).phase(Phase::Run)?;
        out.push_str(&tgt_vocab.decode(&hyp).join(" "));
        out.push('\n');
    }
    std::fs::write(output, out).phase(Phase::Data)?;
    println!("wrote hypotheses to {}", output.display());
    Ok(())
}
