//! `evaluate`: score a hypothesis file against a reference file.

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use serde_json::json;
use std::path::Path;
use triroute_core::data::tokenize;
use triroute_core::eval::{bleu, token_accuracy};

pub fn run(hyp_path: &Path, ref_path: &Path, output: Option<&Path>) -> CliResult<()> {
    let read = |p: &Path| -> CliResult<Vec<Vec<String>>> {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .phase(Phase::Data)?;
        Ok(text.lines().map(tokenize).collect())
    };
    let hyps = read(hyp_path)?;
    let refs = read(ref_path)?;
    let metrics = json!({
        "format": "triroute-metrics v1",
        "count": hyps.len(),
        "bleu": bleu(&hyps, &refs).phase(Phase::Data)?,
        "token_accuracy": token_accuracy(&hyps, &refs).phase(Phase::Data)?,
    });
    let rendered = serde_json::to_string_pretty(&metrics).unwrap();
    if let Some(path) = output {
        std::fs::write(path, &rendered).phase(Phase::Data)?;
    }
    println!("{rendered}");
    Ok(())
}
