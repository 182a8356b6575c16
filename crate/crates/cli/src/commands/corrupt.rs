//! `corrupt`: apply the word-level noise process to a text file, one
//! seeded pass over all lines. Exposes the denoising route's corruption for
//! manual inspection.

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use std::path::Path;
use triroute_core::data::tokenize;
use triroute_core::noise::{corrupt, NoiseConfig};
use triroute_core::util::stream_rng;

pub fn run(input: &Path, output: Option<&Path>, cfg: &NoiseConfig) -> CliResult<()> {
    cfg.validate().phase(Phase::Config)?;
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))
        .phase(Phase::Data)?;
    let mut rng = stream_rng(cfg.seed, 0);
    let mut out = String::new();
    for line in text.lines() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            out.push('\n');
            continue;
        }
        let noisy = corrupt(&tokens, cfg, &mut rng).phase(Phase::Run)?;
        out.push_str(&noisy.join(" "));
        out.push('\n');
    }
    match output {
        Some(path) => {
            std::fs::write(path, out).phase(Phase::Data)?;
            println!("wrote corrupted text to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}
