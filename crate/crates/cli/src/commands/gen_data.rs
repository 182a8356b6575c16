//! `gen-data`: write a synthetic parallel corpus (and optionally a split
//! manifest plus the LM training text implied by the split).

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use triroute_core::data::{
    generate_synthetic, make_split_indices, write_parallel, SplitSizes, SynthTaskSpec,
};
use triroute_core::util::fnv1a64;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    task: SynthTaskSpec,
    split: Option<SplitSection>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    #[serde(default)]
    labeled: usize,
    #[serde(default)]
    unlabeled_src: usize,
    #[serde(default)]
    unlabeled_tgt: usize,
    #[serde(default)]
    dev: usize,
    #[serde(default)]
    test: usize,
    #[serde(default)]
    seed: u64,
}

pub fn run(spec_path: &Path, out_dir: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))
        .phase(Phase::Config)?;
    let file: GenDataFile = toml::from_str(&text)
        .context("spec does not match the expected schema")
        .phase(Phase::Config)?;
    file.task.validate().phase(Phase::Config)?;

    let corpus = generate_synthetic(&file.task).phase(Phase::Run)?;
    std::fs::create_dir_all(out_dir).phase(Phase::Data)?;
    let src_path = out_dir.join("corpus.src");
    let tgt_path = out_dir.join("corpus.tgt");
    write_parallel(&corpus, &src_path, &tgt_path).phase(Phase::Data)?;

    let src_bytes = std::fs::read(&src_path).phase(Phase::Data)?;
    let tgt_bytes = std::fs::read(&tgt_path).phase(Phase::Data)?;
    let mut manifest = json!({
        "format": "triroute-gendata v1",
        "task": file.task,
        "examples": corpus.len(),
        "corpus_src_hash": format!("{:016x}", fnv1a64(&src_bytes)),
        "corpus_tgt_hash": format!("{:016x}", fnv1a64(&tgt_bytes)),
    });

    if let Some(split) = &file.split {
        let sizes = SplitSizes {
            labeled: split.labeled,
            unlabeled_src: split.unlabeled_src,
            unlabeled_tgt: split.unlabeled_tgt,
            dev: split.dev,
            test: split.test,
        };
        let indices = make_split_indices(corpus.len(), sizes, split.seed).phase(Phase::Data)?;
        let split_json = serde_json::to_string_pretty(&indices)
            .context("serializing split")
            .phase(Phase::Run)?;
        std::fs::write(out_dir.join("split.json"), split_json).phase(Phase::Data)?;

        // target text the trainer may see: labeled targets + Y_U, in index
        // order, ready for `lm-train`
        let mut lm_text = String::new();
        for &i in indices.labeled.iter().chain(&indices.unlabeled_tgt) {
            lm_text.push_str(&corpus[i].1.join(" "));
            lm_text.push('\n');
        }
        std::fs::write(out_dir.join("lm_corpus.tgt"), lm_text).phase(Phase::Data)?;
        manifest["split"] = serde_json::to_value(split).unwrap();
    }

    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .phase(Phase::Data)?;
    println!(
        "wrote {} examples to {}",
        corpus.len(),
        out_dir.display()
    );
    Ok(())
}
