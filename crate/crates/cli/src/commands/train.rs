//! `train`: one full training run with reproducible artifacts: manifest,
//! metrics CSV, report JSON, checkpoint, and optionally the trained LM.

use crate::config::{CliOverrides, DataSection, LmChoice, ResolvedRun};
use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use std::time::Instant;
use triroute_core::data::{
    apply_split, generate_synthetic, load_parallel, make_split, DataSplit, SplitIndices,
};
use triroute_core::experiment::{run_experiment, Experiment, LmSource, PairMetrics};
use triroute_core::model::save_checkpoint;
use triroute_core::training::metrics_to_csv;

/// The report JSON written by every run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub preset: Option<String>,
    pub best_dev_step: usize,
    pub best_dev_ce: f64,
    pub steps_run: usize,
    pub route_counts: [usize; 3],
    pub stopped_early: bool,
    pub dev: PairMetrics,
    pub test: PairMetrics,
    pub wall_ms: u128,
}

pub fn run(path: &Path, overrides: &CliOverrides, save_ckpt: bool) -> CliResult<()> {
    let file = crate::config::load_train_file(path, overrides)?;
    let resolved = file.resolve(overrides)?;
    let report = execute(&resolved, save_ckpt)?;
    println!(
        "{}",
        json!({
            "out_dir": resolved.out_dir.display().to_string(),
            "preset": report.preset,
            "seed": report.seed,
            "best_dev_step": report.best_dev_step,
            "test_bleu": report.test.bleu,
            "test_ppl": report.test.ppl,
            "test_token_acc": report.test.token_acc,
        })
    );
    Ok(())
}

/// Load the corpus and split named by a data section.
pub fn load_split(data: &DataSection) -> CliResult<DataSplit<String>> {
    let corpus = match (&data.synth, &data.corpus_src, &data.corpus_tgt) {
        (Some(spec), _, _) => generate_synthetic(spec).phase(Phase::Config)?,
        (None, Some(src), Some(tgt)) => load_parallel(src, tgt).phase(Phase::Data)?,
        _ => unreachable!("validated during config resolution"),
    };
    match &data.split {
        Some(split_path) => {
            let text = std::fs::read_to_string(split_path)
                .with_context(|| format!("reading split {split_path}"))
                .phase(Phase::Data)?;
            let indices: SplitIndices = serde_json::from_str(&text)
                .context("split file does not match the expected schema")
                .phase(Phase::Data)?;
            apply_split(&corpus, &indices).phase(Phase::Data)
        }
        None => make_split(&corpus, data.sizes(), data.split_seed).phase(Phase::Data),
    }
}

/// Run one resolved configuration end to end and write its artifacts.
pub fn execute(run: &ResolvedRun, save_ckpt: bool) -> CliResult<Report> {
    let split = load_split(&run.data)?;

    let lm_text = match &run.lm {
        LmChoice::File(path) => Some(
            std::fs::read_to_string(path)
                .with_context(|| format!("reading LM {}", path.display()))
                .phase(Phase::Data)?,
        ),
        _ => None,
    };
    let lm_source = match &run.lm {
        LmChoice::None => LmSource::None,
        LmChoice::FromSplit { .. } => LmSource::FromSplit,
        LmChoice::File(_) => LmSource::Text(lm_text.as_deref().unwrap()),
    };

    std::fs::create_dir_all(&run.out_dir).phase(Phase::Data)?;
    write_manifest(run).phase(Phase::Run)?;

    let started = Instant::now();
    let experiment = run_experiment(&split, run.data.min_count, run.dims, &run.train, lm_source)
        .phase(Phase::Run)?;
    let wall_ms = started.elapsed().as_millis();

    let report = write_artifacts(run, &experiment, wall_ms, save_ckpt)?;
    Ok(report)
}

fn write_manifest(run: &ResolvedRun) -> anyhow::Result<()> {
    let lm = match &run.lm {
        LmChoice::None => "none".to_string(),
        LmChoice::FromSplit { .. } => "split".to_string(),
        LmChoice::File(p) => format!("file:{}", p.display()),
    };
    let manifest = json!({
        "format": "triroute-manifest v1",
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config_hash": run.config_hash,
        "seed": run.seed,
        "preset": run.preset.map(|p| p.name()),
        "resolved": {
            "data": run.data,
            "model": run.dims,
            "train": run.train,
            "lm": lm,
        },
    });
    std::fs::write(
        run.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn write_artifacts(
    run: &ResolvedRun,
    experiment: &Experiment,
    wall_ms: u128,
    save_ckpt: bool,
) -> CliResult<Report> {
    let Experiment {
        model,
        src_vocab,
        tgt_vocab,
        lm,
        outcome,
        dev,
        test,
    } = experiment;

    std::fs::write(
        run.out_dir.join("metrics.csv"),
        metrics_to_csv(&outcome.metrics),
    )
    .phase(Phase::Data)?;

    if save_ckpt {
        save_checkpoint(model, src_vocab, tgt_vocab, run.out_dir.join("checkpoint.json"))
            .phase(Phase::Data)?;
    }
    if let (LmChoice::FromSplit { save: true }, Some(lm)) = (&run.lm, lm) {
        lm.save(tgt_vocab, run.out_dir.join("lm.txt"))
            .phase(Phase::Data)?;
    }

    let report = Report {
        format: "triroute-report v1".to_string(),
        config_hash: run.config_hash.clone(),
        seed: run.seed,
        preset: run.preset.map(|p| p.name().to_string()),
        best_dev_step: outcome.best_step,
        best_dev_ce: outcome.best_dev_ce,
        steps_run: outcome.steps_run,
        route_counts: outcome.route_counts,
        stopped_early: outcome.stopped_early,
        dev: *dev,
        test: *test,
        wall_ms,
    };
    std::fs::write(
        run.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .phase(Phase::Data)?;
    Ok(report)
}
