//! `sweep`: train the baseline and full presets across labeled- or
//! unlabeled-scale points, several seeds each, and emit a combined CSV plus
//! SVG line plots.

use crate::config::{CliOverrides, LmChoice};
use crate::phase::{CliResult, Phase, PhasedExt};
use crate::svg::{line_plot, Series};
use anyhow::anyhow;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;
use triroute_core::training::Preset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Labeled,
    Unlabeled,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "labeled" => Some(Axis::Labeled),
            "unlabeled" => Some(Axis::Unlabeled),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Labeled => "labeled",
            Axis::Unlabeled => "unlabeled",
        }
    }
}

/// One row of the combined CSV: one (preset, scale, seed) run.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub preset: String,
    pub axis: String,
    pub scale: usize,
    pub seed: u64,
    pub test_bleu: f64,
    pub test_ppl: f64,
    pub dev_bleu: f64,
    pub dev_ppl: f64,
    pub dev_token_acc: f64,
    pub best_step: usize,
    pub steps_run: usize,
}

pub const SWEEP_CSV_HEADER: &str =
    "preset,axis,scale,seed,test_bleu,test_ppl,dev_bleu,dev_ppl,dev_token_acc,best_step,steps_run";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.preset,
            self.axis,
            self.scale,
            self.seed,
            self.test_bleu,
            self.test_ppl,
            self.dev_bleu,
            self.dev_ppl,
            self.dev_token_acc,
            self.best_step,
            self.steps_run
        )
    }

    pub fn from_csv_line(line: &str) -> anyhow::Result<SweepRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(anyhow!("expected 11 CSV fields, got {}", fields.len()));
        }
        Ok(SweepRow {
            preset: fields[0].to_string(),
            axis: fields[1].to_string(),
            scale: fields[2].parse()?,
            seed: fields[3].parse()?,
            test_bleu: fields[4].parse()?,
            test_ppl: fields[5].parse()?,
            dev_bleu: fields[6].parse()?,
            dev_ppl: fields[7].parse()?,
            dev_token_acc: fields[8].parse()?,
            best_step: fields[9].parse()?,
            steps_run: fields[10].parse()?,
        })
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

pub fn rows_from_csv(text: &str) -> anyhow::Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_CSV_HEADER => {}
        other => return Err(anyhow!("bad sweep CSV header {other:?}")),
    }
    lines.map(SweepRow::from_csv_line).collect()
}

/// Render the two sweep plots (mean over seeds per preset) from CSV rows.
/// Pure function of the rows, so plots regenerate identically.
pub fn render_plots(rows: &[SweepRow], axis_label: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (file, title, y_label, pick) in [
        (
            "sweep_test_bleu.svg",
            "test BLEU vs scale",
            "mean test BLEU",
            (|r: &SweepRow| r.test_bleu) as fn(&SweepRow) -> f64,
        ),
        (
            "sweep_dev_ppl.svg",
            "dev PPL vs scale",
            "mean dev PPL",
            (|r: &SweepRow| r.dev_ppl) as fn(&SweepRow) -> f64,
        ),
    ] {
        // preset -> scale -> values over seeds
        let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for row in rows {
            grouped
                .entry(row.preset.clone())
                .or_default()
                .entry(row.scale)
                .or_default()
                .push(pick(row));
        }
        let series: Vec<Series> = grouped
            .into_iter()
            .map(|(preset, by_scale)| Series {
                label: preset,
                points: by_scale
                    .into_iter()
                    .map(|(scale, vals)| {
                        (scale as f64, vals.iter().sum::<f64>() / vals.len() as f64)
                    })
                    .collect(),
            })
            .collect();
        out.push((
            file.to_string(),
            line_plot(title, axis_label, y_label, &series),
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    config_path: &Path,
    overrides: &CliOverrides,
    axis: Axis,
    values: &[usize],
    n_seeds: u64,
    preset_names: &[String],
    out_dir: &Path,
) -> CliResult<()> {
    if values.is_empty() {
        return Err(anyhow!("sweep needs at least one scale value")).phase(Phase::Config);
    }
    if n_seeds == 0 {
        return Err(anyhow!("sweep needs at least one seed")).phase(Phase::Config);
    }
    let presets: Vec<Preset> = preset_names
        .iter()
        .map(|name| {
            Preset::parse(name).ok_or_else(|| anyhow!("unknown preset {name:?} in sweep"))
        })
        .collect::<anyhow::Result<_>>()
        .phase(Phase::Config)?;

    let base = crate::config::load_train_file(config_path, overrides)?;
    if base.data.split.is_some() {
        return Err(anyhow!(
            "sweeps resample splits per scale point; remove data.split from the base config"
        ))
        .phase(Phase::Config);
    }
    let base_seed = overrides.seed.or(base.seed).unwrap_or(0);
    let base_split_seed = base.data.split_seed;

    // resolve every point up front so configuration errors surface before
    // any training starts
    let mut points = Vec::new();
    for &preset in &presets {
        for &scale in values {
            for s in 0..n_seeds {
                let mut file = base.clone();
                match axis {
                    Axis::Labeled => file.data.labeled = scale,
                    Axis::Unlabeled => {
                        file.data.unlabeled_src = scale;
                        file.data.unlabeled_tgt = scale;
                    }
                }
                file.data.split_seed = base_split_seed.wrapping_add(s);
                let point_overrides = CliOverrides {
                    seed: Some(base_seed.wrapping_add(s)),
                    preset: Some(preset.name().to_string()),
                    out_dir: Some(
                        out_dir
                            .join("runs")
                            .join(format!("{}-{}{}-s{}", preset.name(), axis.name(), scale, s))
                            .display()
                            .to_string(),
                    ),
                    set: Vec::new(),
                };
                let resolved = file.resolve(&point_overrides)?;
                if matches!(resolved.lm, LmChoice::File(_)) {
                    return Err(anyhow!(
                        "sweeps retrain the LM per split; use lm.source = \"split\" or \"none\""
                    ))
                    .phase(Phase::Config);
                }
                points.push((preset, scale, s, resolved));
            }
        }
    }

    std::fs::create_dir_all(out_dir).phase(Phase::Data)?;
    let results: Vec<CliResult<SweepRow>> = points
        .par_iter()
        .map(|(preset, scale, s, resolved)| {
            let report = super::train::execute(resolved, false)?;
            Ok(SweepRow {
                preset: preset.name().to_string(),
                axis: axis.name().to_string(),
                scale: *scale,
                seed: resolved.seed,
                test_bleu: report.test.bleu,
                test_ppl: report.test.ppl,
                dev_bleu: report.dev.bleu,
                dev_ppl: report.dev.ppl,
                dev_token_acc: report.dev.token_acc,
                best_step: report.best_dev_step,
                steps_run: report.steps_run,
            })
            .map(|row| {
                log::info!(
                    "sweep point done: {} scale {} seed {}",
                    preset.name(),
                    scale,
                    s
                );
                row
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| {
        (&a.preset, a.scale, a.seed).cmp(&(&b.preset, b.scale, b.seed))
    });

    let csv = rows_to_csv(&rows);
    std::fs::write(out_dir.join("combined.csv"), &csv).phase(Phase::Data)?;
    let axis_label = format!("{} examples", axis.name());
    for (name, content) in render_plots(&rows, &axis_label) {
        std::fs::write(out_dir.join(name), content).phase(Phase::Data)?;
    }
    println!(
        "sweep complete: {} runs, combined CSV and plots in {}",
        rows.len(),
        out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_and_plot_determinism() {
        let rows = vec![
            SweepRow {
                preset: "r1".into(),
                axis: "labeled".into(),
                scale: 50,
                seed: 0,
                test_bleu: 11.5,
                test_ppl: 30.25,
                dev_bleu: 12.0,
                dev_ppl: 28.5,
                dev_token_acc: 0.41,
                best_step: 400,
                steps_run: 600,
            },
            SweepRow {
                preset: "r123+lm".into(),
                axis: "labeled".into(),
                scale: 50,
                seed: 0,
                test_bleu: 14.25,
                test_ppl: 22.0,
                dev_bleu: 15.0,
                dev_ppl: 21.0,
                dev_token_acc: 0.52,
                best_step: 500,
                steps_run: 700,
            },
        ];
        let csv = rows_to_csv(&rows);
        let parsed = rows_from_csv(&csv).unwrap();
        assert_eq!(rows_to_csv(&parsed), csv);

        let a = render_plots(&rows, "labeled examples");
        let b = render_plots(&parsed, "labeled examples");
        assert_eq!(a, b);
    }
}
