//! Train-run configuration: TOML schema, `--set` overrides, preset
//! resolution, and the config hash recorded in manifests.
//!
//! Precedence, highest first: dedicated CLI flags, `--set` key overrides,
//! explicit config-file fields, the named preset, built-in defaults.

use crate::phase::{CliResult, Phase, PhasedExt};
use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use triroute_core::data::{SplitSizes, SynthTaskSpec};
use triroute_core::experiment::ModelDims;
use triroute_core::noise::NoiseConfig;
use triroute_core::training::{Preset, TrainConfig};
use triroute_core::util::fnv1a64;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub lm: LmSection,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Inline synthetic-task generation.
    pub synth: Option<SynthTaskSpec>,
    /// Or a parallel corpus on disk.
    pub corpus_src: Option<String>,
    pub corpus_tgt: Option<String>,
    /// Optional split-index file produced by `gen-data`; replaces the
    /// size/seed fields below.
    pub split: Option<String>,
    #[serde(default)]
    pub labeled: usize,
    #[serde(default)]
    pub unlabeled_src: usize,
    #[serde(default)]
    pub unlabeled_tgt: usize,
    #[serde(default)]
    pub dev: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_split_seed() -> u64 {
    11
}

fn default_min_count() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub enc_layers: usize,
    #[serde(default = "default_layers")]
    pub dec_layers: usize,
}

fn default_embed_dim() -> usize {
    ModelDims::default().embed_dim
}

fn default_hidden_dim() -> usize {
    ModelDims::default().hidden_dim
}

fn default_layers() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            enc_layers: default_layers(),
            dec_layers: default_layers(),
        }
    }
}

impl ModelSection {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
        }
    }
}

/// Optional overrides over the training defaults (and over the preset).
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: Option<f64>,
    pub all_use_rl: Option<bool>,
    pub route_weights: Option<[f64; 3]>,
    pub learning_rate: Option<f64>,
    pub clip_norm: Option<f64>,
    pub dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_steps: Option<usize>,
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
    pub max_decode_len: Option<usize>,
    pub rl_baseline: Option<bool>,
    pub rollout_dropout: Option<bool>,
    pub noise: Option<NoiseConfig>,
    pub target_dev_token_acc: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    /// "split" trains the trigram LM on the split's target text; "file"
    /// loads `path`; "none" disables the LM.
    pub source: String,
    pub path: Option<String>,
    /// Write the trained LM next to the other run outputs.
    #[serde(default = "default_true")]
    pub save: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            source: "split".to_string(),
            path: None,
            save: true,
        }
    }
}

/// How the run obtains its reward LM, resolved and validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LmChoice {
    None,
    FromSplit { save: bool },
    File(PathBuf),
}

/// A fully resolved run description.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub seed: u64,
    pub preset: Option<Preset>,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub lm: LmChoice,
    pub config_hash: String,
}

/// Dedicated CLI flags that override config-file fields.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub out_dir: Option<String>,
    pub set: Vec<String>,
}

/// Load a TOML file, apply `--set key=value` overrides textually, and
/// parse into the typed schema.
pub fn load_train_file(path: &Path, overrides: &CliOverrides) -> CliResult<TrainFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .phase(Phase::Config)?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing TOML in {}", path.display()))
        .phase(Phase::Config)?;
    for entry in &overrides.set {
        apply_set(&mut table, entry).phase(Phase::Config)?;
    }
    let file: TrainFile = table
        .try_into()
        .context("config does not match the expected schema")
        .phase(Phase::Config)?;
    Ok(file)
}

/// Apply one `dotted.path=value` override to a TOML table. Values parse as
/// TOML (so `true`, `3`, `0.5`, `[1,0,0]` work); anything unparseable is
/// taken as a string.
fn apply_set(table: &mut toml::Table, entry: &str) -> anyhow::Result<()> {
    let (path, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got {entry:?}"))?;
    let value: toml::Value = raw_value
        .parse()
        .unwrap_or_else(|_| toml::Value::String(raw_value.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set key {path:?} has an empty segment");
    }
    let mut current = table;
    for key in &keys[..keys.len() - 1] {
        current = current
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set path {path:?} crosses a non-table value"))?;
    }
    current.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl TrainFile {
    /// Resolve precedence into a concrete run plan and validate it.
    pub fn resolve(&self, overrides: &CliOverrides) -> CliResult<ResolvedRun> {
        let preset_name = overrides.preset.clone().or_else(|| self.preset.clone());
        let preset = match &preset_name {
            Some(name) => Some(
                Preset::parse(name)
                    .ok_or_else(|| {
                        anyhow!(
                            "unknown preset {name:?}; expected one of r1, r1+lm, r12+lm, r123+lm"
                        )
                    })
                    .phase(Phase::Config)?,
            ),
            None => None,
        };
        let seed = overrides.seed.or(self.seed).unwrap_or(0);
        let out_dir = overrides
            .out_dir
            .clone()
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| anyhow!("out_dir missing: set it in the config or pass --out-dir"))
            .phase(Phase::Config)?;

        let mut train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        if let Some(p) = preset {
            p.apply(&mut train);
        }
        let t = &self.train;
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = t.$field {
                    train.$field = v;
                }
            };
        }
        take!(alpha);
        take!(all_use_rl);
        take!(route_weights);
        take!(learning_rate);
        take!(clip_norm);
        take!(dropout);
        take!(batch_size);
        take!(max_steps);
        take!(eval_every);
        take!(patience);
        take!(max_decode_len);
        take!(rl_baseline);
        take!(rollout_dropout);
        if let Some(n) = t.noise {
            train.noise = n;
        }
        if let Some(v) = t.target_dev_token_acc {
            train.target_dev_token_acc = Some(v);
        }
        train.validate().phase(Phase::Config)?;

        let lm = match self.lm.source.as_str() {
            "none" => LmChoice::None,
            "split" => LmChoice::FromSplit { save: self.lm.save },
            "file" => {
                let path = self
                    .lm
                    .path
                    .as_ref()
                    .ok_or_else(|| anyhow!("lm.source = \"file\" requires lm.path"))
                    .phase(Phase::Config)?;
                LmChoice::File(PathBuf::from(path))
            }
            other => {
                return Err(anyhow!(
                    "lm.source must be one of none/split/file, got {other:?}"
                ))
                .phase(Phase::Config)
            }
        };
        if train.uses_rl() && lm == LmChoice::None {
            return Err(anyhow!(
                "the resolved configuration enables RL (preset {:?}) but lm.source is \"none\"",
                preset_name
            ))
            .phase(Phase::Config);
        }

        // basic data-section sanity (sizes themselves are checked against
        // the corpus later)
        let d = &self.data;
        let from_synth = d.synth.is_some();
        let from_files = d.corpus_src.is_some() || d.corpus_tgt.is_some();
        if from_synth == from_files {
            return Err(anyhow!(
                "data section must specify exactly one of `synth` or `corpus_src`+`corpus_tgt`"
            ))
            .phase(Phase::Config);
        }
        if from_files && (d.corpus_src.is_none() || d.corpus_tgt.is_none()) {
            return Err(anyhow!("both corpus_src and corpus_tgt are required"))
                .phase(Phase::Config);
        }
        if d.split.is_none() && (d.dev == 0 || d.test == 0) {
            return Err(anyhow!("data.dev and data.test must be positive"))
                .phase(Phase::Config);
        }

        let resolved = ResolvedRun {
            seed,
            preset,
            out_dir: PathBuf::from(out_dir),
            data: self.data.clone(),
            dims: self.model.dims(),
            train,
            lm,
            config_hash: String::new(),
        };
        let hash = config_hash(&resolved).phase(Phase::Config)?;
        Ok(ResolvedRun {
            config_hash: hash,
            ..resolved
        })
    }
}

impl DataSection {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            labeled: self.labeled,
            unlabeled_src: self.unlabeled_src,
            unlabeled_tgt: self.unlabeled_tgt,
            dev: self.dev,
            test: self.test,
        }
    }
}

/// Canonical serialization of everything that determines the run, hashed.
#[derive(Serialize)]
struct HashableConfig<'a> {
    seed: u64,
    preset: Option<&'static str>,
    data: &'a DataSection,
    dims: &'a ModelDims,
    train: &'a TrainConfig,
    lm: String,
}

pub fn config_hash(run: &ResolvedRun) -> anyhow::Result<String> {
    let lm = match &run.lm {
        LmChoice::None => "none".to_string(),
        LmChoice::FromSplit { .. } => "split".to_string(),
        LmChoice::File(p) => format!("file:{}", p.display()),
    };
    let hashable = HashableConfig {
        seed: run.seed,
        preset: run.preset.map(|p| p.name()),
        data: &run.data,
        dims: &run.dims,
        train: &run.train,
        lm,
    };
    let canonical = toml::to_string(&hashable).context("serializing config for hashing")?;
    Ok(format!("{:016x}", fnv1a64(canonical.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
preset = "r123+lm"
seed = 5
out_dir = "runs/x"

[data]
synth = { entities = 5, relations = 3, values = 5, max_triples = 2, grammar = 0, size = 200, seed = 1 }
labeled = 50
unlabeled_src = 40
unlabeled_tgt = 40
dev = 10
test = 10
"#
        .to_string()
    }

    fn parse(text: &str, overrides: &CliOverrides) -> CliResult<ResolvedRun> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        std::fs::write(&path, text).unwrap();
        load_train_file(&path, overrides)?.resolve(overrides)
    }

    #[test]
    fn preset_sets_routes_and_rl() {
        let run = parse(&base_toml(), &CliOverrides::default()).unwrap();
        assert_eq!(run.preset, Some(Preset::R123Lm));
        assert!(run.train.all_use_rl);
        assert!((run.train.route_weights[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(run.seed, 5);
    }

    #[test]
    fn explicit_fields_beat_preset_and_cli_beats_file() {
        let text = format!("{}\n[train]\nall_use_rl = false\n", base_toml());
        let run = parse(&text, &CliOverrides::default()).unwrap();
        assert!(!run.train.all_use_rl);

        let overrides = CliOverrides {
            seed: Some(99),
            set: vec!["train.max_steps=7".to_string()],
            ..CliOverrides::default()
        };
        let run = parse(&base_toml(), &overrides).unwrap();
        assert_eq!(run.seed, 99);
        assert_eq!(run.train.max_steps, 7);
    }

    #[test]
    fn rl_preset_without_lm_is_config_error() {
        let text = format!("{}\n[lm]\nsource = \"none\"\n", base_toml());
        let err = parse(&text, &CliOverrides::default()).unwrap_err();
        assert_eq!(err.phase, Phase::Config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nbogus_key = 1\n", base_toml());
        assert!(parse(&text, &CliOverrides::default()).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse(&base_toml(), &CliOverrides::default()).unwrap();
        let b = parse(&base_toml(), &CliOverrides::default()).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = parse(
            &base_toml(),
            &CliOverrides {
                seed: Some(6),
                ..CliOverrides::default()
            },
        )
        .unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }
}
