//! Experiment runner for the triroute text-generation framework.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure.

use clap::{Parser, Subcommand};
use triroute_cli::commands;
use triroute_cli::config::CliOverrides;
use std::path::PathBuf;
use triroute_core::noise::NoiseConfig;

#[derive(Parser)]
#[command(
    name = "triroute",
    version,
    about = "Semi-supervised encoder-decoder text generation: data generation, \
             LM and model training, evaluation, and scale sweeps"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic parallel corpus (and optional split manifest)
    GenData {
        /// TOML task spec with a [task] section and optional [split]
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a trigram language model from target-side text files
    LmTrain {
        /// One or more text files, one sentence per line
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Minimum token frequency kept in the vocabulary
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Run one training configuration end to end
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the preset (r1, r1+lm, r12+lm, r123+lm)
        #[arg(long)]
        preset: Option<String>,
        /// Override the output directory
        #[arg(long)]
        out_dir: Option<String>,
        /// Override any config key, e.g. --set train.max_steps=500
        #[arg(long = "set")]
        set: Vec<String>,
        /// Skip writing the model checkpoint
        #[arg(long)]
        no_checkpoint: bool,
    },
    /// Greedy-decode a source text file with a trained checkpoint
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
    /// Score a hypothesis file against a reference file
    Evaluate {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Also write the metrics JSON to a file
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply the word-level noise process to a text file
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        /// Output file; prints to stdout when omitted
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        p_delete: f64,
        #[arg(long, default_value_t = 0.1)]
        p_duplicate: f64,
        #[arg(long, default_value_t = 0.1)]
        p_swap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train baseline and full presets across data-scale points
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        /// Which pool to scale: labeled or unlabeled
        #[arg(long)]
        axis: String,
        /// Comma-separated scale points, e.g. 50,100,200
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Number of seeds per point
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Comma-separated presets to compare
        #[arg(long, value_delimiter = ',', default_values_t = ["r1".to_string(), "r123+lm".to_string()])]
        presets: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override any base-config key, e.g. --set train.max_steps=500
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData { spec, out_dir } => commands::gen_data::run(&spec, &out_dir),
        Cmd::LmTrain {
            corpus,
            out,
            min_count,
        } => commands::lm_train::run(&corpus, &out, min_count),
        Cmd::Train {
            config,
            seed,
            preset,
            out_dir,
            set,
            no_checkpoint,
        } => {
            let overrides = CliOverrides {
                seed,
                preset,
                out_dir,
                set,
            };
            commands::train::run(&config, &overrides, !no_checkpoint)
        }
        Cmd::Generate {
            checkpoint,
            input,
            output,
            max_len,
        } => commands::generate::run(&checkpoint, &input, &output, max_len),
        Cmd::Evaluate {
            hypotheses,
            references,
            output,
        } => commands::evaluate::run(&hypotheses, &references, output.as_deref()),
        Cmd::Corrupt {
            input,
            output,
            p_delete,
            p_duplicate,
            p_swap,
            seed,
        } => {
            let cfg = NoiseConfig {
                p_delete,
                p_duplicate,
                p_swap,
                seed,
            };
            commands::corrupt::run(&input, output.as_deref(), &cfg)
        }
        Cmd::Sweep {
            config,
            axis,
            values,
            seeds,
            presets,
            out_dir,
            set,
        } => {
            let overrides = CliOverrides {
                set,
                ..CliOverrides::default()
            };
            match commands::sweep::Axis::parse(&axis) {
                Some(axis) => commands::sweep::run(
                    &config, &overrides, axis, &values, seeds, &presets, &out_dir,
                ),
                None => {
                    eprintln!("config error: axis must be \"labeled\" or \"unlabeled\"");
                    std::process::exit(2);
                }
            }
        }
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.phase.exit_code());
    }
}
