//! `sparta`: extract features, split a corpus, train, grid-search and
//! evaluate multi-task speech classifiers.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparta::eval::Average;
use sparta::model::FeatureInput;
use sparta::SetName;

use config::RunFlags;
use failure::CmdResult;

#[derive(Parser, Debug)]
#[command(name = "sparta", version, about = "Multi-task gender, emotion and dialect classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute MEL or MFCC matrices for every utterance into one cache file.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// mel or mfcc.
        #[arg(long)]
        features: FeatureInput,
        /// Cache file to write.
        #[arg(long)]
        out: PathBuf,
        /// Run configuration; only its `dsp` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Speaker-disjoint train/dev/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split manifest to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a UBM and total-variability model on training-set MFCCs and
    /// write i-vectors for the whole corpus (`--out` names the vector cache).
    Ivector {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 64)]
        components: usize,
        #[arg(long, default_value_t = sparta::ivector::DEFAULT_IVECTOR_DIM)]
        rank: usize,
        #[arg(long, default_value_t = 10)]
        ubm_iters: usize,
        #[arg(long, default_value_t = 5)]
        tv_iters: usize,
        /// Scale every i-vector to unit length.
        #[arg(long)]
        length_norm: bool,
    },
    /// Train an MTL model, or one STL model per task.
    Train {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train every point of a hyperparameter grid and rank them by dev score.
    Grid {
        #[command(flatten)]
        run: RunFlags,
        /// Grid space (JSON lists per hyperparameter).
        #[arg(long)]
        space: PathBuf,
        /// Train only the first N points in enumeration order.
        #[arg(long)]
        budget: Option<usize>,
        /// Train points concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Score stored models per dataset and task.
    Eval {
        #[command(flatten)]
        run: RunFlags,
        /// Directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_set)]
        set: SetName,
        /// macro, or weighted for an extra support-weighted F1 column.
        #[arg(long, default_value = "macro")]
        average: Average,
    },
}

fn parse_set(s: &str) -> Result<SetName, String> {
    SetName::ALL
        .into_iter()
        .find(|set| set.as_str() == s)
        .ok_or_else(|| format!("unknown set {s:?}; expected train, dev or test"))
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Extract {
            manifest,
            features,
            out,
            config,
        } => commands::extract(config.as_deref(), &manifest, features, &out),
        Command::Split {
            manifest,
            ratios,
            seed,
            out,
        } => commands::split(&manifest, &ratios, seed, &out),
        Command::Ivector {
            run,
            components,
            rank,
            ubm_iters,
            tv_iters,
            length_norm,
        } => commands::ivector(
            &run,
            &commands::IvectorOptions {
                components,
                rank,
                ubm_iters,
                tv_iters,
                length_norm,
            },
        ),
        Command::Train { run } => commands::train(&run),
        Command::Grid {
            run,
            space,
            budget,
            parallel,
        } => commands::grid(&run, &space, budget, parallel),
        Command::Eval {
            run,
            checkpoint,
            set,
            average,
        } => commands::eval(&run, &checkpoint, set, average),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code())
        }
    }
}
