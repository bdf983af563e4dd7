//! `gazework`: one process per command, every output under the run directory.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input, 3 runtime failure.

mod commands;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gazework", version, about = "Point-of-gaze dataset, training and evaluation workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic world: manifest, images and per-session latents.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint; its stored training config is used.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and the baselines on the test split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Optional `[eval]` settings and seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate the baselines alone on the test split.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Leave-one-subject-out training and evaluation.
    Loso {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference checkpoint evaluated on each held-out subject.
        #[arg(long)]
        full: Option<PathBuf>,
    },
    /// Dataset-construction alignment tools.
    Align {
        #[command(subcommand)]
        command: AlignCommand,
    },
    /// Class presence, pixel share and fixation statistics of label maps.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Redraw charts from a metrics log, an error list or a stats report.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AlignCommand {
    /// Time shift between two recordings of the same audio.
    Sync {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        common: AlignArgs,
    },
    /// Fit a homography to point pairs and map gaze points into the scene.
    Transfer {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Manual scene-frame annotations of the same points, for auditing.
        #[arg(long)]
        manual: Option<PathBuf>,
        #[command(flatten)]
        common: AlignArgs,
    },
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; without it the result is only printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
