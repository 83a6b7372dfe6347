//! `fuseid`: train, enroll, verify, identify and evaluate a face + palmprint
//! fusion system.
//!
//! Exit codes: 0 success or genuine, 1 impostor, 2 error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{EnrollSource, EvalSource, SynthOptions};
use config::{ConfigArgs, RunConfig};
use fuseid_core::evaluation::SplitPolicy;

#[derive(Debug, Parser)]
#[command(
    name = "fuseid",
    version,
    about = "Face and palmprint score-fusion biometrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of synthetic subjects.
    #[arg(long, default_value_t = 40)]
    subjects: usize,
    /// Samples per subject and modality.
    #[arg(long, default_value_t = 6)]
    samples: usize,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.08)]
    sigma: f64,
    /// Prototype contrast in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    contrast: f64,
    /// Use one noise field for both modalities of a sample.
    #[arg(long)]
    shared_noise: bool,
}

impl SynthArgs {
    fn options(&self) -> SynthOptions {
        SynthOptions {
            subjects: self.subjects,
            samples: self.samples,
            sigma: self.sigma,
            contrast: self.contrast,
            shared_noise: self.shared_noise,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset (PGM files plus manifest.csv).
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train face and palm subspace models from two image directories.
    Train {
        #[arg(long, value_name = "DIR")]
        face_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        palm_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Add subjects to the gallery, from a manifest or one subject's images.
    Enroll {
        /// Manifest file or dataset directory; enrolls every subject in it.
        #[arg(long, value_name = "PATH", conflicts_with = "id")]
        manifest: Option<PathBuf>,
        /// Enroll only each subject's lowest N sample indices.
        #[arg(long, value_name = "N", requires = "manifest")]
        per_subject: Option<usize>,
        /// Subject id for a single enrollment.
        #[arg(long, requires = "face")]
        id: Option<String>,
        #[arg(long, value_name = "IMG", num_args = 1..)]
        face: Vec<PathBuf>,
        #[arg(long, value_name = "IMG", num_args = 1..)]
        palm: Vec<PathBuf>,
        /// Enrollment time in Unix seconds (default: now).
        #[arg(long, value_name = "SECS")]
        enrolled_at: Option<i64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// 1:1 check of a face/palm probe pair against a claimed identity.
    Verify {
        #[arg(long, value_name = "IMG")]
        face: PathBuf,
        #[arg(long, value_name = "IMG")]
        palm: PathBuf,
        /// Claimed subject id.
        #[arg(long)]
        claim: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// 1:N search of a face/palm probe pair over the gallery.
    Identify {
        #[arg(long, value_name = "IMG")]
        face: PathBuf,
        #[arg(long, value_name = "IMG")]
        palm: PathBuf,
        /// Number of candidates to print.
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fuse two similarity scores and decide, without any images.
    Fuse {
        #[arg(long)]
        face_score: f64,
        #[arg(long)]
        palm_score: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the train/tune/test protocol and write ROC reports plus a summary table.
    Evaluate {
        /// Manifest file or dataset directory.
        #[arg(
            long,
            value_name = "PATH",
            required_unless_present = "synth",
            conflicts_with = "synth"
        )]
        dataset: Option<PathBuf>,
        /// Evaluate on a freshly generated synthetic dataset.
        #[arg(long)]
        synth: bool,
        #[command(flatten)]
        synth_args: SynthArgs,
        /// Per-subject training samples (default: half).
        #[arg(long, requires = "tune")]
        train: Option<usize>,
        /// Per-subject tuning samples.
        #[arg(long, requires = "train")]
        tune: Option<usize>,
        /// Directory for face_roc.csv, palm_roc.csv, fused_roc.csv and summary.txt.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also save the tuned models and policy.
        #[arg(long)]
        save: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let config = RunConfig::resolve(args)?;
    print!("{}", config.echo());
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { out, synth, config } => {
            commands::synth(&out, &synth.options(), &resolve(&config)?)
        }
        Command::Train {
            face_dir,
            palm_dir,
            config,
        } => commands::train(&face_dir, &palm_dir, &resolve(&config)?),
        Command::Enroll {
            manifest,
            per_subject,
            id,
            face,
            palm,
            enrolled_at,
            config,
        } => {
            let source = EnrollSource {
                manifest,
                per_subject,
                id,
                face,
                palm,
            };
            commands::enroll(&source, enrolled_at, &resolve(&config)?)
        }
        Command::Verify {
            face,
            palm,
            claim,
            config,
        } => commands::verify(&face, &palm, &claim, &resolve(&config)?),
        Command::Identify {
            face,
            palm,
            top,
            config,
        } => commands::identify(&face, &palm, top, &resolve(&config)?),
        Command::Fuse {
            face_score,
            palm_score,
            config,
        } => commands::fuse(face_score, palm_score, &resolve(&config)?),
        Command::Evaluate {
            dataset,
            synth,
            synth_args,
            train,
            tune,
            out,
            save,
            config,
        } => {
            let source = match dataset {
                Some(path) if !synth => EvalSource::Manifest(path),
                _ => EvalSource::Synth(synth_args.options()),
            };
            let split = match (train, tune) {
                (Some(train), Some(tune)) => SplitPolicy::Counts { train, tune },
                _ => SplitPolicy::Halves,
            };
            commands::evaluate(&source, split, &out, save, &resolve(&config)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
