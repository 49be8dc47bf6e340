//! `retarget`: analyze, convert, run and compare computation graphs.
//!
//! Exit codes: 0 success, 1 incompatible model or failed comparison,
//! 2 bad usage or unreadable input, 3 internal error.

mod commands;
mod io;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use retarget_core::harness::{HarnessError, DEFAULT_TOLERANCE, DEFAULT_TRIALS};
use retarget_core::interpreter::RunError;
use retarget_core::ir::IrError;
use retarget_core::profiles::ProfileError;
use retarget_core::rewriter::RewriteError;

#[derive(Parser)]
#[command(
    name = "retarget",
    version,
    about = "Check and convert computation graphs for constrained targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report which nodes a target cannot run and how each would be handled.
    Analyze(AnalyzeArgs),
    /// Rewrite and split a model so it runs on a target.
    Convert(ConvertArgs),
    /// Execute a model with the reference interpreter.
    Run(RunArgs),
    /// Compare two models on shared random inputs.
    Diff(DiffArgs),
    /// List or show capability profiles.
    Profiles(ProfilesArgs),
}

#[derive(Args)]
struct ClassifyArgs {
    /// Largest share of the graph's nodes a split-off tail may hold.
    #[arg(long, default_value_t = retarget_core::analyzer::DEFAULT_TAIL_FRACTION)]
    tail_fraction: f64,
    /// Preferred scenario, `S1`..`S4` for every node or `NODE=S3` for one.
    #[arg(long, value_name = "[NODE=]S")]
    prefer: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    model: PathBuf,
    /// Built-in profile name, profile file, or name found in RETARGET_PROFILE_PATH.
    #[arg(long, short)]
    profile: String,
    #[command(flatten)]
    classify: ClassifyArgs,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Structural,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConvertArgs {
    model: PathBuf,
    #[arg(long, short)]
    profile: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Force a transposed-convolution rewrite; by default the exact one is
    /// used when it applies.
    #[arg(long)]
    mode: Option<Mode>,
    /// Check the converted model against the original.
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    verify_args: VerifyArgs,
    #[command(flatten)]
    classify: ClassifyArgs,
    /// Framework the model was trained in, named in custom-op manifests.
    #[arg(long, default_value = retarget_core::rewriter::DEFAULT_SOURCE_FRAMEWORK)]
    source_framework: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    model: PathBuf,
    /// Tensors file `{"name": {"dtype", "shape", "data"}}`; random inputs if absent.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Write the outputs to this tensors file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time this many repetitions.
    #[arg(long, value_name = "N")]
    bench: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    #[command(flatten)]
    verify_args: VerifyArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ProfilesArgs {
    #[command(subcommand)]
    action: ProfilesAction,
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum ProfilesAction {
    List,
    Show { name: String },
}

/// A mistake in how the tool was invoked.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A check that ran and failed, as opposed to an error.
#[derive(Debug)]
pub struct Failed(pub String);

impl fmt::Display for Failed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Failed>() {
            return 1;
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            if matches!(h, HarnessError::Signature(_)) {
                return 1;
            }
        }
        if cause.is::<Usage>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<IrError>()
            || cause.is::<ProfileError>()
        {
            return 2;
        }
        if let Some(r) = cause.downcast_ref::<RewriteError>() {
            if matches!(
                r,
                RewriteError::Precondition { .. }
                    | RewriteError::Split(_)
                    | RewriteError::Rejected { .. }
                    | RewriteError::NodeNotFound(_)
            ) {
                return 2;
            }
        }
        if let Some(r) = cause.downcast_ref::<RunError>() {
            if matches!(
                r,
                RunError::MissingInput(_) | RunError::UnexpectedInput(_) | RunError::InputMismatch { .. }
            ) {
                return 2;
            }
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Convert(a) => commands::convert(a),
        Command::Run(a) => commands::run(a),
        Command::Diff(a) => commands::diff(a),
        Command::Profiles(a) => commands::profiles(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
