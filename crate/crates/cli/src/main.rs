//! `sksv`: maintain, query and certify streaming sketched-SVD state files.
//!
//! Exit codes: 0 success or certificate pass, 1 certificate fail, 2 usage,
//! 3 ingestion, 4 numerical, 5 resource budget, 6 incompatible states.

mod commands;
mod manifest;
mod store;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sksv::jl::JlFamily;

use manifest::RunManifest;

pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INGEST: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_RESOURCE: u8 = 5;
pub const EXIT_INCOMPATIBLE: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn ingest(message: impl Into<String>) -> Self {
        Self::new(EXIT_INGEST, message)
    }
}

impl From<sksv::Error> for Failure {
    fn from(e: sksv::Error) -> Self {
        use sksv::Error::*;
        let code = match &e {
            Numerical(_) => EXIT_NUMERICAL,
            Budget(_) => EXIT_RESOURCE,
            Incompatible(_) => EXIT_INCOMPATIBLE,
            Domain(_) | Format(_) | Graph(_) | Io(_) => EXIT_INGEST,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::ingest(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "sksv", version, about = "Streaming sketched SVD with relative-error certificates")]
struct Cli {
    /// Write the run manifest to this file instead of standard error.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty sketch state file.
    Init(InitArgs),
    /// Apply a JSON Lines update stream to a state file.
    Update(UpdateArgs),
    /// Estimate singular values and right singular vectors from a state.
    Spectrum(SpectrumArgs),
    /// Check a sketched spectrum against the dense oracle for its update log.
    Certify(CertifyArgs),
    /// Sum two states built with the same sketching operator.
    Merge(MergeArgs),
    /// Dump the dense oracle decomposition of an update log.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Matrix,
    Graph,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OnError {
    Abort,
    Skip,
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long, value_enum, default_value = "matrix")]
    pub mode: Mode,
    /// Ambient row count N (matrix mode).
    #[arg(long)]
    pub rows: Option<usize>,
    /// Column count n (matrix mode).
    #[arg(long)]
    pub cols: Option<usize>,
    /// Vertex count (graph mode); N becomes n(n−1)/2.
    #[arg(long)]
    pub vertices: Option<usize>,
    /// Target rank used to size the sketch.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub seed: u64,
    /// Explicit sketch size; overrides the size computed from k, eps, delta.
    #[arg(long)]
    pub m: Option<usize>,
    /// gaussian, rademacher, sparse_sign[:s], or identity (test mode only).
    #[arg(long, alias = "phi", default_value = "gaussian", value_parser = parse_family)]
    pub family: JlFamily,
    /// Permit the identity operator, which is only meaningful for testing.
    #[arg(long)]
    pub unsafe_test_mode: bool,
    /// Replace an existing file.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct UpdateArgs {
    pub state: PathBuf,
    /// JSON Lines stream; standard input when absent or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "abort")]
    pub on_error: OnError,
}

#[derive(Args)]
pub struct SpectrumArgs {
    pub state: PathBuf,
    /// Relative truncation threshold on σ′ / σ′_max.
    #[arg(long, default_value_t = sksv::spectral::DEFAULT_RANK_TOL)]
    pub tol: f64,
    /// Graph mode: update log used to count components exactly.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CertifyArgs {
    pub state: PathBuf,
    /// The complete update log the state was built from.
    #[arg(long)]
    pub log: PathBuf,
    /// Distortion to certify at; defaults to the state's configured eps.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = sksv::spectral::DEFAULT_RANK_TOL)]
    pub tol: f64,
    /// Also compute ‖ΦᵀΦ − I‖₂ over the whole ambient space.
    #[arg(long)]
    pub full_delta_phi: bool,
    /// Graph mode: warn instead of failing on negative final edge weights.
    #[arg(long)]
    pub allow_negative: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MergeArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct OracleArgs {
    /// State whose shape and stream mode describe the log.
    pub state: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = sksv::spectral::DEFAULT_RANK_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub allow_negative: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_family(s: &str) -> Result<JlFamily, String> {
    s.parse::<JlFamily>().map_err(|e| e.to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Init(_) => "init",
            Command::Update(_) => "update",
            Command::Spectrum(_) => "spectrum",
            Command::Certify(_) => "certify",
            Command::Merge(_) => "merge",
            Command::Oracle(_) => "oracle",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let mut manifest = RunManifest::start(name);
    let result = match &cli.command {
        Command::Init(a) => commands::init(a, &mut manifest),
        Command::Update(a) => commands::update(a, &mut manifest),
        Command::Spectrum(a) => commands::spectrum(a, &mut manifest),
        Command::Certify(a) => commands::certify(a, &mut manifest),
        Command::Merge(a) => commands::merge(a, &mut manifest),
        Command::Oracle(a) => commands::oracle(a, &mut manifest),
    };
    let code = match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("sksv {name}: {}", f.message);
            f.code
        }
    };
    let line = manifest.finish(code).to_json_line();
    match &cli.manifest {
        Some(path) => {
            if let Err(e) = File::create(path).and_then(|mut f| writeln!(f, "{line}")) {
                eprintln!("sksv: cannot write manifest {}: {e}", path.display());
            }
        }
        None => eprintln!("{line}"),
    }
    ExitCode::from(code)
}
