//! The `amdiff` command-line tool: dataset ingestion, vocabulary building,
//! training, sampling, evaluation and topological fingerprints.
//!
//! Every command writes into its own output directory, guarded by a lock
//! file, and finishes by writing `manifest.json` with input digests and the
//! list of artifacts.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use bundle::{Bundle, BundleRecord};
pub use config::RunConfig;
pub use run::{RunDir, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} is locked by another run")]
    Locked(PathBuf),
    #[error("input: {0}")]
    Input(String),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Locked(_) | CliError::Input(_) => EXIT_IO,
            CliError::Empty(_) => EXIT_EMPTY,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amdiff", version, about = "Pocket-conditioned 3D molecule generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair ligand SDFs with protein PDBs by file stem and cut out pockets.
    Ingest(IngestArgs),
    /// Build a motif vocabulary from a bundle's ligands.
    Vocab(VocabArgs),
    /// Train a denoiser on a bundle.
    Train(TrainArgs),
    /// Generate molecules for a pocket from a checkpoint.
    Sample(SampleArgs),
    /// Score generated molecules against reference sets.
    Eval(EvalArgs),
    /// Topological fingerprints of molecules or a protein pocket.
    Fingerprint(FingerprintArgs),
    /// Print the default run config as JSON.
    PrintConfig,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub ligands: PathBuf,
    #[arg(long)]
    pub proteins: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pocket radius around the ligand centroid, Å.
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
    /// Extra poses in a ligand file are kept only within this RMSD of the first, Å.
    #[arg(long, default_value_t = 1.0)]
    pub max_rmsd: f64,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this vocabulary instead of building one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Protein PDB. Without `--center` or `--ligand` every atom is pocket.
    #[arg(long)]
    pub pocket: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Guidance scale; defaults to the checkpoint's sampling config.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Consistency weight; defaults to the checkpoint's sampling config.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated steps at which to save intermediate states.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated motif sizes; otherwise drawn from the training layouts.
    #[arg(long, value_delimiter = ',')]
    pub layout: Option<Vec<usize>>,
    /// Pocket center `x,y,z`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "ligand")]
    pub center: Option<Vec<f64>>,
    /// Reference ligand whose centroid centers the pocket.
    #[arg(long)]
    pub ligand: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generated molecules, one SDF file.
    #[arg(long)]
    pub generated: PathBuf,
    /// Reference SDF files or directories of them; repeatable.
    #[arg(long)]
    pub reference: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON list of filter rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Angle and dihedral patterns; defaults to a built-in set.
    #[arg(long, value_delimiter = ',')]
    pub patterns: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct FingerprintArgs {
    /// SDF (one fingerprint per record) or PDB (one for all atoms).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Filtration cap, Å; defaults to each point set's diameter.
    #[arg(long)]
    pub max_filtration: Option<f64>,
    /// Also write each persistence diagram as CSV.
    #[arg(long)]
    pub diagrams: bool,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run::init_logging();
    match with_thread_cap(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Vocab(a) => commands::vocab(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Fingerprint(a) => commands::fingerprint(&a),
        Command::PrintConfig => {
            println!("{}", RunConfig::default().to_json());
            Ok(())
        }
    }
}

/// Runs `f` on a pool of `AMDIFF_THREADS` workers when the variable is set.
fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("AMDIFF_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
