//! Command-line front end: argument parsing, thread-pool setup, and the
//! mapping from errors to exit codes.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configs, or data, and
//! 2 when a file cannot be read or written.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
pub mod report;

pub const THREADS_ENV: &str = "TRAVERSE_DA_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] traverse_da::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 1,
            CliError::Io { .. } => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "traverse-da",
    version,
    about = "Adapt LiDAR detectors to new domains using repeated traversals"
)]
pub struct Cli {
    /// JSON config for the subcommand; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; falls back to $TRAVERSE_DA_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-traversal dataset. Config: world spec.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Domain shift applied to the world.
        #[arg(long, value_name = "PATH")]
        shift: Option<PathBuf>,
    },
    /// Validate a dataset directory and print a summary.
    IngestCheck {
        #[arg(long)]
        root: PathBuf,
    },
    /// Write `<scene>.tau.json` persistence scores. Config: persistence settings.
    Ppscore {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `<scene>.boxes.json` detections. Config: detector settings.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter detections into `<scene>.pseudo.json`. Config: filter settings.
    Refine {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        tau: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source statistics written by `train-source`.
        #[arg(long, value_name = "PATH")]
        source_stats: Option<PathBuf>,
        #[arg(long)]
        no_fbf: bool,
        #[arg(long)]
        no_pof: bool,
    },
    /// Train stage 1 on a labeled dataset. Config: `{training, focal, detector}`.
    TrainSource {
        #[arg(long)]
        root: PathBuf,
        /// Model file; source statistics go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-training rounds on a target dataset. Config: adaptation settings.
    Selftrain {
        /// Model file from `train-source`; a `.stats.json` sidecar next to
        /// it supplies the source class frequencies.
        #[arg(long)]
        source_model: PathBuf,
        #[arg(long)]
        target_root: PathBuf,
        /// Labeled split scored after every round.
        #[arg(long)]
        eval_root: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a model or saved detections. Config: `{eval, detector}`.
    Evaluate {
        #[arg(long)]
        root: PathBuf,
        #[arg(
            long,
            conflicts_with = "detections",
            required_unless_present = "detections"
        )]
        model: Option<PathBuf>,
        /// Directory of `<scene>.boxes.json` files.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate self-training runs as markdown and a plotting CSV.
    Report {
        /// Output directory of a `selftrain` run; repeat to compare runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// `metrics.json` files to append as final tables.
        #[arg(long)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "ap_bev_primary")]
        column: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{THREADS_ENV}: expected a positive integer, got {v:?}"
                ))
            })?,
            Err(_) => return Ok(None),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    Ok(Some(n))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // A second call (as in tests) keeps the first logger.
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

pub fn run(cli: Cli) -> CliResult<()> {
    init_logging(cli.verbose);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| commands::execute(&cli))
}

/// Parses `argv` (including the program name), runs the subcommand, and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(dispatch(["traverse-da", "ingest-check", "--bogus"]), 1);
        assert_eq!(dispatch(["traverse-da"]), 1);
        assert_eq!(dispatch(["traverse-da", "--version"]), 0);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::io("x", missing).exit_code(), 2);
        assert_eq!(CliError::Usage("bad".into()).exit_code(), 1);
        let invalid = traverse_da::Error::InvalidConfig("bad".into());
        assert_eq!(CliError::from(invalid).exit_code(), 1);
        let not_found = traverse_da::Error::NotFound("manifest.json".into());
        assert_eq!(CliError::from(not_found).exit_code(), 2);
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(thread_count(Some(0)).is_err());
        assert_eq!(thread_count(Some(3)).unwrap(), Some(3));
    }
}
