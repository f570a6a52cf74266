//! `ipnseg` command-line driver: data generation, two-stage training,
//! patchwise inference with splicing, evaluation, projections and the
//! verification suites.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or output directory (exit 1).
    Usage(String),
    /// Missing or inconsistent data (exit 2).
    Data(String),
    /// A verification check failed (exit 3).
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verify(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<ipnseg_core::Error> for CliError {
    fn from(e: ipnseg_core::Error) -> Self {
        match e {
            ipnseg_core::Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ipnseg", version, about = "3D-to-2D OCTA segmentation with image projection networks")]
pub struct Cli {
    /// `key = value` run configuration; unset keys take desk-scale defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic phantom dataset and manifest.
    Gen,
    /// Train stage 1 (and stage 2 for ipnv2plus).
    Train,
    /// Patchwise inference, splicing and seam report.
    Infer {
        /// Comma-separated sample ids; defaults to the `eval_split` ids.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Dice/Jaccard/balanced-accuracy reports of the inferred maps.
    Eval {
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Write the B1-B6 projection maps.
    Project {
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Gradient, oracle and invariant suites.
    Verify {
        #[arg(long, hide = true)]
        corrupt_op: Option<String>,
    },
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let (out, force) = (cli.out.as_path(), cli.force);
    match &cli.command {
        Command::Gen => commands::cmd_gen(&cfg, out, force),
        Command::Train => commands::cmd_train(&cfg, out, force),
        Command::Infer { ids } => commands::cmd_infer(&cfg, out, force, ids),
        Command::Eval { ids } => commands::cmd_eval(&cfg, out, force, ids),
        Command::Project { ids } => commands::cmd_project(&cfg, out, force, ids),
        Command::Verify { corrupt_op } => commands::cmd_verify(cfg.seed, corrupt_op.clone()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ipnseg: {e}");
            e.exit_code()
        }
    }
}
