//! The `ivit` command line.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unreadable inputs),
//! 2 validation or format error, 3 runtime failure.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    Validation = 2,
    Runtime = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A failed command: status plus a message naming the flag or file at fault.
#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub(crate) fn usage(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Usage,
            message: message.into(),
        }
    }

    /// Wraps a library error, prefixing `context` (usually a flag name).
    pub(crate) fn from_error(context: &str, e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) | Error::InvalidArgument(_) | Error::Format { .. } | Error::Config(_) => ExitStatus::Validation,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ExitStatus::Usage,
            Error::Io { .. } | Error::NonFinite(_) | Error::Runtime(_) => ExitStatus::Runtime,
        };
        Self {
            status,
            message: format!("{context}: {e}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for crate::Result<T> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_error(what, e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "ivit", version, about = "Interaction Vision Transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleKind {
    /// `v(S) = |S|`
    Addl,
    /// `v(S) = 1` iff variables 1 and 2 are both in `S`
    And,
    /// `2ⁿ` whitespace-separated values indexed by bitmask, from `--file`
    File,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the synthetic task described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Start from this checkpoint instead of fresh weights.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory for the log, checkpoints and dataset.
        #[arg(long, default_value = "ivit-run")]
        out: PathBuf,
    },
    /// Accuracy and map similarities of a checkpoint on a saved dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory of `NNNNN.tim` teacher maps replacing the dataset's own.
        #[arg(long)]
        teachers: Option<PathBuf>,
        /// Directory of `NNNNN.txt` human annotations.
        #[arg(long)]
        human: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Write one TIM file per sample from its ground-truth mask.
    TeacherGen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Teacher noise; defaults to the dataset's own.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Print the AND-interaction table of a small oracle.
    Decompose {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        oracle: OracleKind,
        #[arg(long)]
        file: Option<PathBuf>,
        /// Print only the k strongest interactions.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Render a TIM file as a PGM heatmap.
    Visualize {
        #[arg(long)]
        tim: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `per-map` or `global:<max>`.
        #[arg(long, default_value = "per-map")]
        scale: String,
        /// Pixels per patch side.
        #[arg(long, default_value_t = 8)]
        upsample: usize,
    },
    /// Mean gate weights per layer.
    GateReport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Finetune every switch setting from one shared pretrained backbone.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Run all eight switch combinations instead of the configured one.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value = "ivit-ablate")]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(err, "{e}");
                ExitStatus::Usage
            } else {
                let _ = write!(out, "{e}");
                ExitStatus::Success
            };
            return code.code();
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => ExitStatus::Success.code(),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.status.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::Train { config, resume, out: dir } => train(&config, resume.as_deref(), &dir, out, err),
        Command::Eval {
            ckpt,
            data,
            teachers,
            human,
            split,
        } => eval(&ckpt, &data, teachers.as_deref(), human.as_deref(), split.into(), out),
        Command::TeacherGen { data, out: dir, sigma } => teacher_gen(&data, &dir, sigma, out),
        Command::Decompose { n, oracle, file, top } => decompose(n, oracle.into(), file.as_deref(), top, out),
        Command::Visualize {
            tim,
            out: path,
            scale,
            upsample,
        } => visualize(&tim, &path, &scale, upsample),
        Command::GateReport { ckpt, data, split } => gate_report(&ckpt, &data, split.into(), out),
        Command::Ablate { config, grid, out: dir } => ablate(&config, grid, &dir, out, err),
    }
}

impl From<SplitArg> for commands::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => commands::Split::Train,
            SplitArg::Val => commands::Split::Val,
            SplitArg::All => commands::Split::All,
        }
    }
}

impl From<OracleKind> for commands::Oracle {
    fn from(o: OracleKind) -> Self {
        match o {
            OracleKind::Addl => commands::Oracle::Additive,
            OracleKind::And => commands::Oracle::PairAnd,
            OracleKind::File => commands::Oracle::File,
        }
    }
}
