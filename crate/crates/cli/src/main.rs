//! `tailclip` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage, 3 input file, 4 numerical abort.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<tailclip::Error> for CliError {
    fn from(e: tailclip::Error) -> Self {
        use tailclip::Error as E;
        let code = match &e {
            E::Config(_) => EXIT_USAGE,
            E::NonFiniteLoss { .. } | E::NonFiniteGradient { .. } | E::NonFinite { .. } | E::DegenerateEmbedding { .. } => {
                EXIT_NUMERIC
            }
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "tailclip", version, about = "Class-aware contrastive training on long-tailed multi-view corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
    /// Compare empirical first-slot class frequencies with the analytic law.
    AuditSampler(AuditArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 5000)]
    pub records: usize,
    #[arg(long, default_value_t = 33)]
    pub classes: usize,
    #[arg(long = "top6-share", default_value_t = 0.4458)]
    pub top6_share: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "view-dropout", default_value_t = 0.2)]
    pub view_dropout: f64,
    #[arg(long = "image-side", default_value_t = 16)]
    pub image_side: usize,
    #[arg(long, default_value_t = 0.04)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `key = value` file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Average both retrieval directions in the contrastive losses.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long = "freq-scope", value_parser = ["dataset", "batch"])]
    pub freq_scope: Option<String>,
    /// Draw batches uniformly over records instead of class-aware.
    #[arg(long = "uniform-sampling")]
    pub uniform_sampling: bool,
    /// Train only on the training side of a stratified split with this period.
    #[arg(long = "holdout-every")]
    pub holdout_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace path; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Evaluate on the held-out side of a stratified split with this period.
    #[arg(long = "holdout-every")]
    pub holdout_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-class table path.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ClassifyMode {
    ZeroShot,
    LinearProbe,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BreakdownMetric {
    T2i,
    I2t,
    ZeroShot,
}

#[derive(Subcommand)]
pub enum EvalTask {
    /// Recall@K (t2i, i2t) or mAP plus Recall@K (i2i).
    Retrieval {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_parser = ["t2i", "i2t", "i2i"])]
        mode: String,
        #[arg(long, value_delimiter = ',', default_value = "5,10")]
        k: Vec<usize>,
    },
    /// Zero-shot or linear-probe accuracy.
    Classify {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long, value_enum)]
        mode: ClassifyMode,
        #[arg(long, default_value = tailclip::evaluation::DEFAULT_PROMPT_TEMPLATE)]
        template: String,
        /// Stratified split period used to fit the probe.
        #[arg(long = "probe-split-every", default_value_t = 5)]
        probe_split_every: usize,
        #[arg(long = "probe-seed", default_value_t = 0)]
        probe_seed: u64,
    },
    /// Head versus tail macro averages of a per-class metric.
    Breakdown {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long = "head-k", default_value_t = 6)]
        head_k: usize,
        #[arg(long, value_enum, default_value = "t2i")]
        metric: BreakdownMetric,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = tailclip::evaluation::DEFAULT_PROMPT_TEMPLATE)]
        template: String,
    },
}

#[derive(Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub beta: f64,
    #[arg(long, default_value_t = 100_000)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = tailclip::sampling::DEFAULT_SMOOTHING)]
    pub smoothing: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval { task } => commands::eval(task),
        Command::AuditSampler(a) => commands::audit_sampler(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
