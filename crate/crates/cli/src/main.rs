//! `featsel` command-line tool.
//!
//! Every command accepts `--config <file>` with `key=value` lines; flags
//! override the file. Exit codes: 0 success, 1 failed check, 2 invalid
//! input, 3 I/O or format error.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::settings::Settings;

#[derive(Parser)]
#[command(name = "featsel", version, about = "Gumbel-Softmax token selection: train, prune and evaluate")]
struct Cli {
    /// Settings file of key=value lines; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-redundancy corpus as an FSEL file
    GenData(GenDataArgs),
    /// Train selector and reconstructor on an FSEL corpus
    Train(TrainArgs),
    /// Keep the top-scoring tokens of every record
    Select(SelectArgs),
    /// Compare trained and random selection across retention ratios
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full loss gradient
    GradCheck(GradCheckArgs),
    /// Print the headers of FSEL or FSCK files
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    sets: Option<usize>,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of basis tokens per record
    #[arg(long)]
    rank: Option<usize>,
    /// Standard deviation of the noise on derived tokens
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for model.fsck, metrics.csv and manifest.txt
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint up to --steps total updates
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Retention target in (0, 1]
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    tau_anneal_steps: Option<u64>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps_adam: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature width; defaults to the data's
    #[arg(long)]
    dim: Option<usize>,
    /// Positional table length; defaults to the longest record
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of tokens to keep, in (0, 1]
    #[arg(long)]
    ratio: Option<f64>,
    /// CSV of retained indices; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the retained rows as an FSEL file
    #[arg(long)]
    pruned: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated retention ratios
    #[arg(long)]
    ratios: Option<String>,
    /// Comma-separated seeds for the random policy
    #[arg(long)]
    seeds: Option<String>,
    /// Per-record distance CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Finite-difference step
    #[arg(long)]
    h: Option<f64>,
    /// f64 or f32
    #[arg(long)]
    precision: Option<String>,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturb one analytic gradient so the check must fail
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn settings_for(cli: &Cli) -> Result<Settings, error::CliError> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let paths = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::GenData(a) => {
            s.flag("sets", &a.sets);
            s.flag("tokens", &a.tokens);
            s.flag("dim", &a.dim);
            s.flag("rank", &a.rank);
            s.flag("noise", &a.noise);
            s.flag("seed", &a.seed);
            s.flag("out", &paths(&a.out));
        }
        Command::Train(a) => {
            s.flag("data", &paths(&a.data));
            s.flag("out", &paths(&a.out));
            s.flag("resume", &paths(&a.resume));
            s.flag("p", &a.p);
            s.flag("tau", &a.tau);
            s.flag("tau_end", &a.tau_end);
            s.flag("tau_anneal_steps", &a.tau_anneal_steps);
            s.flag("learning_rate", &a.learning_rate);
            s.flag("beta1", &a.beta1);
            s.flag("beta2", &a.beta2);
            s.flag("eps_adam", &a.eps_adam);
            s.flag("batch_size", &a.batch_size);
            s.flag("steps", &a.steps);
            s.flag("seed", &a.seed);
            s.flag("dim", &a.dim);
            s.flag("max_tokens", &a.max_tokens);
            s.flag("heads", &a.heads);
        }
        Command::Select(a) => {
            s.flag("ckpt", &paths(&a.ckpt));
            s.flag("data", &paths(&a.data));
            s.flag("ratio", &a.ratio);
            s.flag("out", &paths(&a.out));
            s.flag("pruned", &paths(&a.pruned));
        }
        Command::Evaluate(a) => {
            s.flag("ckpt", &paths(&a.ckpt));
            s.flag("data", &paths(&a.data));
            s.flag("ratios", &a.ratios);
            s.flag("seeds", &a.seeds);
            s.flag("out", &paths(&a.out));
        }
        Command::GradCheck(a) => {
            s.flag("tokens", &a.tokens);
            s.flag("dim", &a.dim);
            s.flag("heads", &a.heads);
            s.flag("seed", &a.seed);
            s.flag("tau", &a.tau);
            s.flag("p", &a.p);
            s.flag("tol", &a.tol);
            s.flag("h", &a.h);
            s.flag("precision", &a.precision);
            s.flag("out", &paths(&a.out));
        }
        Command::Inspect(_) => {}
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    let settings = settings_for(&cli)?;
    match &cli.command {
        Command::GenData(_) => commands::gen_data(settings),
        Command::Train(_) => commands::train(settings),
        Command::Select(_) => commands::select(settings),
        Command::Evaluate(_) => commands::evaluate(settings),
        Command::GradCheck(a) => commands::grad_check(settings, a.corrupt_gradient),
        Command::Inspect(a) => commands::inspect(&a.files),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("featsel: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
