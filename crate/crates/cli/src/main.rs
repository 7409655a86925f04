mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use context::{exit_code, Context, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "debias-lab",
    version,
    about = "Artifact audits, trap splits, robust training and NoiseCrop for skin-lesion classifiers"
)]
struct Cli {
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON settings for the subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lesion dataset with controlled artifact correlations.
    Synth(commands::SynthArgs),
    /// Report artifact/label Spearman correlations.
    Audit(commands::AuditArgs),
    /// Build a trap train/test split at a bias factor.
    Split(commands::SplitArgs),
    /// Partition training samples into artifact environments.
    Envs(commands::EnvsArgs),
    /// Train a classifier with ERM, GroupDRO or RSC, optionally with grid search.
    Train(commands::TrainArgs),
    /// Replace everything outside the lesion hull with uniform noise.
    Noisecrop(commands::NoiseCropArgs),
    /// Evaluate models on a manifest with test-time augmentation.
    Eval(commands::EvalArgs),
    /// Run the bias-factor sweep and render its report.
    Sweep(commands::SweepArgs),
    /// Compute ScoreCAM saliency maps.
    Saliency(commands::SaliencyArgs),
    /// Render plots and tables from earlier outputs.
    Report(commands::ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Audit(_) => "audit",
            Command::Split(_) => "split",
            Command::Envs(_) => "envs",
            Command::Train(_) => "train",
            Command::Noisecrop(_) => "noisecrop",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Saliency(_) => "saliency",
            Command::Report(_) => "report",
        }
    }
}

fn dispatch(command: &Command, ctx: &mut Context) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => commands::synth(a, ctx),
        Command::Audit(a) => commands::audit(a, ctx),
        Command::Split(a) => commands::split(a, ctx),
        Command::Envs(a) => commands::envs(a, ctx),
        Command::Train(a) => commands::train(a, ctx),
        Command::Noisecrop(a) => commands::noisecrop(a, ctx),
        Command::Eval(a) => commands::eval(a, ctx),
        Command::Sweep(a) => commands::sweep(a, ctx),
        Command::Saliency(a) => commands::saliency(a, ctx),
        Command::Report(a) => commands::report(a, ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            return ExitCode::from(code);
        }
    };
    let started = Instant::now();
    let mut ctx = Context::new(cli.command.name(), cli.seed, cli.out.clone(), cli.config.clone());
    let result = match cli.jobs {
        Some(0) => Err(UsageError("--jobs must be at least 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| dispatch(&cli.command, &mut ctx))),
        None => dispatch(&cli.command, &mut ctx),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => exit_code(e),
    };
    if let Err(e) = ctx.write_run_manifest(cli.jobs, started.elapsed().as_secs_f64(), &result, code) {
        eprintln!("warning: could not write run manifest: {e:#}");
    }
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(code)
}
