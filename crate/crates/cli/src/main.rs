use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specdiff::model::MissingPattern;
use specdiff_cli::{commands, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "specdiff", version, about = "Spectral graph diffusion toolkit")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Generate,
    /// Train a model on the generated dataset.
    Train {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the configured checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint under missing patterns or rates.
    Eval {
        #[arg(long)]
        missing_rate: Option<f64>,
        #[arg(long)]
        pattern: Option<MissingPattern>,
    },
    /// Adjacency-space versus spectral-space noising curves.
    Compare,
    /// Recover test samples and export errors and embeddings.
    Recover {
        #[arg(long)]
        pattern: Option<MissingPattern>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut o = Overrides { seed: cli.seed, out: cli.out, ..Overrides::default() };
    match &cli.command {
        Command::Train { beta, steps, .. } => {
            o.beta = *beta;
            o.steps = *steps;
        }
        Command::Eval { missing_rate, pattern } => {
            o.missing_rate = *missing_rate;
            o.pattern = *pattern;
        }
        Command::Recover { pattern } => o.pattern = *pattern,
        Command::Generate | Command::Compare => {}
    }
    cfg.apply(&o);
    cfg.validate()?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train { resume, .. } => commands::train(&cfg, resume),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Recover { .. } => commands::recover(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
