use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use diffsr::config::Config;
use diffsr::run::{evaluate_checkpoint, run_experiment, run_representation, SUMMARY_FILE};

// Training allocates and frees megabyte-sized activations every update; the
// system allocator returns them to the OS and pays page faults each time.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Diffusion spectral representations for online reinforcement learning.
#[derive(Debug, Parser)]
#[command(name = "diffsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Online training: collect, learn the representation, update critics and actor.
    Train(TrainArgs),
    /// Representation learning only, on the replay buffer of a finished run.
    Repr(ReprArgs),
    /// Runs the oracle battery; exits nonzero if any check fails.
    Selftest,
    /// Rolls out the deterministic policy of a saved run.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file (`key = value` lines, optional `[section]` headers).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Any config key, repeatable; applied after every other source.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    history_len: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Exploration bonus: off, elliptical or kernel.
    #[arg(long)]
    bonus: Option<String>,
    #[arg(long)]
    bonus_scale: Option<String>,
    #[arg(long)]
    bonus_lambda: Option<String>,
}

impl ConfigArgs {
    /// Defaults (with the output-root variable), then the file, then flags.
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => Config::default(),
        };
        let named = [
            ("env", self.env.clone()),
            ("history_len", self.history_len.clone()),
            ("seed", self.seed.clone()),
            ("total_steps", self.steps.clone()),
            ("output_dir", self.output.as_ref().map(|p| p.display().to_string())),
            ("bonus", self.bonus.clone()),
            ("bonus_scale", self.bonus_scale.clone()),
            ("bonus_lambda", self.bonus_lambda.clone()),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.set_override(key, &v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set_override(k.trim(), v.trim()).with_context(|| format!("--set {kv}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from the checkpoint in this run directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReprArgs {
    /// Run directory holding a checkpoint.
    #[arg(long)]
    from: PathBuf,
    /// Gradient steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Where to write the representation; defaults to `<from>/representation`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run directory holding a checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episodes; defaults to the run's own setting.
    #[arg(long)]
    episodes: Option<usize>,
    /// Selects the evaluation noise stream.
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let cfg = args.config.resolve()?;
    let summary = run_experiment(&cfg, args.resume.as_deref())?;
    let line = std::fs::read_to_string(cfg.output_dir.join(SUMMARY_FILE)).context("reading the run summary")?;
    print!("{line}");
    if summary.succeeded() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "training failed at step {}: {}",
            summary.failed_step.unwrap_or_default(),
            summary.error.as_deref().unwrap_or("unknown error")
        );
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Repr(a) => {
            let out = a.output.clone().unwrap_or_else(|| a.from.join("representation"));
            run_representation(&a.from, a.steps, &out).map_err(Into::into).map(|losses| {
                println!("{} steps, final diff loss {:.6}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
                ExitCode::SUCCESS
            })
        }
        Command::Selftest => selftest(),
        Command::Eval(a) => evaluate_checkpoint(&a.checkpoint, a.episodes, a.stream).map_err(Into::into).map(|(mean, std)| {
            println!("{{\"eval_return_mean\":{mean},\"eval_return_std\":{std}}}");
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn selftest() -> Result<ExitCode> {
    let checks = diffsr::selftest::battery()?;
    let mut failed = 0;
    for c in &checks {
        println!("{c}");
        if !c.passed() {
            failed += 1;
        }
    }
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
