//! Run directories: config echo, metrics stream, final checkpoint and summary.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{Metrics, Trainer};
use crate::checkpoint::{load_trainer, save_representation, save_trainer, Representation};
use crate::config::Config;
use crate::diffusion::{train_representation, ReprTrainConfig};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPR_LOSS_FILE: &str = "repr_losses.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Written as a single JSON line at the end of every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub steps_completed: u64,
    pub failed_step: Option<u64>,
    pub error: Option<String>,
    pub final_eval_return_mean: Option<f64>,
    pub final_eval_return_std: Option<f64>,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Keys of every metrics line, in order.
pub const METRICS_KEYS: [&str; 7] = [
    "step",
    "eval_return_mean",
    "eval_return_std",
    "diff_loss",
    "critic_loss",
    "actor_loss",
    "bonus_mean",
];

/// Reads every line of a metrics file, rejecting malformed ones and any
/// line whose key set differs from [`METRICS_KEYS`].
pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let text = fs::read_to_string(path)?;
    let bad = |i: usize, why: String| Error::Contract(format!("{}:{}: malformed metrics line: {why}", path.display(), i + 1));
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(l).map_err(|e| bad(i, e.to_string()))?;
            let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
            let mut want = METRICS_KEYS.to_vec();
            want.sort_unstable();
            if keys != want {
                return Err(bad(i, format!("keys {keys:?}")));
            }
            serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| bad(i, e.to_string()))
        })
        .collect()
}

/// The stored config must match `config` on everything except the step budget and output directory.
fn check_resumable(stored: &Config, config: &Config) -> Result<()> {
    let mut a = stored.clone();
    a.total_steps = config.total_steps;
    a.output_dir = config.output_dir.clone();
    if a == *config {
        return Ok(());
    }
    let diff: Vec<String> = a
        .render()
        .lines()
        .zip(config.render().lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("checkpoint `{x}` vs `{y}`"))
        .collect();
    Err(Error::Checkpoint(format!("config differs from checkpoint: {}", diff.join("; "))))
}

/// Runs online training into `config.output_dir`, optionally continuing
/// from a checkpoint directory. Poisoned training does not return `Err`:
/// the summary records the failing step and the caller decides the exit code.
pub fn run_experiment(config: &Config, resume: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), config.render())?;

    let mut trainer = match resume {
        Some(from) => {
            let t = load_trainer(from, None)?;
            check_resumable(&t.config, config)?;
            let mut t = t;
            t.config = config.clone();
            t
        }
        None => Trainer::new(config.clone())?,
    };
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(dir.join(METRICS_FILE))?
    } else {
        File::create(dir.join(METRICS_FILE))?
    };
    let mut out = BufWriter::new(file);

    let start = Instant::now();
    let mut last: Option<Metrics> = None;
    let result = trainer.run(config.total_steps, |m| {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
        out.flush()?;
        last = Some(m.clone());
        Ok(())
    });
    drop(out);

    let mut summary = RunSummary {
        status: RunStatus::Completed,
        steps_completed: trainer.step,
        failed_step: None,
        error: None,
        final_eval_return_mean: last.as_ref().and_then(|m| m.eval_return_mean),
        final_eval_return_std: last.as_ref().and_then(|m| m.eval_return_std),
        wall_seconds: 0.0,
    };
    match result {
        Ok(()) => save_trainer(&trainer, dir)?,
        Err(Error::AtStep { step, source }) if !matches!(*source, Error::Io(_)) => {
            summary.status = RunStatus::Failed;
            summary.failed_step = Some(step);
            summary.error = Some(source.to_string());
        }
        Err(e) => return Err(e),
    }
    summary.wall_seconds = start.elapsed().as_secs_f64();
    let mut line = serde_json::to_string(&summary)?;
    line.push('\n');
    fs::write(dir.join(SUMMARY_FILE), line)?;
    Ok(summary)
}

/// Representation-only training on the replay buffer of a saved run.
/// Writes the representation (with both online critic heads) and the loss
/// curve into `out_dir`, returning the losses.
pub fn run_representation(checkpoint: &Path, steps: usize, out_dir: &Path) -> Result<Vec<f64>> {
    let mut t = load_trainer(checkpoint, None)?;
    let cfg = ReprTrainConfig {
        steps,
        batch_size: t.config.batch_size.min(t.buffer.len()),
        norm_weight: t.config.norm_weight,
    };
    let mut rng = Rng::with_stream(t.config.seed, REPR_STREAM);
    let head = (cfg.norm_weight > 0.0).then_some(&t.twin.online[0].head);
    let losses = train_representation(&t.buffer, &mut t.sp, &mut t.repr_opt, head, &t.schedule, &cfg, &mut rng)?;
    fs::create_dir_all(out_dir)?;
    let mut lines = String::new();
    for (i, l) in losses.iter().enumerate() {
        lines.push_str(&serde_json::json!({"step": i + 1, "diff_loss": l}).to_string());
        lines.push('\n');
    }
    fs::write(out_dir.join(REPR_LOSS_FILE), lines)?;
    save_representation(
        &Representation {
            sp: t.sp.clone(),
            heads: t.twin.online.iter().map(|c| c.head.clone()).collect(),
            schedule: t.schedule.clone(),
        },
        out_dir,
    )?;
    Ok(losses)
}

const REPR_STREAM: u64 = 1 << 40;

/// Mean and standard deviation of returns of a saved policy.
pub fn evaluate_checkpoint(checkpoint: &Path, episodes: Option<usize>, index: u64) -> Result<(f64, f64)> {
    let mut t = load_trainer(checkpoint, None)?;
    if let Some(n) = episodes {
        t.config.eval_episodes = n;
    }
    t.evaluate(index)
}
