//! Run configuration in a flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! [env]
//! env = "pendulum-masked"
//! history_len = 3
//!
//! [agent]
//! batch_size = 256
//! ```
//!
//! Section headers are optional; when present, each key must sit under its
//! own section. Strings may be quoted or bare; lists are comma-separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exploration::BonusMode;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "DIFFSR_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    // [env]
    pub env: String,
    pub history_len: usize,
    // [run]
    pub seed: u64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub output_dir: PathBuf,
    // [repr]
    pub noise_levels: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub psi_dim: usize,
    pub psi_hidden: Vec<usize>,
    pub zeta_hidden: Vec<usize>,
    pub fourier_dim: usize,
    pub phi_dim: usize,
    pub feature_update_ratio: u64,
    pub repr_steps: usize,
    pub norm_weight: f64,
    pub lr_repr: f64,
    // [agent]
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub tau: f64,
    pub temperature: f64,
    // [bonus]
    pub bonus: BonusMode,
    pub bonus_scale: f64,
    pub bonus_lambda: f64,
    pub kernel_cap: usize,
    // [eval]
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            history_len: 1,
            seed: 0,
            total_steps: 30_000,
            warmup_steps: 1000,
            output_dir: default_output_dir(),
            noise_levels: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            psi_dim: 32,
            psi_hidden: vec![256],
            zeta_hidden: vec![512],
            fourier_dim: 64,
            phi_dim: 256,
            feature_update_ratio: 3,
            repr_steps: 1,
            norm_weight: 0.0,
            lr_repr: 1e-4,
            buffer_capacity: 1_000_000,
            batch_size: 1024,
            actor_hidden: vec![256, 256],
            lr_actor: 3e-3,
            lr_critic: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            temperature: 0.1,
            bonus: BonusMode::Elliptical,
            bonus_scale: 0.1,
            bonus_lambda: 1.0,
            kernel_cap: 4096,
            eval_interval: 5000,
            eval_episodes: 10,
        }
    }
}

fn default_output_dir() -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join("default")
}

/// Every key with its section, in rendering order.
const KEYS: &[(&str, &str)] = &[
    ("env", "env"),
    ("history_len", "env"),
    ("seed", "run"),
    ("total_steps", "run"),
    ("warmup_steps", "run"),
    ("output_dir", "run"),
    ("noise_levels", "repr"),
    ("beta_min", "repr"),
    ("beta_max", "repr"),
    ("psi_dim", "repr"),
    ("psi_hidden", "repr"),
    ("zeta_hidden", "repr"),
    ("fourier_dim", "repr"),
    ("phi_dim", "repr"),
    ("feature_update_ratio", "repr"),
    ("repr_steps", "repr"),
    ("norm_weight", "repr"),
    ("lr_repr", "repr"),
    ("buffer_capacity", "agent"),
    ("batch_size", "agent"),
    ("actor_hidden", "agent"),
    ("lr_actor", "agent"),
    ("lr_critic", "agent"),
    ("gamma", "agent"),
    ("tau", "agent"),
    ("temperature", "agent"),
    ("bonus", "bonus"),
    ("bonus_scale", "bonus"),
    ("bonus_lambda", "bonus"),
    ("kernel_cap", "bonus"),
    ("eval_interval", "eval"),
    ("eval_episodes", "eval"),
];

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, kind: &str) -> std::result::Result<T, String> {
    unquote(v).parse().map_err(|_| format!("{key} expects {kind}, got {v:?}"))
}

fn parse_list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
    let inner = unquote(v).trim().trim_start_matches('[').trim_end_matches(']');
    let items: std::result::Result<Vec<usize>, _> = inner.split(',').map(|x| x.trim().parse::<usize>()).collect();
    match items {
        Ok(list) if !list.is_empty() && !list.contains(&0) => Ok(list),
        _ => Err(format!("{key} expects a comma-separated list of positive integers, got {v:?}")),
    }
}

fn format_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl Config {
    /// Parses a file; defaults fill every key it does not set.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        let mut key_lines: Vec<(&str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(Some(line_no), format!("malformed section header {line:?}")))?
                    .trim();
                if !KEYS.iter().any(|(_, s)| *s == name) {
                    return Err(Error::config(Some(line_no), format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line_no), format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            let home = KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, s)| *s)
                .ok_or_else(|| Error::config(Some(line_no), format!("unknown key {key:?}")))?;
            if let Some(sec) = &section {
                if sec != home {
                    return Err(Error::config(Some(line_no), format!("key {key:?} belongs in [{home}], found in [{sec}]")));
                }
            }
            self.set(key, value.trim()).map_err(|m| Error::config(Some(line_no), m))?;
            key_lines.push((key, line_no));
        }
        // Range errors name their key first; point at the line that set it.
        self.validate().map_err(|e| match e {
            Error::Config { line: None, message } => {
                let key = message.split_whitespace().next().unwrap_or_default();
                let line = key_lines.iter().rev().find(|(k, _)| *k == key).map(|(_, l)| *l);
                Error::Config { line, message }
            }
            other => other,
        })
    }

    /// Applies one `key = value` override, e.g. from the command line.
    pub fn set_override(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(None, format!("unknown key {key:?}")));
        }
        self.set(key, value).map_err(|m| Error::config(None, m))?;
        self.validate()
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        const INT: &str = "a non-negative integer";
        const FLOAT: &str = "a number";
        match key {
            "env" => self.env = unquote(v).to_string(),
            "history_len" => self.history_len = parse_num(key, v, INT)?,
            "seed" => self.seed = parse_num(key, v, INT)?,
            "total_steps" => self.total_steps = parse_num(key, v, INT)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, v, INT)?,
            "output_dir" => self.output_dir = PathBuf::from(unquote(v)),
            "noise_levels" => self.noise_levels = parse_num(key, v, INT)?,
            "beta_min" => self.beta_min = parse_num(key, v, FLOAT)?,
            "beta_max" => self.beta_max = parse_num(key, v, FLOAT)?,
            "psi_dim" => self.psi_dim = parse_num(key, v, INT)?,
            "psi_hidden" => self.psi_hidden = parse_list(key, v)?,
            "zeta_hidden" => self.zeta_hidden = parse_list(key, v)?,
            "fourier_dim" => self.fourier_dim = parse_num(key, v, INT)?,
            "phi_dim" => self.phi_dim = parse_num(key, v, INT)?,
            "feature_update_ratio" => self.feature_update_ratio = parse_num(key, v, INT)?,
            "repr_steps" => self.repr_steps = parse_num(key, v, INT)?,
            "norm_weight" => self.norm_weight = parse_num(key, v, FLOAT)?,
            "lr_repr" => self.lr_repr = parse_num(key, v, FLOAT)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v, INT)?,
            "batch_size" => self.batch_size = parse_num(key, v, INT)?,
            "actor_hidden" => self.actor_hidden = parse_list(key, v)?,
            "lr_actor" => self.lr_actor = parse_num(key, v, FLOAT)?,
            "lr_critic" => self.lr_critic = parse_num(key, v, FLOAT)?,
            "gamma" => self.gamma = parse_num(key, v, FLOAT)?,
            "tau" => self.tau = parse_num(key, v, FLOAT)?,
            "temperature" => self.temperature = parse_num(key, v, FLOAT)?,
            "bonus" => self.bonus = unquote(v).parse().map_err(|e: Error| e.to_string())?,
            "bonus_scale" => self.bonus_scale = parse_num(key, v, FLOAT)?,
            "bonus_lambda" => self.bonus_lambda = parse_num(key, v, FLOAT)?,
            "kernel_cap" => self.kernel_cap = parse_num(key, v, INT)?,
            "eval_interval" => self.eval_interval = parse_num(key, v, INT)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v, INT)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Range checks; messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(None, m.to_string()));
        if crate::envs::Env::from_name(&self.env).is_err() {
            return fail(&format!("env must be one of pendulum, lingauss, chain, grid (optionally -masked where velocities exist), got {:?}", self.env));
        }
        if self.history_len == 0 {
            return fail("history_len must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("tau must lie in [0,1]");
        }
        if self.noise_levels < 2 {
            return fail("noise_levels must be at least 2");
        }
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max && self.beta_max < 1.0) {
            return fail("beta_min and beta_max must satisfy 0 < beta_min < beta_max < 1");
        }
        for (name, v) in [("psi_dim", self.psi_dim), ("fourier_dim", self.fourier_dim), ("phi_dim", self.phi_dim)] {
            if v == 0 {
                return fail(&format!("{name} must be positive"));
            }
        }
        if self.feature_update_ratio == 0 {
            return fail("feature_update_ratio must be at least 1");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("batch_size must be positive and no larger than buffer_capacity");
        }
        for (name, v) in [("lr_repr", self.lr_repr), ("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(&format!("{name} must be a positive number"));
            }
        }
        if !(self.norm_weight >= 0.0 && self.norm_weight.is_finite()) {
            return fail("norm_weight must be non-negative");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be non-negative");
        }
        if !(self.bonus_scale >= 0.0 && self.bonus_scale.is_finite()) {
            return fail("bonus_scale must be non-negative");
        }
        match self.bonus {
            BonusMode::Elliptical if !(self.bonus_lambda > 0.0) => return fail("bonus_lambda must be positive for the elliptical bonus"),
            BonusMode::Kernel if !(self.bonus_lambda >= 0.0) => return fail("bonus_lambda must be non-negative for the kernel bonus"),
            _ => {}
        }
        if self.kernel_cap == 0 {
            return fail("kernel_cap must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return fail("eval_interval and eval_episodes must be positive");
        }
        Ok(())
    }

    /// Whether velocity coordinates are hidden from the agent.
    pub fn masked(&self) -> bool {
        self.env.ends_with("-masked")
    }

    /// The effective configuration in the same grammar `parse` reads.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, section) in KEYS {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let value = match *key {
                "env" => format!("\"{}\"", self.env),
                "history_len" => self.history_len.to_string(),
                "seed" => self.seed.to_string(),
                "total_steps" => self.total_steps.to_string(),
                "warmup_steps" => self.warmup_steps.to_string(),
                "output_dir" => format!("\"{}\"", self.output_dir.display()),
                "noise_levels" => self.noise_levels.to_string(),
                "beta_min" => format!("{:?}", self.beta_min),
                "beta_max" => format!("{:?}", self.beta_max),
                "psi_dim" => self.psi_dim.to_string(),
                "psi_hidden" => format_list(&self.psi_hidden),
                "zeta_hidden" => format_list(&self.zeta_hidden),
                "fourier_dim" => self.fourier_dim.to_string(),
                "phi_dim" => self.phi_dim.to_string(),
                "feature_update_ratio" => self.feature_update_ratio.to_string(),
                "repr_steps" => self.repr_steps.to_string(),
                "norm_weight" => format!("{:?}", self.norm_weight),
                "lr_repr" => format!("{:?}", self.lr_repr),
                "buffer_capacity" => self.buffer_capacity.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "actor_hidden" => format_list(&self.actor_hidden),
                "lr_actor" => format!("{:?}", self.lr_actor),
                "lr_critic" => format!("{:?}", self.lr_critic),
                "gamma" => format!("{:?}", self.gamma),
                "tau" => format!("{:?}", self.tau),
                "temperature" => format!("{:?}", self.temperature),
                "bonus" => format!("\"{}\"", self.bonus),
                "bonus_scale" => format!("{:?}", self.bonus_scale),
                "bonus_lambda" => format!("{:?}", self.bonus_lambda),
                "kernel_cap" => self.kernel_cap.to_string(),
                "eval_interval" => self.eval_interval.to_string(),
                "eval_episodes" => self.eval_episodes.to_string(),
                _ => unreachable!("every key is rendered"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Names of every accepted key.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.batch_size, 1024);
        assert_eq!(c.noise_levels, 1000);
        assert_eq!(c.phi_dim, 256);
        assert_eq!(c.actor_hidden, vec![256, 256]);
        assert_eq!(c.lr_actor, 3e-3);
        assert_eq!(c.lr_critic, 3e-4);
        assert_eq!(c.lr_repr, 1e-4);
        assert_eq!(c.tau, 0.005);
    }

    #[test]
    fn gamma_out_of_range() {
        let err = Config::parse("seed = 1\ngamma = 1.5").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");
        assert!(err.to_string().contains("gamma must lie in [0,1)"), "{err}");
    }

    #[test]
    fn masked_pendulum_with_history() {
        let c = Config::parse("env = \"pendulum-masked\"\nhistory_len = 3\n").unwrap();
        assert!(c.masked());
        assert_eq!(c.history_len, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Config::parse("seed = 3\n\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
        let err = Config::parse("[agent]\nbatch_size = many\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");
        let err = Config::parse("[agent]\nseed = 1\n").unwrap_err();
        assert!(err.to_string().contains("belongs in [run]"), "{err}");
        assert!(Config::parse("[nope]\n").is_err());
        assert!(Config::parse("just words\n").is_err());
    }

    #[test]
    fn sections_comments_and_lists() {
        let text = "# header\n[repr]\npsi_hidden = 64, 64 # two layers\nbeta_max = 0.05\n[bonus]\nbonus = kernel\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.psi_hidden, vec![64, 64]);
        assert_eq!(c.beta_max, 0.05);
        assert_eq!(c.bonus, BonusMode::Kernel);
    }

    #[test]
    fn render_round_trips() {
        let mut c = Config::default();
        c.env = "lingauss".into();
        c.beta_min = 3.3e-5;
        c.actor_hidden = vec![17, 9, 4];
        c.bonus = BonusMode::Off;
        c.output_dir = PathBuf::from("out dir/x");
        assert_eq!(Config::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn overrides_validate() {
        let mut c = Config::default();
        c.set_override("batch_size", "32").unwrap();
        assert_eq!(c.batch_size, 32);
        assert!(c.set_override("gamma", "1").is_err());
        assert!(c.set_override("nonsense", "1").is_err());
    }
}
