//! Flat `key = value` configuration files for the command line tool.
//!
//! Keys mirror the learner config struct fields. Parsing validates keys
//! against the full known set; applying validates values against the
//! invariants of the specific learner being configured, so a typo or an
//! out-of-range value fails before any training starts.

use std::path::Path;

use thiserror::Error;

use crate::ella::{EllaConfig, STACKED_DIM};
use crate::env::StateDim;
use crate::pg::PGConfig;
use crate::qlearn::QConfig;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line_no}: expected `key = value`, got `{line}`")]
    Syntax { line_no: usize, line: String },
    #[error("line {line_no}: unknown key `{key}`")]
    UnknownKey { line_no: usize, key: String },
    #[error("line {line_no}: bad value `{value}` for `{key}`: {reason}")]
    BadValue { line_no: usize, key: String, value: String, reason: String },
    #[error("key `{key}` does not apply to {target}")]
    NotApplicable { key: String, target: &'static str },
    #[error("{0}")]
    Invalid(String),
}

const KNOWN_KEYS: [&str; 18] = [
    // Q-learning.
    "alpha",
    "gamma",
    "p0",
    "q0",
    "decay_period",
    "decay_ratio",
    "episodes",
    "state_dim",
    // Policy gradient.
    "alpha_lin",
    "alpha_ang",
    "batch_size",
    "sigma0",
    "sigma_min",
    // Multi-task.
    "k",
    "mu",
    "lambda",
    "trajectories_per_task",
    "hessian_ridge",
];

/// A parsed config file: key, value, and source line for error reporting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawConfig {
    pub entries: Vec<(String, String, usize)>,
}

/// Parses config text. Blank lines and `#` comments are skipped; every key
/// must be a known config field.
pub fn parse_config(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line_no, line: line.into() });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(ConfigError::Syntax { line_no, line: line.into() });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line_no, key });
        }
        entries.push((key, value, line_no));
    }
    Ok(RawConfig { entries })
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.into(), source: e })?;
    parse_config(&text)
}

fn parse_value<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line_no: usize,
) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line_no,
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Applies Q-learning keys onto `cfg`; any other key errors.
pub fn apply_q(raw: &RawConfig, cfg: &mut QConfig) -> Result<(), ConfigError> {
    for (key, value, line_no) in &raw.entries {
        match key.as_str() {
            "alpha" => cfg.alpha = parse_value(key, value, *line_no)?,
            "gamma" => cfg.gamma = parse_value(key, value, *line_no)?,
            "p0" => cfg.p0 = parse_value(key, value, *line_no)?,
            "q0" => cfg.q0 = parse_value(key, value, *line_no)?,
            "decay_period" => cfg.decay_period = parse_value(key, value, *line_no)?,
            "decay_ratio" => cfg.decay_ratio = parse_value(key, value, *line_no)?,
            "episodes" => cfg.episodes = parse_value(key, value, *line_no)?,
            "state_dim" => {
                cfg.state_dim = match value.as_str() {
                    "2" => StateDim::Two,
                    "3" => StateDim::Three,
                    other => {
                        return Err(ConfigError::BadValue {
                            line_no: *line_no,
                            key: key.into(),
                            value: other.into(),
                            reason: "expected 2 or 3".into(),
                        })
                    }
                }
            }
            _ => return Err(ConfigError::NotApplicable { key: key.clone(), target: "q-learning" }),
        }
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1], got {}", cfg.alpha)));
    }
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(invalid(format!("gamma must be in [0, 1], got {}", cfg.gamma)));
    }
    if !(0.0..=1.0).contains(&cfg.p0) || !(0.0..=1.0).contains(&cfg.q0) {
        return Err(invalid("p0 and q0 must be in [0, 1]"));
    }
    if cfg.p0 + cfg.q0 > 1.0 {
        return Err(invalid(format!("p0 + q0 must be at most 1, got {}", cfg.p0 + cfg.q0)));
    }
    if cfg.decay_period == 0 {
        return Err(invalid("decay_period must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.decay_ratio) {
        return Err(invalid(format!("decay_ratio must be in [0, 1), got {}", cfg.decay_ratio)));
    }
    if cfg.episodes == 0 {
        return Err(invalid("episodes must be at least 1"));
    }
    Ok(())
}

/// Applies policy-gradient keys onto `cfg`; any other key errors.
pub fn apply_pg(raw: &RawConfig, cfg: &mut PGConfig) -> Result<(), ConfigError> {
    for (key, value, line_no) in &raw.entries {
        match key.as_str() {
            "alpha_lin" => cfg.alpha_lin = parse_value(key, value, *line_no)?,
            "alpha_ang" => cfg.alpha_ang = parse_value(key, value, *line_no)?,
            "gamma" => cfg.gamma = parse_value(key, value, *line_no)?,
            "batch_size" => cfg.batch_size = parse_value(key, value, *line_no)?,
            "episodes" => cfg.episodes = parse_value(key, value, *line_no)?,
            "sigma0" => cfg.sigma0 = parse_value(key, value, *line_no)?,
            "sigma_min" => cfg.sigma_min = parse_value(key, value, *line_no)?,
            _ => {
                return Err(ConfigError::NotApplicable {
                    key: key.clone(),
                    target: "policy-gradient",
                })
            }
        }
    }
    if cfg.alpha_lin <= 0.0 || cfg.alpha_ang <= 0.0 {
        return Err(invalid("learning rates must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(invalid(format!("gamma must be in [0, 1], got {}", cfg.gamma)));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size must be at least 1"));
    }
    if cfg.sigma0 <= 0.0 || cfg.sigma_min <= 0.0 {
        return Err(invalid("sigma0 and sigma_min must be positive"));
    }
    Ok(())
}

/// Applies multi-task keys onto `cfg`; any other key errors.
pub fn apply_ella(raw: &RawConfig, cfg: &mut EllaConfig) -> Result<(), ConfigError> {
    for (key, value, line_no) in &raw.entries {
        match key.as_str() {
            "k" => cfg.k = parse_value(key, value, *line_no)?,
            "mu" => cfg.mu = parse_value(key, value, *line_no)?,
            "lambda" => cfg.lambda = parse_value(key, value, *line_no)?,
            "trajectories_per_task" => {
                cfg.trajectories_per_task = parse_value(key, value, *line_no)?
            }
            "hessian_ridge" => cfg.hessian_ridge = parse_value(key, value, *line_no)?,
            _ => {
                return Err(ConfigError::NotApplicable { key: key.clone(), target: "multi-task" })
            }
        }
    }
    if cfg.k == 0 || cfg.k > STACKED_DIM {
        return Err(invalid(format!("k must be in 1..={STACKED_DIM}, got {}", cfg.k)));
    }
    if cfg.mu < 0.0 || cfg.lambda < 0.0 {
        return Err(invalid("mu and lambda must be nonnegative"));
    }
    if cfg.trajectories_per_task == 0 {
        return Err(invalid("trajectories_per_task must be at least 1"));
    }
    if cfg.hessian_ridge <= 0.0 {
        return Err(invalid("hessian_ridge must be positive"));
    }
    Ok(())
}
