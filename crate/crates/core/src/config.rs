//! Experiment settings from flat `key = value` files, JSON objects and
//! command-line overrides.
//!
//! Precedence is defaults, then file, then flags. The model is resolved
//! first because it determines the default parameters and caps.
//!
//! ```text
//! # Model 1 at the benchmark scale
//! model = ou
//! N = 100
//! K = 50
//! caps = 10,12
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::sim::Model;

/// Ordered `(canonical key, raw value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

const KEYS: &[&str] = &[
    "model",
    "n_paths",
    "horizon",
    "delta",
    "lag",
    "reps",
    "basis_x",
    "basis_y",
    "caps",
    "cap_m1",
    "cap_m2",
    "penalty",
    "kappa",
    "penalty_scale",
    "penalty_constant",
    "cutoff",
    "cutoff_exponent",
    "seed",
    "output_dir",
    "grid_x",
    "grid_y",
    "mise_normalization",
    "fixed_grid",
    "r",
    "gamma",
    "dim",
];

/// Maps a user-facing key to its canonical name. Single-letter aliases are
/// case-sensitive (`T` is the horizon, `t` the lag).
pub fn canonical_key(raw: &str) -> Result<&'static str> {
    let raw = raw.trim();
    let alias = match raw {
        "N" => Some("n_paths"),
        "T" => Some("horizon"),
        "t" => Some("lag"),
        "K" => Some("reps"),
        "d" => Some("dim"),
        _ => None,
    };
    if let Some(k) = alias {
        return Ok(k);
    }
    let norm = raw.to_ascii_lowercase().replace('-', "_");
    let aliased = match norm.as_str() {
        "out" | "output" => "output_dir",
        "kappa_b" => "kappa",
        "c_cut" => "cutoff",
        "basis" => "basis_x",
        other => other,
    };
    KEYS.iter()
        .find(|k| **k == aliased)
        .copied()
        .ok_or_else(|| Error::Configuration(format!("unknown key '{raw}'")))
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = canonical_key(key)?;
        self.entries.push((key.to_string(), value.into()));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut s = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Configuration(format!("line {}: expected key = value", i + 1))
            })?;
            s.set(k, v.trim())
                .map_err(|e| Error::Configuration(format!("line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    /// Parses a flat JSON object; `caps` may be a two-element array.
    pub fn parse_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Configuration("JSON settings must be an object".into()))?;
        let mut s = Self::new();
        for (k, v) in obj {
            let text = match v {
                serde_json::Value::String(x) => x.clone(),
                serde_json::Value::Number(x) => x.to_string(),
                serde_json::Value::Bool(x) => x.to_string(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        serde_json::Value::Number(n) => Ok(n.to_string()),
                        _ => Err(Error::Configuration(format!(
                            "{k}: array entries must be numbers"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?
                    .join(","),
                _ => return Err(Error::Configuration(format!("{k}: unsupported value {v}"))),
            };
            s.set(k, text)?;
        }
        Ok(s)
    }

    /// Reads a file; `.json` selects the JSON reader.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::parse_json(&text)
        } else {
            Self::parse_kv(&text)
        }
    }

    /// Applies every entry except `model` to `config`.
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        for (k, v) in &self.entries {
            apply_one(config, k, v).map_err(|e| match e {
                Error::Configuration(_) => e,
                other => Error::Configuration(format!("{k}: {other}")),
            })?;
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Configuration(format!("{key}: cannot parse '{v}'")))
}

fn parse_with<T, E: std::fmt::Display>(
    key: &str,
    v: &str,
    f: impl FnOnce(&str) -> std::result::Result<T, E>,
) -> Result<T> {
    f(v.trim()).map_err(|e| Error::Configuration(format!("{key}: {e}")))
}

fn apply_one(c: &mut ExperimentConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "model" => {}
        "n_paths" => c.n_paths = parse(key, v)?,
        "horizon" => c.horizon = parse(key, v)?,
        "delta" => c.delta = parse(key, v)?,
        "lag" => c.lag = parse(key, v)?,
        "reps" => c.reps = parse(key, v)?,
        "basis_x" => c.basis_x = parse_with(key, v, str::parse)?,
        "basis_y" => c.basis_y = parse_with(key, v, str::parse)?,
        "caps" => {
            let (a, b) = v.split_once(',').ok_or_else(|| {
                Error::Configuration(format!("caps: expected 'm1,m2', got '{v}'"))
            })?;
            c.caps = (parse(key, a)?, parse(key, b)?);
        }
        "cap_m1" => c.caps.0 = parse(key, v)?,
        "cap_m2" => c.caps.1 = parse(key, v)?,
        "penalty" => c.penalty = parse_with(key, v, str::parse)?,
        "kappa" => c.kappa = parse(key, v)?,
        "penalty_scale" => c.penalty_scale = parse_with(key, v, str::parse)?,
        "penalty_constant" => c.penalty_constant = parse_with(key, v, str::parse)?,
        "cutoff" => c.cutoff = parse(key, v)?,
        "cutoff_exponent" => c.cutoff_exponent = parse(key, v)?,
        "seed" => c.seed = parse(key, v)?,
        "output_dir" => c.output_dir = PathBuf::from(v.trim()),
        "grid_x" => c.grid_x = parse(key, v)?,
        "grid_y" => c.grid_y = parse(key, v)?,
        "mise_normalization" => c.mise_normalization = parse_with(key, v, str::parse)?,
        "fixed_grid" => c.fixed_grid = parse(key, v)?,
        "r" => c.r = parse(key, v)?,
        "gamma" => c.gamma = parse(key, v)?,
        "dim" => c.dim = parse(key, v)?,
        other => return Err(Error::Configuration(format!("unknown key '{other}'"))),
    }
    Ok(())
}

/// Builds a validated configuration from `defaults ← file ← flags`.
pub fn resolve(file: Option<&Settings>, flags: &Settings) -> Result<ExperimentConfig> {
    let model_text = flags
        .get("model")
        .or_else(|| file.and_then(|f| f.get("model")));
    let model = match model_text {
        Some(m) => parse_with("model", m, Model::from_str)?,
        None => Model::Ou,
    };
    let mut config = ExperimentConfig::defaults(model);
    if let Some(f) = file {
        f.apply(&mut config)?;
    }
    flags.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}
