//! Flat key=value experiment configuration with `[objective]`,
//! `[optimizer]`, and `[run]` sections.
//!
//! The format is INI-style on purpose: zero parsing dependencies, easy to
//! diff across sweep directories, and every value round-trips as text.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::objectives::{objective_by_name, Objective, ObjectiveError};
use crate::optim::{OptimError, OptimizerSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("missing key '{key}' in section [{section}]")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("bad value for '{key}': {value}")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sectioned key=value document.
pub type Sections = BTreeMap<String, BTreeMap<String, String>>;

/// Parses INI-style text: `[section]` headers, `key = value` lines,
/// `#`/`;` comments, blank lines ignored.
pub fn parse_ini(text: &str) -> Result<Sections, ConfigError> {
    let mut out: Sections = BTreeMap::new();
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            out.entry(current.clone()).or_default();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: i + 1,
                reason: format!("expected 'key = value', got '{line}'"),
            });
        };
        if current.is_empty() {
            return Err(ConfigError::Parse {
                line: i + 1,
                reason: "key before any [section] header".into(),
            });
        }
        out.get_mut(&current)
            .expect("section inserted above")
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Initial-point specification.
#[derive(Debug, Clone, PartialEq)]
pub enum X0Spec {
    Explicit(Vec<f64>),
    /// Uniform draw per coordinate from `[lo, hi]`, using the init stream.
    RandomBox { lo: f64, hi: f64 },
}

impl X0Spec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if let Some(rest) = s.strip_prefix("random:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(|| ConfigError::BadValue {
                key: "x0".into(),
                value: s.into(),
            })?;
            let lo: f64 = lo.parse().map_err(|_| ConfigError::BadValue {
                key: "x0".into(),
                value: s.into(),
            })?;
            let hi: f64 = hi.parse().map_err(|_| ConfigError::BadValue {
                key: "x0".into(),
                value: s.into(),
            })?;
            if !(lo < hi) {
                return Err(ConfigError::BadValue {
                    key: "x0".into(),
                    value: s.into(),
                });
            }
            Ok(Self::RandomBox { lo, hi })
        } else {
            let coords: Result<Vec<f64>, _> = s.split(',').map(|c| c.trim().parse()).collect();
            match coords {
                Ok(v) if !v.is_empty() => Ok(Self::Explicit(v)),
                _ => Err(ConfigError::BadValue {
                    key: "x0".into(),
                    value: s.into(),
                }),
            }
        }
    }

    pub fn to_string_value(&self) -> String {
        match self {
            Self::Explicit(v) => v
                .iter()
                .map(|c| format!("{c}"))
                .collect::<Vec<_>>()
                .join(","),
            Self::RandomBox { lo, hi } => format!("random:{lo}:{hi}"),
        }
    }
}

/// Full experiment description: what to optimize, how, and for how long.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub objective_name: String,
    pub optimizer: OptimizerSpec,
    pub x0: X0Spec,
    pub steps: u64,
    pub noise_sigma: f64,
    pub n_batch: usize,
    pub stride: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub emit_lyapunov: bool,
}

impl ExperimentConfig {
    pub fn from_sections(sections: &Sections) -> Result<Self, ConfigError> {
        let obj_sec = sections
            .get("objective")
            .ok_or(ConfigError::MissingSection("objective"))?;
        let objective_name = obj_sec
            .get("name")
            .ok_or(ConfigError::MissingKey {
                section: "objective",
                key: "name",
            })?
            .clone();
        let opt_sec = sections
            .get("optimizer")
            .ok_or(ConfigError::MissingSection("optimizer"))?;
        let optimizer = OptimizerSpec::from_kv(opt_sec)?;
        let run_sec = sections
            .get("run")
            .ok_or(ConfigError::MissingSection("run"))?;
        let get_or = |key: &str, default: &str| -> String {
            run_sec.get(key).cloned().unwrap_or_else(|| default.into())
        };
        let parse_num = |key: &str, value: &str| -> Result<f64, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        };
        let x0 = X0Spec::parse(run_sec.get("x0").ok_or(ConfigError::MissingKey {
            section: "run",
            key: "x0",
        })?)?;
        let steps = parse_num("steps", &get_or("steps", "1000"))? as u64;
        let stride = parse_num("stride", &get_or("stride", "1"))? as u64;
        let config = Self {
            objective_name,
            optimizer,
            x0,
            steps,
            noise_sigma: parse_num("noise_sigma", &get_or("noise_sigma", "0"))?,
            n_batch: parse_num("n_batch", &get_or("n_batch", "1"))? as usize,
            stride,
            seed: parse_num("seed", &get_or("seed", "0"))? as u64,
            out: run_sec.get("out").map(PathBuf::from),
            emit_lyapunov: get_or("emit_lyapunov", "false") == "true",
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_sections(&parse_ini(text)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps < 1 {
            return Err(ConfigError::BadValue {
                key: "steps".into(),
                value: self.steps.to_string(),
            });
        }
        if self.stride < 1 {
            return Err(ConfigError::BadValue {
                key: "stride".into(),
                value: self.stride.to_string(),
            });
        }
        if self.n_batch < 1 {
            return Err(ConfigError::BadValue {
                key: "n_batch".into(),
                value: self.n_batch.to_string(),
            });
        }
        if self.noise_sigma < 0.0 {
            return Err(ConfigError::BadValue {
                key: "noise_sigma".into(),
                value: self.noise_sigma.to_string(),
            });
        }
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn objective(&self) -> Result<Objective, ConfigError> {
        Ok(objective_by_name(&self.objective_name)?)
    }

    /// Serializes back to INI text (omitting the out path).
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        s.push_str("[objective]\n");
        s.push_str(&format!("name = {}\n\n", self.objective_name));
        s.push_str("[optimizer]\n");
        for (k, v) in self.optimizer.to_kv() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str("\n[run]\n");
        s.push_str(&format!("x0 = {}\n", self.x0.to_string_value()));
        s.push_str(&format!("steps = {}\n", self.steps));
        s.push_str(&format!("noise_sigma = {}\n", self.noise_sigma));
        s.push_str(&format!("n_batch = {}\n", self.n_batch));
        s.push_str(&format!("stride = {}\n", self.stride));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("emit_lyapunov = {}\n", self.emit_lyapunov));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{DecayMode, Family};

    const SAMPLE: &str = "
# demo config
[objective]
name = toy_parabola

[optimizer]
family = adam
eta = 0.01
beta1 = 0.9
beta2 = 0.95
lambda = 0.5
decay = cautious

[run]
x0 = random:-4:4
steps = 2000
noise_sigma = 0.1
n_batch = 8
stride = 10
seed = 7
";

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::from_str(SAMPLE).unwrap();
        assert_eq!(cfg.objective_name, "toy_parabola");
        assert_eq!(cfg.optimizer.family, Family::Adam);
        assert_eq!(cfg.optimizer.decay, DecayMode::Cautious);
        assert_eq!(cfg.steps, 2000);
        assert_eq!(cfg.stride, 10);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.x0, X0Spec::RandomBox { lo: -4.0, hi: 4.0 });
        cfg.objective().unwrap();
    }

    #[test]
    fn roundtrips_through_ini_text() {
        let cfg = ExperimentConfig::from_str(SAMPLE).unwrap();
        let cfg2 = ExperimentConfig::from_str(&cfg.to_ini()).unwrap();
        assert_eq!(cfg.objective_name, cfg2.objective_name);
        assert_eq!(cfg.optimizer, cfg2.optimizer);
        assert_eq!(cfg.x0, cfg2.x0);
        assert_eq!(cfg.steps, cfg2.steps);
    }

    #[test]
    fn rejects_zero_steps_and_bad_lines() {
        let bad = SAMPLE.replace("steps = 2000", "steps = 0");
        assert!(ExperimentConfig::from_str(&bad).is_err());
        assert!(parse_ini("key_without_section = 1").is_err());
        assert!(parse_ini("[run]\nnot a pair").is_err());
    }

    #[test]
    fn explicit_x0_parses() {
        let x = X0Spec::parse("1.0, -2.5,3").unwrap();
        assert_eq!(x, X0Spec::Explicit(vec![1.0, -2.5, 3.0]));
        assert!(X0Spec::parse("random:4:-4").is_err());
    }
}
