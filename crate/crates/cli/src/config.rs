//! Experiment configuration: `[model]`, `[actions]`, `[solver]`, `[sim]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ratectl_core::model::{ActionSet, Capacity, Criterion, ModelParams, Payment, Point};
use ratectl_core::solver::SolveOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Unanchored { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentKey {
    Arrival,
    Completion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKey {
    Average,
    Discounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub r: f64,
    pub h: f64,
    pub c: f64,
    pub theta: f64,
    #[serde(default = "default_payment")]
    pub payment: PaymentKey,
    #[serde(default = "default_criterion")]
    pub criterion: CriterionKey,
    /// Required for the discounted criterion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Buffer size `N`; absent for an infinite buffer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

fn default_payment() -> PaymentKey {
    PaymentKey::Arrival
}

fn default_criterion() -> CriterionKey {
    CriterionKey::Average
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Quadratic,
    Linear,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionsSection {
    /// Explicit `[mu, f]` pairs; when present the grid keys are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostKind>,
    /// Coefficient of the quadratic or linear cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// One cost per grid rate, for `cost = "table"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Fixed truncation level; chosen by doubling when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    pub tie_eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub prune: bool,
    pub trusted_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_eps: Option<f64>,
    pub initial_truncation: usize,
    pub max_states: usize,
    pub concavity_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            truncation: None,
            tie_eps: o.tie_eps,
            max_iter: o.max_iter,
            prune: o.prune,
            trusted_fraction: o.trusted_fraction,
            tail_eps: o.tail_eps,
            initial_truncation: o.initial_truncation,
            max_states: o.max_states,
            concavity_tol: o.concavity_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
    pub start: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: 1e5,
            reps: 30,
            seed: 1,
            start: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub actions: ActionsSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sim: SimSection,
}

/// A parsed configuration together with its source, for line-anchored
/// diagnostics.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub path: String,
    pub source: String,
    pub config: Config,
}

impl fmt::Display for Loaded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path)
    }
}

/// 1-based line of `key` inside `[section]`, if it appears literally.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}

impl Loaded {
    pub fn from_str(path: &str, source: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(source).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let loaded = Self {
            path: path.to_string(),
            source: source.to_string(),
            config,
        };
        loaded.params()?;
        loaded.actions()?;
        Ok(loaded)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: display.clone(),
            source,
        })?;
        Self::from_str(&display, &source)
    }

    fn invalid(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        let message = message.into();
        match locate(&self.source, section, key) {
            Some(line) => ConfigError::Invalid {
                path: self.path.clone(),
                line,
                message,
            },
            None => ConfigError::Unanchored {
                path: self.path.clone(),
                message: format!("[{section}] {message}"),
            },
        }
    }

    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        params_of(&self.config).map_err(|(key, msg)| self.invalid("model", key, msg))
    }

    pub fn actions(&self) -> Result<ActionSet, ConfigError> {
        actions_of(&self.config.actions).map_err(|(key, msg)| self.invalid("actions", key, msg))
    }

    pub fn options(&self) -> SolveOptions {
        options_of(&self.config.solver)
    }
}

type KeyError = (&'static str, String);

pub fn params_of(config: &Config) -> Result<ModelParams, KeyError> {
    let m = &config.model;
    let mut p = ModelParams::new(m.lambda, m.r, m.h, m.c, m.theta);
    p.payment = match m.payment {
        PaymentKey::Arrival => Payment::AtArrival,
        PaymentKey::Completion => Payment::AtCompletion,
    };
    p.capacity = match m.capacity {
        Some(n) => Capacity::Finite(n),
        None => Capacity::Infinite,
    };
    p.criterion = match (m.criterion, m.alpha) {
        (CriterionKey::Average, _) => Criterion::Average,
        (CriterionKey::Discounted, Some(alpha)) => Criterion::Discounted { alpha },
        (CriterionKey::Discounted, None) => {
            return Err((
                "criterion",
                "alpha is required for the discounted criterion".into(),
            ))
        }
    };
    if let Err(errors) = p.validate() {
        return Err((errors[0].field, errors[0].message.clone()));
    }
    Ok(p)
}

pub fn actions_of(a: &ActionsSection) -> Result<ActionSet, KeyError> {
    if let Some(points) = &a.points {
        if points.is_empty() {
            return Err(("points", "action set empty".into()));
        }
        if let Some(k) = points
            .iter()
            .position(|p| !(p[0] > 0.0 && p[0].is_finite()))
        {
            return Err(("points", format!("point {k}: mu must be > 0")));
        }
        return Ok(ActionSet::new(
            points.iter().map(|p| Point::new(p[0], p[1])).collect(),
        ));
    }
    let mu_min = a
        .mu_min
        .ok_or(("mu_min", "mu_min is required for a grid".to_string()))?;
    let mu_max = a
        .mu_max
        .ok_or(("mu_max", "mu_max is required for a grid".to_string()))?;
    let step = a
        .grid_step
        .ok_or(("grid_step", "grid_step is required for a grid".to_string()))?;
    if mu_min.is_nan() || mu_min <= 0.0 {
        return Err(("mu_min", "mu_min must be > 0".into()));
    }
    let cost = a.cost.ok_or((
        "cost",
        "cost must be one of quadratic, linear, table".to_string(),
    ))?;
    let set = match cost {
        CostKind::Quadratic | CostKind::Linear => {
            let k = a.k.ok_or((
                "k",
                "k is required for quadratic and linear costs".to_string(),
            ))?;
            if cost == CostKind::Quadratic {
                ActionSet::quadratic_grid(mu_min, mu_max, step, k)
            } else {
                ActionSet::linear_grid(mu_min, mu_max, step, k)
            }
        }
        CostKind::Table => {
            let costs = a.costs.as_ref().ok_or((
                "costs",
                "costs is required for cost = \"table\"".to_string(),
            ))?;
            let grid = ActionSet::grid(mu_min, mu_max, step, |_| 0.0)
                .map_err(|e| ("grid_step", e.to_string()))?;
            if grid.len() != costs.len() {
                return Err((
                    "costs",
                    format!(
                        "costs has {} entries but the grid has {} rates",
                        costs.len(),
                        grid.len()
                    ),
                ));
            }
            Ok(ActionSet::new(
                grid.points
                    .iter()
                    .zip(costs)
                    .map(|(p, f)| Point::new(p.mu, *f))
                    .collect(),
            ))
        }
    };
    set.map_err(|e| match e {
        ratectl_core::Error::Invalid(errs) => (
            match errs[0].field {
                "mu_max" => "mu_max",
                _ => "grid_step",
            },
            errs[0].message.clone(),
        ),
        other => ("actions", other.to_string()),
    })
}

pub fn options_of(s: &SolverSection) -> SolveOptions {
    SolveOptions {
        tie_eps: s.tie_eps,
        max_iter: s.max_iter,
        prune: s.prune,
        trusted_fraction: s.trusted_fraction,
        tail_eps: s.tail_eps,
        initial_truncation: s.initial_truncation,
        max_states: s.max_states,
        concavity_tol: s.concavity_tol,
    }
}
