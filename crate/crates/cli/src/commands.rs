//! The four subcommands. Each returns whether every applicable theorem check
//! passed; errors map to exit code 1 in `main`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use ratectl_core::evaluate::evaluate;
use ratectl_core::model::{self, Capacity, Criterion, ModelParams, Payment, Policy};
use ratectl_core::sim::simulate;
use ratectl_core::solver::{
    self, diagnose, policy_iteration, Diagnostics, EnvelopeMeta, IterationRecord, SolveReport,
    Stabilization,
};

use crate::config::{actions_of, params_of, Config, CriterionKey, Loaded};
use crate::policy_io::{read_policy, write_policy};

/// Largest z-score accepted by `simulate`.
pub const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Verified,
    Unverified,
}

impl Status {
    fn from(ok: bool) -> Self {
        if ok {
            Status::Verified
        } else {
            Status::Unverified
        }
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_toml<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let text = toml::to_string(doc).context("cannot render report")?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn solve_config(config: &Config) -> Result<SolveReport> {
    let params = params_of(config).map_err(|(k, m)| anyhow::anyhow!("[model] {k}: {m}"))?;
    let actions =
        actions_of(&config.actions).map_err(|(k, m)| anyhow::anyhow!("[actions] {k}: {m}"))?;
    let opts = crate::config::options_of(&config.solver);
    let report = match (params.capacity, config.solver.truncation) {
        (Capacity::Infinite, Some(top)) => policy_iteration(&params, &actions, top, &opts)?,
        _ => solver::solve(&params, &actions, &opts)?,
    };
    Ok(report)
}

#[derive(Serialize)]
struct SolveDocument<'a> {
    command: &'static str,
    objective: f64,
    iterations: usize,
    truncation: usize,
    tail_limit: Option<f64>,
    verified: bool,
    policy_file: String,
    diagnostics: &'a Diagnostics,
    envelope: &'a EnvelopeMeta,
    stabilization: Option<&'a Stabilization>,
    trace: &'a [IterationRecord],
    config: &'a Config,
}

/// Solves the configured problem; writes `policy.csv` and `report.toml`.
pub fn solve(loaded: &Loaded, out: &Path) -> Result<Status> {
    prepare_out(out)?;
    let report = solve_config(&loaded.config)?;
    let policy_path = out.join("policy.csv");
    write_policy(&policy_path, &report.policy, report.deltas())?;
    let doc = SolveDocument {
        command: "solve",
        objective: report.objective,
        iterations: report.iterations,
        truncation: report.truncation,
        tail_limit: report.tail_limit,
        verified: report.diagnostics.verified,
        policy_file: "policy.csv".into(),
        diagnostics: &report.diagnostics,
        envelope: &report.envelope,
        stabilization: report.stabilization.as_ref(),
        trace: &report.trace,
        config: &loaded.config,
    };
    write_toml(&out.join("report.toml"), &doc)?;
    println!(
        "objective {} | L = {} | iterations {} | tail limit {} | verified {}",
        report.objective,
        report.truncation,
        report.iterations,
        report.tail_limit.map_or("-".to_string(), |m| m.to_string()),
        report.diagnostics.verified
    );
    Ok(Status::from(report.diagnostics.verified))
}

/// Loads a policy and checks that it fits the configured model and grid.
fn load_policy(
    loaded: &Loaded,
    path: &Path,
) -> Result<(ModelParams, model::ValidatedActions, Policy)> {
    let params = loaded.params()?;
    let actions = loaded.actions()?;
    let validated = model::validate(&params, &actions)?;
    let policy = read_policy(path)?;
    if policy.is_empty() {
        bail!("{}: policy has no states", path.display());
    }
    if let Some(n) = params.finite_capacity() {
        if policy.len() != n {
            bail!(
                "{}: dimension mismatch: policy covers {} states but capacity is {n}",
                path.display(),
                policy.len()
            );
        }
    }
    for (i, p) in policy.points().iter().enumerate() {
        if !validated.actions.contains(*p) {
            bail!(
                "{}: state {}: action (mu = {}, f = {}) is not in the configured action set",
                path.display(),
                i + 1,
                p.mu,
                p.f
            );
        }
    }
    Ok((params, validated, policy))
}

#[derive(Serialize)]
struct CheckDocument<'a> {
    command: &'static str,
    objective: f64,
    states: usize,
    residual: f64,
    verified: bool,
    diagnostics: &'a Diagnostics,
    config: &'a Config,
}

/// Evaluates a user policy and runs every structural check on it.
pub fn check(loaded: &Loaded, policy_path: &Path, out: Option<&Path>) -> Result<Status> {
    let (params, validated, policy) = load_policy(loaded, policy_path)?;
    let ev = evaluate(&policy, &params)?;
    let d = diagnose(
        &params,
        &policy,
        &ev,
        validated.actions.min_cost(),
        &loaded.options(),
    );
    if let Some(out) = out {
        prepare_out(out)?;
        write_toml(
            &out.join("check.toml"),
            &CheckDocument {
                command: "check",
                objective: ev.objective(),
                states: policy.len(),
                residual: ev.residual,
                verified: d.verified,
                diagnostics: &d,
                config: &loaded.config,
            },
        )?;
    }
    println!(
        "objective {} | states {} | verified {}",
        ev.objective(),
        policy.len(),
        d.verified
    );
    if !d.monotone {
        println!(
            "monotonicity fails at state {}",
            d.first_violation.unwrap_or(0)
        );
    }
    if !d.concave {
        println!("concavity fails: max second difference {:?}", d.delta2_max);
    }
    if d.unimodal == Some(false) {
        println!("unimodality fails");
    }
    for b in &d.bound_checks {
        if b.status == ratectl_core::structure::BoundStatus::Violated {
            println!("bound {} violated (margin {:?})", b.name, b.margin);
        }
    }
    Ok(Status::from(d.verified))
}

#[derive(Serialize)]
struct EstimateDocument {
    command: &'static str,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_error: Option<f64>,
    analytic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<f64>,
    replications: usize,
    horizon: f64,
    seed: u64,
    start: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub horizon: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
}

/// Simulates a policy and compares the estimate with its exact evaluation.
pub fn simulate_policy(
    loaded: &Loaded,
    policy_path: &Path,
    overrides: &SimOverrides,
    out: &Path,
) -> Result<Status> {
    let (params, _, policy) = load_policy(loaded, policy_path)?;
    let sim = &loaded.config.sim;
    let horizon = overrides.horizon.unwrap_or(sim.horizon);
    let reps = overrides.reps.unwrap_or(sim.reps);
    let seed = overrides.seed.unwrap_or(sim.seed);
    let ev = evaluate(&policy, &params)?;
    let analytic = match params.criterion {
        Criterion::Average => ev.gain.unwrap_or(f64::NAN),
        Criterion::Discounted { .. } => *ev
            .values
            .get(sim.start)
            .with_context(|| format!("start state {} is outside the policy", sim.start))?,
    };
    let est = simulate(
        &policy,
        &params,
        params.criterion,
        sim.start,
        horizon,
        reps,
        seed,
    )?;
    let z = est.z_score(analytic);
    prepare_out(out)?;
    write_toml(
        &out.join("estimate.toml"),
        &EstimateDocument {
            command: "simulate",
            estimate: est.estimate,
            std_error: est.std_error,
            analytic,
            z,
            replications: est.replications,
            horizon: est.horizon,
            seed,
            start: sim.start,
        },
    )?;
    match z {
        Some(z) => {
            println!(
                "estimate {} +- {} | analytic {analytic} | z = {z}",
                est.estimate,
                est.std_error.unwrap_or(0.0)
            );
            Ok(Status::from(z <= Z_LIMIT))
        }
        None => {
            eprintln!(
                "warning: a single replication gives no standard error; z-score not computed"
            );
            println!("estimate {} | analytic {analytic}", est.estimate);
            Ok(Status::Verified)
        }
    }
}

/// `name=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub values: Vec<f64>,
}

pub const SWEEP_PARAMS: [&str; 7] = ["r", "h", "c", "theta", "lambda", "alpha", "N"];

impl std::str::FromStr for SweepSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, list) = s
            .split_once('=')
            .with_context(|| format!("sweep must look like name=v1,v2,... (got {s:?})"))?;
        let name = name.trim();
        if !SWEEP_PARAMS.contains(&name) {
            bail!(
                "unknown sweep parameter {name:?}; expected one of {}",
                SWEEP_PARAMS.join(", ")
            );
        }
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse::<f64>()
                    .with_context(|| format!("bad sweep value {v:?}"))
            })
            .collect::<Result<Vec<_>>>()?;
        if name == "N" {
            if let Some(v) = values.iter().find(|v| v.fract() != 0.0 || **v < 1.0) {
                bail!("N must be a positive integer (got {v})");
            }
        }
        Ok(Self {
            name: name.to_string(),
            values,
        })
    }
}

fn with_value(config: &Config, name: &str, value: f64) -> Config {
    let mut c = config.clone();
    let m = &mut c.model;
    match name {
        "r" => m.r = value,
        "h" => m.h = value,
        "c" => m.c = value,
        "theta" => m.theta = value,
        "lambda" => m.lambda = value,
        "alpha" => {
            m.criterion = CriterionKey::Discounted;
            m.alpha = Some(value);
        }
        "N" => m.capacity = Some(value as usize),
        _ => unreachable!("sweep names are validated on parse"),
    }
    c
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    objective: f64,
    truncation: usize,
    verified: bool,
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    command: &'static str,
    parameter: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    cross_checks: BTreeMap<&'static str, bool>,
    solves: Vec<SweepRow>,
    config: &'a Config,
}

/// One solve per sweep value; writes the long table `sweep.csv`
/// (`value,state,mu`) and `sweep.toml`.
pub fn sweep(loaded: &Loaded, plan: &SweepSpec, out: &Path) -> Result<Status> {
    prepare_out(out)?;
    let configs: Vec<Config> = plan
        .values
        .iter()
        .map(|&v| with_value(&loaded.config, &plan.name, v))
        .collect();
    let mut reports: Vec<SolveReport> = configs
        .par_iter()
        .map(solve_config)
        .collect::<Result<_>>()?;

    // comparisons need a common truncation level on infinite buffers
    let infinite = reports
        .iter()
        .all(|r| r.params.capacity == Capacity::Infinite);
    if infinite && reports.len() > 1 {
        let top = reports.iter().map(|r| r.truncation).max().unwrap_or(0);
        reports = configs
            .par_iter()
            .zip(reports.into_par_iter())
            .map(|(c, r)| {
                if r.truncation == top {
                    return Ok(r);
                }
                let mut fixed = c.clone();
                fixed.solver.truncation = Some(top);
                solve_config(&fixed)
            })
            .collect::<Result<_>>()?;
    }

    let table_path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&table_path)
        .with_context(|| format!("cannot create {}", table_path.display()))?;
    w.write_record(["value", "state", "mu"])?;
    for (v, r) in plan.values.iter().zip(&reports) {
        for (i, p) in r.policy.points().iter().enumerate() {
            w.write_record([
                crate::policy_io::fmt17(*v),
                (i + 1).to_string(),
                crate::policy_io::fmt17(p.mu),
            ])?;
        }
    }
    w.flush()?;

    let mut cross_checks = BTreeMap::new();
    if plan.name == "r" && reports.len() > 1 {
        let mut order: Vec<usize> = (0..reports.len()).collect();
        order.sort_by(|&a, &b| plan.values[a].total_cmp(&plan.values[b]));
        let cols: Vec<Vec<f64>> = order.iter().map(|&k| reports[k].policy.mus()).collect();
        let same_len = cols.windows(2).all(|w| w[0].len() == w[1].len());
        match loaded.params()?.payment {
            Payment::AtArrival => {
                let identical = same_len
                    && cols.windows(2).all(|w| {
                        w[0].iter()
                            .zip(&w[1])
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                    });
                cross_checks.insert("arrival_policy_invariant_in_r", identical);
            }
            Payment::AtCompletion => {
                let monotone = same_len
                    && cols
                        .windows(2)
                        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
                cross_checks.insert("completion_rates_nondecreasing_in_r", monotone);
            }
        }
    }
    let all_verified = reports.iter().all(|r| r.diagnostics.verified);
    let cross_ok = cross_checks.values().all(|ok| *ok);
    write_toml(
        &out.join("sweep.toml"),
        &SweepDocument {
            command: "sweep",
            parameter: &plan.name,
            cross_checks: cross_checks.clone(),
            solves: plan
                .values
                .iter()
                .zip(&reports)
                .map(|(v, r)| SweepRow {
                    value: *v,
                    objective: r.objective,
                    truncation: r.truncation,
                    verified: r.diagnostics.verified,
                })
                .collect(),
            config: &loaded.config,
        },
    )?;
    println!("{} solves over {}", reports.len(), plan.name);
    for (name, ok) in &cross_checks {
        println!("{name}: {ok}");
    }
    Ok(Status::from(all_verified && cross_ok))
}
