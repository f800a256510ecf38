//! Structural predicates on solved policies and value vectors.
//!
//! Every check is a pure function of report data. For truncated infinite
//! buffers, callers restrict the input to the trusted zone (see
//! [`trusted_top`]) because the reflecting boundary perturbs the top states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::Evaluation;
use crate::model::{ActionSet, Criterion, ModelParams, Payment};
use crate::solver::SolveReport;

/// Slack applied to every inequality.
pub const BOUND_SLACK: f64 = 1e-8;

/// Default tolerance on second differences.
pub const CONCAVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub ok: bool,
    /// First state `i` with `mu(i) > mu(i+1)`.
    pub first_violation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalCheck {
    pub ok: bool,
    /// Smallest peak state `k`, when the shape holds.
    pub peak: Option<usize>,
    /// Whether the rate strictly drops somewhere after the peak.
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub ok: bool,
    /// Largest second difference and the state `i` of `D2(i)` where it occurs.
    pub worst: Option<f64>,
    pub state: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Satisfied,
    Violated,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub status: BoundStatus,
    /// Smallest slack over the checked states (negative when violated).
    pub margin: Option<f64>,
}

impl BoundCheck {
    fn skipped(name: &str) -> Self {
        Self {
            name: name.to_string(),
            status: BoundStatus::Skipped,
            margin: None,
        }
    }

    fn from_margin(name: &str, margin: f64) -> Self {
        let status = if margin >= -BOUND_SLACK {
            BoundStatus::Satisfied
        } else {
            BoundStatus::Violated
        };
        Self {
            name: name.to_string(),
            status,
            margin: Some(margin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionComparison {
    /// `mu_arrival(i) <= mu_completion(i)` on every compared state.
    pub mu_ordered: bool,
    /// `min_i (mu_completion(i) - mu_arrival(i))`.
    pub mu_margin: f64,
    pub first_violation: Option<usize>,
    /// Completion objective does not exceed the arrival objective.
    pub objective_ordered: bool,
    /// Arrival objective minus completion objective.
    pub objective_margin: f64,
    pub states_compared: usize,
}

/// Highest state inside the trusted zone of a solve on `0..=top`.
pub fn trusted_top(params: &ModelParams, top: usize, excluded_fraction: f64) -> usize {
    if params.finite_capacity().is_some() {
        return top;
    }
    let cut = (top as f64 * excluded_fraction).ceil() as usize;
    top.saturating_sub(cut).max(1.min(top))
}

/// Checks that `mu` (rates for states `1, 2, ...`) is nondecreasing.
pub fn check_monotone(mu: &[f64]) -> MonotoneCheck {
    let first_violation = mu.windows(2).position(|w| w[0] > w[1]).map(|k| k + 1);
    MonotoneCheck {
        ok: first_violation.is_none(),
        first_violation,
    }
}

/// Checks the increase-then-decrease shape of `mu` (states `1, 2, ...`).
pub fn check_unimodal(mu: &[f64]) -> UnimodalCheck {
    if mu.is_empty() {
        return UnimodalCheck {
            ok: true,
            peak: None,
            decreasing: false,
        };
    }
    // any valid peak sits at a maximum; the first maximum is valid whenever
    // some peak is
    let max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = mu.iter().position(|&x| x == max).unwrap_or(0);
    let rising = mu[..=m].windows(2).all(|w| w[0] <= w[1]);
    let falling = mu[m..].windows(2).all(|w| w[0] >= w[1]);
    let ok = rising && falling;
    UnimodalCheck {
        ok,
        peak: ok.then_some(m + 1),
        decreasing: ok && mu[m..].windows(2).any(|w| w[0] > w[1]),
    }
}

/// Checks `D2 v <= tol` over all of `values`.
pub fn check_concavity(values: &[f64], tol: f64) -> ConcavityCheck {
    let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    check_concavity_deltas(&deltas, tol)
}

/// As [`check_concavity`], from first differences.
pub fn check_concavity_deltas(deltas: &[f64], tol: f64) -> ConcavityCheck {
    let mut worst: Option<(usize, f64)> = None;
    for (i, w) in deltas.windows(2).enumerate() {
        let d2 = w[1] - w[0];
        if worst.is_none_or(|(_, x)| d2 > x) {
            worst = Some((i, d2));
        }
    }
    ConcavityCheck {
        ok: worst.is_none_or(|(_, x)| x <= tol),
        worst: worst.map(|w| w.1),
        state: worst.map(|w| w.0),
    }
}

/// Value, gain and increment bounds for a solved evaluation, restricted to
/// states `0..=trusted`.
///
/// With `K = (h + c*theta)/(alpha + theta)` (discounted) or
/// `(h + c*theta)/theta` (average):
/// - `Dv >= -K` always;
/// - `v(i) >= (lambda/alpha)(r - K) - K*i` and `g >= lambda*(r - K)` at
///   arrival payment, which are the values of the idle policy; at completion
///   payment the idle policy earns no reward, so `r` drops out;
/// - when every action cost is non-negative: `Dv <= 0` (arrival) or `Dv <= r`
///   (completion), `g <= lambda*r`, and `v(i) <= lambda*r/alpha` at arrival.
///
/// Finite buffers are not covered and every bound is reported skipped.
pub fn evaluation_bounds(
    evaluation: &Evaluation,
    params: &ModelParams,
    min_cost: f64,
    trusted: usize,
) -> Vec<BoundCheck> {
    let nonneg = min_cost >= 0.0;
    let completion = params.payment == Payment::AtCompletion;
    let names: &[&str] = match evaluation.criterion {
        Criterion::Average => &["delta_lower", "gain_lower", "delta_upper", "gain_upper"],
        Criterion::Discounted { .. } => {
            &["delta_lower", "value_lower", "delta_upper", "value_upper"]
        }
    };
    if params.finite_capacity().is_some() {
        return names.iter().map(|n| BoundCheck::skipped(n)).collect();
    }
    let load = params.abandonment_load();
    let income = if completion { 0.0 } else { params.r };
    let trusted = trusted.min(evaluation.top());
    let deltas = &evaluation.deltas[..trusted.min(evaluation.deltas.len())];
    let min_over = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);

    let mut out = Vec::with_capacity(4);
    match evaluation.criterion {
        Criterion::Average => {
            let k = load / params.theta;
            let g = evaluation.gain.unwrap_or(f64::NAN);
            out.push(BoundCheck::from_margin(
                "delta_lower",
                min_over(&mut deltas.iter().map(|d| d + k)),
            ));
            out.push(BoundCheck::from_margin(
                "gain_lower",
                g - params.lambda * (income - k),
            ));
            if nonneg {
                let cap = if completion { params.r } else { 0.0 };
                out.push(BoundCheck::from_margin(
                    "delta_upper",
                    min_over(&mut deltas.iter().map(|d| cap - d)),
                ));
                out.push(BoundCheck::from_margin(
                    "gain_upper",
                    params.lambda * params.r - g,
                ));
            } else {
                out.push(BoundCheck::skipped("delta_upper"));
                out.push(BoundCheck::skipped("gain_upper"));
            }
        }
        Criterion::Discounted { alpha } => {
            let k = load / (alpha + params.theta);
            let values = &evaluation.values[..=trusted];
            out.push(BoundCheck::from_margin(
                "delta_lower",
                min_over(&mut deltas.iter().map(|d| d + k)),
            ));
            let base = params.lambda / alpha * (income - k);
            out.push(BoundCheck::from_margin(
                "value_lower",
                min_over(
                    &mut values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v - (base - k * i as f64)),
                ),
            ));
            if nonneg {
                let cap = if completion { params.r } else { 0.0 };
                out.push(BoundCheck::from_margin(
                    "delta_upper",
                    min_over(&mut deltas.iter().map(|d| cap - d)),
                ));
                if completion {
                    out.push(BoundCheck::skipped("value_upper"));
                } else {
                    let top = params.lambda * params.r / alpha;
                    out.push(BoundCheck::from_margin(
                        "value_upper",
                        min_over(&mut values.iter().map(|v| top - v)),
                    ));
                }
            } else {
                out.push(BoundCheck::skipped("delta_upper"));
                out.push(BoundCheck::skipped("value_upper"));
            }
        }
    }
    out
}

/// Bounds for a completed solve; see [`evaluation_bounds`].
pub fn check_bounds(
    report: &SolveReport,
    params: &ModelParams,
    actions: &ActionSet,
) -> Vec<BoundCheck> {
    evaluation_bounds(
        &report.evaluation,
        params,
        actions.min_cost().min(params.idle_point().f),
        report.diagnostics.trusted_top,
    )
}

/// Compares an arrival-payment solve with its completion-payment twin.
pub fn compare_versions(
    arrival: &SolveReport,
    completion: &SolveReport,
) -> Result<VersionComparison> {
    let (a, c) = (&arrival.params, &completion.params);
    if a.payment != Payment::AtArrival || c.payment != Payment::AtCompletion {
        return Err(Error::Mismatch(
            "expected an arrival report and a completion report".into(),
        ));
    }
    let same = a.lambda == c.lambda
        && a.r == c.r
        && a.h == c.h
        && a.c == c.c
        && a.theta == c.theta
        && a.capacity == c.capacity
        && a.criterion == c.criterion;
    if !same {
        return Err(Error::Mismatch(
            "reports were solved on different parameters".into(),
        ));
    }
    if arrival.truncation != completion.truncation {
        return Err(Error::Mismatch(format!(
            "truncation levels differ: {} vs {}",
            arrival.truncation, completion.truncation
        )));
    }
    if arrival.envelope.raw_points != completion.envelope.raw_points
        || arrival.envelope.resolution != completion.envelope.resolution
    {
        return Err(Error::Mismatch(
            "reports were solved on different action grids".into(),
        ));
    }
    let states = arrival
        .diagnostics
        .trusted_top
        .min(completion.diagnostics.trusted_top);
    let mut mu_margin = f64::INFINITY;
    let mut first_violation = None;
    for i in 1..=states {
        let d = completion.policy.at(i).mu - arrival.policy.at(i).mu;
        if d < 0.0 && first_violation.is_none() {
            first_violation = Some(i);
        }
        mu_margin = mu_margin.min(d);
    }
    let objective_margin = arrival.objective - completion.objective;
    Ok(VersionComparison {
        mu_ordered: first_violation.is_none(),
        mu_margin,
        first_violation,
        objective_ordered: objective_margin >= -BOUND_SLACK,
        objective_margin,
        states_compared: states,
    })
}
