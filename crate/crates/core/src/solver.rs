//! Policy iteration on the lower envelope, truncation control for infinite
//! buffers, tail limits, and a raw-grid value-iteration oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{evaluate, Evaluation};
use crate::hull::{self, best_index, lower_envelope, slope_cap, LowerEnvelope};
use crate::model::{self, ActionSet, Criterion, ModelParams, Payment, Policy};
use crate::structure::{self, BoundCheck, BoundStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Score margin within which the incumbent action is kept.
    pub tie_eps: f64,
    /// Iteration cap; `10 * L` when unset.
    pub max_iter: Option<usize>,
    /// Drop envelope breakpoints that cannot be optimal (infinite buffers).
    pub prune: bool,
    /// Fraction of top truncated states excluded from theorem checks.
    pub trusted_fraction: f64,
    /// Tail stabilization tolerance in `mu`; two grid steps when unset.
    pub tail_eps: Option<f64>,
    /// First truncation level tried by [`solve_infinite`].
    pub initial_truncation: usize,
    /// Truncation ceiling for [`solve_infinite`].
    pub max_states: usize,
    pub concavity_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tie_eps: hull::TIE_EPS,
            max_iter: None,
            prune: true,
            trusted_fraction: 0.05,
            tail_eps: None,
            initial_truncation: 256,
            max_states: 1 << 20,
            concavity_tol: structure::CONCAVITY_TOL,
        }
    }
}

/// One policy-iteration step: objective of the evaluated policy and the number
/// of states the following improvement changed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMeta {
    /// Points in the validated cloud, idle point included.
    pub raw_points: usize,
    pub breakpoints: usize,
    pub after_prune: usize,
    /// Largest gap between consecutive service rates of the user's grid.
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Highest state covered by the checks below.
    pub trusted_top: usize,
    pub monotone: bool,
    pub first_violation: Option<usize>,
    /// Finite buffers only.
    pub unimodal: Option<bool>,
    pub unimodal_peak: Option<usize>,
    pub decreasing_after_peak: bool,
    pub concave: bool,
    pub delta2_max: Option<f64>,
    pub delta2_state: Option<usize>,
    pub bound_checks: Vec<BoundCheck>,
    pub idle_everywhere: bool,
    /// Every theorem check that applies to this regime passed.
    pub verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationStep {
    pub truncation: usize,
    pub iterations: usize,
    /// `max |mu(i) - mu_inf|` over the top 10% of states.
    pub tail_margin: f64,
    /// States in the lower half of the previous level whose action changed.
    pub low_state_changes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub tail_eps: f64,
    pub tail_margin: f64,
    pub low_state_changes: usize,
    pub history: Vec<TruncationStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub params: ModelParams,
    pub policy: Policy,
    pub evaluation: Evaluation,
    /// `g` (average) or `v(0)` (discounted).
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Top state `L` (or `N`).
    pub truncation: usize,
    /// Infinite buffers only.
    pub tail_limit: Option<f64>,
    pub diagnostics: Diagnostics,
    pub envelope: EnvelopeMeta,
    pub stabilization: Option<Stabilization>,
}

impl SolveReport {
    /// `Dv(i-1)` or `Du(i-1)` for states `i = 1..=L`.
    pub fn deltas(&self) -> &[f64] {
        &self.evaluation.deltas
    }

    /// Average-criterion traces never decrease (up to `tol`).
    pub fn trace_nondecreasing(&self, tol: f64) -> bool {
        self.trace
            .windows(2)
            .all(|w| w[1].objective >= w[0].objective - tol)
    }
}

/// Largest breakpoint rate whose left slope is strictly below the criterion's
/// slope cap; the leftmost breakpoint when none is.
pub fn tail_limit(env: &LowerEnvelope, params: &ModelParams) -> f64 {
    let cap = slope_cap(params);
    (0..env.len())
        .rev()
        .find(|&k| env.left_slope(k) < cap)
        .map(|k| env.breakpoints()[k].mu)
        .unwrap_or_else(|| env.mu_min())
}

fn user_resolution(validated: &model::ValidatedActions) -> f64 {
    let pts = &validated.actions.points;
    let user = if validated.idle_appended {
        &pts[..pts.len() - 1]
    } else {
        &pts[..]
    };
    ActionSet::new(user.to_vec()).resolution()
}

/// Runs every structural check that applies to `params` on a policy and its
/// evaluation.
pub fn diagnose(
    params: &ModelParams,
    policy: &Policy,
    evaluation: &Evaluation,
    min_cost: f64,
    opts: &SolveOptions,
) -> Diagnostics {
    let top = policy.len();
    let trusted = structure::trusted_top(params, top, opts.trusted_fraction);
    let mus = policy.mus();
    let mono = structure::check_monotone(&mus[..trusted]);
    let conc = structure::check_concavity_deltas(
        &evaluation.deltas[..trusted.min(evaluation.deltas.len())],
        opts.concavity_tol,
    );
    let bound_checks = structure::evaluation_bounds(evaluation, params, min_cost, trusted);
    let bounds_ok = bound_checks
        .iter()
        .all(|b| b.status != BoundStatus::Violated);
    let uni = params
        .finite_capacity()
        .map(|_| structure::check_unimodal(&mus));
    let verified = match (&uni, params.finite_capacity()) {
        (Some(u), Some(n)) => (n <= 2 || u.ok) && bounds_ok,
        _ => mono.ok && conc.ok && bounds_ok,
    };
    Diagnostics {
        trusted_top: trusted,
        monotone: mono.ok,
        first_violation: mono.first_violation,
        unimodal: uni.as_ref().map(|u| u.ok),
        unimodal_peak: uni.as_ref().and_then(|u| u.peak),
        decreasing_after_peak: uni.as_ref().is_some_and(|u| u.decreasing),
        concave: conc.ok,
        delta2_max: conc.worst,
        delta2_state: conc.state,
        bound_checks,
        idle_everywhere: policy.is_idle_everywhere(params),
        verified,
    }
}

/// Policy iteration on states `0..=states`.
///
/// Starts from the envelope's smallest-rate breakpoint in every state and
/// stops at the first policy the improvement step leaves unchanged.
pub fn policy_iteration(
    params: &ModelParams,
    actions: &ActionSet,
    states: usize,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let validated = model::validate(params, actions)?;
    match params.finite_capacity() {
        Some(n) if n != states => {
            return Err(Error::Mismatch(format!(
                "requested {states} states but capacity is {n}"
            )))
        }
        None if states < 1 => return Err(Error::field("truncation", "truncation must be >= 1")),
        _ => {}
    }
    let raw = &validated.actions;
    let full = lower_envelope(&raw.points)?;
    let env = if opts.prune && params.finite_capacity().is_none() {
        hull::prune(&full, params)
    } else {
        full.clone()
    };
    let shift = match params.payment {
        Payment::AtArrival => 0.0,
        Payment::AtCompletion => params.r,
    };
    let max_iter = opts.max_iter.unwrap_or(10 * states).max(1);
    let points = env.breakpoints();

    let mut idx = vec![0usize; states];
    let mut trace = Vec::new();
    loop {
        let policy = Policy::new(idx.iter().map(|&k| points[k]).collect());
        let evaluation = evaluate(&policy, params)?;
        let next: Vec<usize> = idx
            .iter()
            .zip(&evaluation.deltas)
            .map(|(&k, &d)| best_index(&env, d - shift, Some(k), opts.tie_eps))
            .collect();
        let changed = next.iter().zip(&idx).filter(|(a, b)| a != b).count();
        trace.push(IterationRecord {
            objective: evaluation.objective(),
            changed,
        });
        if changed == 0 {
            let min_cost = raw.min_cost();
            let diagnostics = diagnose(params, &policy, &evaluation, min_cost, opts);
            return Ok(SolveReport {
                params: *params,
                objective: evaluation.objective(),
                iterations: trace.len(),
                truncation: states,
                tail_limit: params
                    .finite_capacity()
                    .is_none()
                    .then(|| tail_limit(&full, params)),
                envelope: EnvelopeMeta {
                    raw_points: raw.len(),
                    breakpoints: full.len(),
                    after_prune: env.len(),
                    resolution: user_resolution(&validated),
                },
                policy,
                evaluation,
                trace,
                diagnostics,
                stabilization: None,
            });
        }
        if trace.len() >= max_iter {
            return Err(Error::NoConvergence {
                iterations: trace.len(),
                trace,
            });
        }
        idx = next;
    }
}

/// Policy iteration on a finite buffer `0..=N`.
pub fn solve_finite(
    params: &ModelParams,
    actions: &ActionSet,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let n = params
        .finite_capacity()
        .ok_or_else(|| Error::Unsupported("solve_finite requires a finite capacity".into()))?;
    policy_iteration(params, actions, n, opts)
}

/// Solves an infinite-buffer problem by doubling the truncation level until
/// the top 10% of states sit within `tail_eps` of the tail limit and the
/// lower half of the previous level's policy is unchanged.
pub fn solve_infinite(
    params: &ModelParams,
    actions: &ActionSet,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if params.finite_capacity().is_some() {
        return Err(Error::Unsupported(
            "solve_infinite requires an infinite buffer".into(),
        ));
    }
    let validated = model::validate(params, actions)?;
    let mu_inf = tail_limit(&lower_envelope(&validated.actions.points)?, params);
    let eps = opts
        .tail_eps
        .unwrap_or(2.0 * user_resolution(&validated))
        .max(1e-9);

    let mut states = opts.initial_truncation.max(2);
    let mut history = Vec::new();
    let mut prev: Option<SolveReport> = None;
    loop {
        if states > opts.max_states {
            return Err(Error::TruncationCeiling {
                ceiling: opts.max_states,
            });
        }
        let mut report = policy_iteration(params, actions, states, opts)?;
        let band = ((states as f64) * 0.1).ceil().max(1.0) as usize;
        let tail_margin = (states - band + 1..=states)
            .map(|i| (report.policy.at(i).mu - mu_inf).abs())
            .fold(0.0, f64::max);
        let low_state_changes = prev.as_ref().map(|p| {
            (1..=p.truncation / 2)
                .filter(|&i| p.policy.at(i) != report.policy.at(i))
                .count()
        });
        history.push(TruncationStep {
            truncation: states,
            iterations: report.iterations,
            tail_margin,
            low_state_changes,
        });
        if tail_margin <= eps && low_state_changes == Some(0) {
            report.stabilization = Some(Stabilization {
                tail_eps: eps,
                tail_margin,
                low_state_changes: 0,
                history,
            });
            return Ok(report);
        }
        prev = Some(report);
        states *= 2;
    }
}

/// Dispatches on the capacity regime.
pub fn solve(
    params: &ModelParams,
    actions: &ActionSet,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    match params.finite_capacity() {
        Some(_) => solve_finite(params, actions, opts),
        None => solve_infinite(params, actions, opts),
    }
}

/// Output of [`value_iteration_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Gain (midpoint of the final bounds) or `v(0)`.
    pub objective: f64,
    pub policy: Policy,
    pub values: Vec<f64>,
    pub sweeps: usize,
}

/// Value iteration on the uniformized truncated chain, maximizing over every
/// raw action point (no envelope).
///
/// Average: relative value iteration, stopped once the bounds
/// `min_i (Tw - w)(i)` and `max_i (Tw - w)(i)` on the gain (rescaled to
/// continuous time) are within `tol`. Discounted: stopped once the a
/// posteriori error bound on `v` is below `tol`.
pub fn value_iteration_oracle(
    params: &ModelParams,
    actions: &ActionSet,
    states: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<OracleResult> {
    let validated = model::validate(params, actions)?;
    if let Some(n) = params.finite_capacity() {
        if n != states {
            return Err(Error::Mismatch(format!(
                "requested {states} states but capacity is {n}"
            )));
        }
    }
    let pts = &validated.actions.points;
    let top = states;
    let max_mu = pts.iter().map(|p| p.mu).fold(0.0, f64::max);
    let big = 1.05 * (params.lambda + max_mu + top.saturating_sub(1) as f64 * params.theta);
    let up = |i: usize| if i < top { params.lambda } else { 0.0 };
    let blocked = |i: usize| {
        if params.finite_capacity() == Some(i) {
            model::blocked_income(params)
        } else {
            0.0
        }
    };

    // drift of w at state i under its best action, and that action
    let step = |w: &[f64], i: usize| -> (f64, usize) {
        if i == 0 {
            return (
                model::empty_reward(params) - blocked(0) + up(0) * (w[1.min(top)] - w[0]),
                0,
            );
        }
        let climb = if i < top {
            up(i) * (w[i + 1] - w[i])
        } else {
            0.0
        };
        let fall = w[i] - w[i - 1];
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, p) in pts.iter().enumerate() {
            let q = model::point_reward(params, i, *p) - model::down_rate(params, i, *p) * fall;
            if q > best + 1e-12 {
                best = q;
                arg = k;
            } else if q >= best - 1e-12 {
                best = best.max(q);
                if p.mu < pts[arg].mu {
                    arg = k;
                }
            }
        }
        (best - blocked(i) + climb, arg)
    };

    let mut w = vec![0.0; top + 1];
    let mut drift = vec![0.0; top + 1];
    let mut span = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        for (i, d) in drift.iter_mut().enumerate() {
            *d = step(&w, i).0;
        }
        let done = match params.criterion {
            Criterion::Average => {
                let lo = drift.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = drift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                span = hi - lo;
                if span < tol {
                    Some((lo + hi) / 2.0)
                } else {
                    for (x, d) in w.iter_mut().zip(&drift) {
                        *x += d / big;
                    }
                    let pin = w[0];
                    for x in &mut w {
                        *x -= pin;
                    }
                    None
                }
            }
            Criterion::Discounted { alpha } => {
                let mut diff = 0.0f64;
                for (x, d) in w.iter_mut().zip(&drift) {
                    let next = *x + d / (big + alpha) - alpha * *x / (big + alpha);
                    diff = diff.max((next - *x).abs());
                    *x = next;
                }
                span = diff * big / alpha;
                (span < tol).then_some(w[0])
            }
        };
        if let Some(objective) = done {
            let policy = Policy::new((1..=top).map(|i| pts[step(&w, i).1]).collect());
            return Ok(OracleResult {
                objective,
                policy,
                values: w,
                sweeps: sweep,
            });
        }
    }
    Err(Error::OracleBudget {
        iterations: max_sweeps,
        span,
    })
}
