//! Event-driven Monte Carlo simulation of the controlled queue.
//!
//! Each replication draws from its own ChaCha8 stream (`seed`, stream =
//! replication index), so results do not depend on how replications are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::model::{self, Action, Criterion, ModelParams, Payment, Policy};

/// Fraction of the horizon discarded before averaging.
pub const BURN_IN: f64 = 0.1;

/// Per-replication reward decomposition. `total` is accumulated event by
/// event, independently of the four components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub credits: f64,
    pub abandonment: f64,
    pub holding: f64,
    pub service: f64,
    pub total: f64,
}

impl Ledger {
    pub fn components(&self) -> f64 {
        self.credits + self.abandonment + self.holding + self.service
    }

    fn scale(&mut self, k: f64) {
        self.credits *= k;
        self.abandonment *= k;
        self.holding *= k;
        self.service *= k;
        self.total *= k;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub blocked: u64,
    pub completions: u64,
    pub abandonments: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    /// Time-average reward (average) or discounted reward (discounted).
    pub value: f64,
    pub ledger: Ledger,
    pub events: EventCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub estimate: f64,
    /// Standard error of the mean; absent for a single replication.
    pub std_error: Option<f64>,
    pub replications: usize,
    /// Simulated time per replication.
    pub horizon: f64,
    pub seed: u64,
    pub start: usize,
    pub criterion: Criterion,
    pub runs: Vec<Replication>,
}

impl SimEstimate {
    /// `|estimate - analytic| / std_error`.
    pub fn z_score(&self, analytic: f64) -> Option<f64> {
        self.std_error.map(|se| {
            let gap = (self.estimate - analytic).abs();
            if se > 0.0 {
                gap / se
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Per-state event rates and flow cost.
struct StateTable {
    up: Vec<f64>,
    completion: Vec<f64>,
    abandonment: Vec<f64>,
    flow: Vec<f64>,
}

fn table(policy: &Policy, params: &ModelParams) -> Result<StateTable> {
    let top = policy.len();
    let idle = params.idle_point();
    let mut t = StateTable {
        up: vec![params.lambda; top + 1],
        completion: vec![0.0; top + 1],
        abandonment: vec![0.0; top + 1],
        flow: vec![0.0; top + 1],
    };
    for i in 1..=top {
        let p = policy.at(i);
        let action = if p == idle {
            Action::Idle
        } else {
            Action::Serve(p)
        };
        let rates = model::transition_rates(params, i, action)?;
        let (completion, cost) = match action {
            Action::Idle => (0.0, 0.0),
            Action::Serve(p) => (p.mu, p.f),
        };
        t.completion[i] = completion;
        t.abandonment[i] = rates.down - completion;
        t.flow[i] = -params.h * i as f64 - cost;
    }
    Ok(t)
}

/// Time weight of a flow over `[a, b]`, and the weight of a lump at `t`.
#[derive(Clone, Copy)]
enum Weight {
    Window { from: f64, to: f64 },
    Discount { alpha: f64 },
}

impl Weight {
    fn flow(self, a: f64, b: f64) -> f64 {
        match self {
            Weight::Window { from, to } => (b.min(to) - a.max(from)).max(0.0),
            Weight::Discount { alpha } => ((-alpha * a).exp() - (-alpha * b).exp()) / alpha,
        }
    }

    fn lump(self, t: f64) -> f64 {
        match self {
            Weight::Window { from, to } => {
                if t >= from && t < to {
                    1.0
                } else {
                    0.0
                }
            }
            Weight::Discount { alpha } => (-alpha * t).exp(),
        }
    }
}

fn replicate(
    t: &StateTable,
    params: &ModelParams,
    start: usize,
    horizon: f64,
    weight: Weight,
    mut rng: ChaCha8Rng,
) -> Replication {
    let top = t.up.len() - 1;
    let finite = params.finite_capacity().is_some();
    let arrival_pay = params.payment == Payment::AtArrival;
    let mut ledger = Ledger::default();
    let mut events = EventCounts::default();
    let mut state = start;
    let mut now = 0.0f64;
    while now < horizon {
        let (up, done, gone) = (t.up[state], t.completion[state], t.abandonment[state]);
        let rate = up + done + gone;
        let dt = -(1.0 - rng.random::<f64>()).ln() / rate;
        let next = (now + dt).min(horizon);

        let w = weight.flow(now, next);
        let holding = -params.h * state as f64 * w;
        let service = (t.flow[state] + params.h * state as f64) * w;
        ledger.holding += holding;
        ledger.service += service;
        ledger.total += t.flow[state] * w;
        now = next;
        if now >= horizon {
            break;
        }

        let lump = weight.lump(now);
        let u = rng.random::<f64>() * rate;
        if u < up {
            events.arrivals += 1;
            let credited = arrival_pay && (state < top || !finite);
            if credited {
                ledger.credits += params.r * lump;
                ledger.total += params.r * lump;
            }
            if state < top {
                state += 1;
            } else {
                events.blocked += 1;
            }
        } else if u < up + done {
            events.completions += 1;
            if !arrival_pay {
                ledger.credits += params.r * lump;
                ledger.total += params.r * lump;
            }
            state -= 1;
        } else {
            events.abandonments += 1;
            ledger.abandonment -= params.c * lump;
            ledger.total -= params.c * lump;
            state -= 1;
        }
    }
    if let Weight::Window { from, to } = weight {
        ledger.scale(1.0 / (to - from));
    }
    Replication {
        value: ledger.total,
        ledger,
        events,
    }
}

/// Simulates `policy` from state `start` and estimates its gain (`Average`) or
/// discounted value (`Discounted`).
///
/// Arrivals at the top state `L = policy.len()` are blocked. At a genuine
/// finite buffer nothing is credited for them; at a truncation top of an
/// infinite buffer the arrival reward is still credited, matching the
/// reflecting closure used by evaluation. The idle point is simulated as a
/// true idle server. Average estimates discard the first 10% of `horizon`;
/// discounted runs extend the horizon until `exp(-alpha*T) < 1e-8`.
pub fn simulate(
    policy: &Policy,
    params: &ModelParams,
    criterion: Criterion,
    start: usize,
    horizon: f64,
    replications: usize,
    seed: u64,
) -> Result<SimEstimate> {
    if let Err(errors) = params.validate() {
        return Err(Error::Invalid(errors));
    }
    let mut errors = Vec::new();
    if !(horizon.is_finite() && horizon > 0.0) {
        errors.push(FieldError {
            field: "horizon",
            message: "horizon must be > 0".into(),
        });
    }
    if replications == 0 {
        errors.push(FieldError {
            field: "reps",
            message: "reps must be >= 1".into(),
        });
    }
    if start > policy.len() {
        errors.push(FieldError {
            field: "start",
            message: format!(
                "start state {start} exceeds the policy's top state {}",
                policy.len()
            ),
        });
    }
    if let Criterion::Discounted { alpha } = criterion {
        if !(alpha.is_finite() && alpha > 0.0) {
            errors.push(FieldError {
                field: "alpha",
                message: "alpha must be > 0".into(),
            });
        }
    }
    if !errors.is_empty() {
        return Err(Error::Invalid(errors));
    }
    if let Some(n) = params.finite_capacity() {
        if n != policy.len() {
            return Err(Error::Mismatch(format!(
                "policy covers {} states but capacity is {n}",
                policy.len()
            )));
        }
    }
    let t = table(policy, params)?;
    let (horizon, weight) = match criterion {
        Criterion::Average => (
            horizon,
            Weight::Window {
                from: BURN_IN * horizon,
                to: horizon,
            },
        ),
        Criterion::Discounted { alpha } => (
            horizon.max((1e8f64).ln() / alpha + 1.0),
            Weight::Discount { alpha },
        ),
    };

    let runs: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            replicate(&t, params, start, horizon, weight, rng)
        })
        .collect();

    let n = runs.len() as f64;
    let estimate = runs.iter().map(|r| r.value).sum::<f64>() / n;
    let std_error = (runs.len() >= 2).then(|| {
        let var = runs
            .iter()
            .map(|r| (r.value - estimate).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(SimEstimate {
        estimate,
        std_error,
        replications,
        horizon,
        seed,
        start,
        criterion,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{evaluate_average, evaluate_discounted};
    use crate::model::{Capacity, Point};

    fn example() -> ModelParams {
        ModelParams::new(0.5, 2.0, 1.0, 3.0, 0.5)
    }

    #[test]
    fn idle_gain_within_three_errors() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 60);
        let est = simulate(&idle, &params, Criterion::Average, 0, 1e5, 30, 7).unwrap();
        assert!(
            est.z_score(-1.5).unwrap() < 3.0,
            "{} +- {:?}",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn deterministic_reruns() {
        let params = example();
        let policy = Policy::constant(Point::new(2.0, 1.0), 40);
        let a = simulate(&policy, &params, Criterion::Average, 0, 2e3, 8, 11).unwrap();
        let b = simulate(&policy, &params, Criterion::Average, 0, 2e3, 8, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&policy, &params, Criterion::Average, 0, 2e3, 8, 12).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn ledger_reconciles() {
        let params = example().with_payment(Payment::AtCompletion);
        let policy = Policy::new(
            (1..=30)
                .map(|i| Point::new(0.5 + 0.2 * i as f64, 0.1 * i as f64))
                .collect(),
        );
        for criterion in [Criterion::Average, Criterion::Discounted { alpha: 0.5 }] {
            let est = simulate(&policy, &params, criterion, 3, 5e3, 4, 3).unwrap();
            for run in &est.runs {
                let l = run.ledger;
                assert!((l.components() - l.total).abs() <= 1e-9 * (1.0 + l.total.abs()));
                assert_eq!(run.value, l.total);
            }
        }
    }

    #[test]
    fn empty_system_earns_nothing() {
        let mut params = example();
        params.lambda = 1e-9;
        let policy = Policy::constant(Point::new(2.0, 0.0), 10);
        let est = simulate(&policy, &params, Criterion::Average, 0, 1e4, 4, 1).unwrap();
        assert!(est.estimate.abs() < 1e-6);
    }

    #[test]
    fn single_replication_has_no_error() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 20);
        let est = simulate(&idle, &params, Criterion::Average, 0, 100.0, 1, 1).unwrap();
        assert_eq!(est.std_error, None);
        assert_eq!(est.z_score(0.0), None);
    }

    #[test]
    fn invalid_inputs() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 20);
        assert!(simulate(&idle, &params, Criterion::Average, 0, 0.0, 4, 1).is_err());
        assert!(simulate(&idle, &params, Criterion::Average, 0, 10.0, 0, 1).is_err());
        assert!(simulate(&idle, &params, Criterion::Average, 21, 10.0, 2, 1).is_err());
        let finite = params.with_capacity(Capacity::Finite(5));
        assert!(simulate(&idle, &finite, Criterion::Average, 0, 10.0, 2, 1).is_err());
    }

    #[test]
    fn finite_buffer_matches_evaluation() {
        let params = example().with_capacity(Capacity::Finite(4));
        let policy = Policy::new(vec![
            Point::new(0.8, 0.2),
            Point::new(1.5, 0.6),
            Point::new(1.0, 0.3),
            Point::new(0.5, 1.5),
        ]);
        let g = evaluate_average(&policy, &params).unwrap().gain.unwrap();
        let est = simulate(&policy, &params, Criterion::Average, 0, 2e4, 20, 5).unwrap();
        assert!(est.z_score(g).unwrap() < 4.0, "{} vs {g}", est.estimate);
    }

    #[test]
    fn discounted_matches_evaluation() {
        let params = example();
        let policy = Policy::new(
            (1..=40)
                .map(|i| Point::new(1.0 + 0.1 * i as f64, 0.25))
                .collect(),
        );
        let v = evaluate_discounted(&policy, &params, 0.5).unwrap().values[2];
        let est = simulate(
            &policy,
            &params,
            Criterion::Discounted { alpha: 0.5 },
            2,
            1.0,
            400,
            9,
        )
        .unwrap();
        assert!(est.horizon > 36.0);
        assert!(est.z_score(v).unwrap() < 4.0, "{} vs {v}", est.estimate);
    }
}
