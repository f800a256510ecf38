//! Problem data: rates, costs, the action cloud and the idle convention.
//!
//! The idle action is represented as an ordinary action point so that one
//! reward formula covers every action at states `i >= 1`. Under arrival
//! payment the point is `(theta, c*theta)`; under completion payment the idle
//! server earns no completion reward, which the generic formula
//! `mu*r - h*i - c*(i-1)*theta - f` reproduces with the point
//! `(theta, c*theta + theta*r)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payment {
    AtArrival,
    AtCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Infinite,
    Finite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Discounted { alpha: f64 },
    Average,
}

/// Scalar problem data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Arrival rate.
    pub lambda: f64,
    /// Reward per customer.
    pub r: f64,
    /// Holding cost per customer per unit time.
    pub h: f64,
    /// Cost per abandonment.
    pub c: f64,
    /// Abandonment rate of each waiting customer.
    pub theta: f64,
    pub payment: Payment,
    pub capacity: Capacity,
    pub criterion: Criterion,
}

impl ModelParams {
    /// Arrival payment, infinite buffer, average criterion.
    pub fn new(lambda: f64, r: f64, h: f64, c: f64, theta: f64) -> Self {
        Self {
            lambda,
            r,
            h,
            c,
            theta,
            payment: Payment::AtArrival,
            capacity: Capacity::Infinite,
            criterion: Criterion::Average,
        }
    }

    pub fn with_payment(mut self, payment: Payment) -> Self {
        self.payment = payment;
        self
    }

    pub fn with_capacity(mut self, capacity: Capacity) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    /// Cost rate `h + c*theta` shared by every bound and tail limit.
    pub fn abandonment_load(&self) -> f64 {
        self.h + self.c * self.theta
    }

    /// `alpha` under the discounted criterion, 0 under the average one.
    pub fn discount(&self) -> f64 {
        match self.criterion {
            Criterion::Discounted { alpha } => alpha,
            Criterion::Average => 0.0,
        }
    }

    pub fn idle_point(&self) -> Point {
        let f = match self.payment {
            Payment::AtArrival => self.c * self.theta,
            Payment::AtCompletion => self.c * self.theta + self.theta * self.r,
        };
        Point::new(self.theta, f)
    }

    /// `N` for a finite buffer.
    pub fn finite_capacity(&self) -> Option<usize> {
        match self.capacity {
            Capacity::Finite(n) => Some(n),
            Capacity::Infinite => None,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: &str| {
            if !ok {
                errors.push(FieldError {
                    field,
                    message: message.to_string(),
                });
            }
        };
        check(
            self.lambda.is_finite() && self.lambda > 0.0,
            "lambda",
            "lambda must be > 0",
        );
        check(
            self.theta.is_finite() && self.theta > 0.0,
            "theta",
            "theta must be > 0",
        );
        check(self.r.is_finite() && self.r >= 0.0, "r", "r must be >= 0");
        check(self.h.is_finite() && self.h >= 0.0, "h", "h must be >= 0");
        check(self.c.is_finite() && self.c >= 0.0, "c", "c must be >= 0");
        if let Criterion::Discounted { alpha } = self.criterion {
            check(
                alpha.is_finite() && alpha > 0.0,
                "alpha",
                "alpha must be > 0",
            );
        }
        if let Capacity::Finite(n) = self.capacity {
            check(n >= 1, "capacity", "capacity N must be >= 1");
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// A projected action `(mu(a), f(a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub mu: f64,
    pub f: f64,
}

impl Point {
    pub const fn new(mu: f64, f: f64) -> Self {
        Self { mu, f }
    }
}

/// The action cloud `H`. Constructors produce the raw list; [`validate`] adds
/// the idle point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub points: Vec<Point>,
    pub includes_idle: bool,
}

impl ActionSet {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            includes_idle: false,
        }
    }

    /// Grid `mu_min, mu_min + step, ...` up to `mu_max` with costs `cost(mu)`.
    pub fn grid(mu_min: f64, mu_max: f64, step: f64, cost: impl Fn(f64) -> f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::field("grid_step", "grid_step must be > 0"));
        }
        if !(mu_min.is_finite() && mu_max.is_finite() && mu_max >= mu_min) {
            return Err(Error::field("mu_max", "mu_max must be >= mu_min"));
        }
        let count = ((mu_max - mu_min) / step + 1e-9).floor() as usize + 1;
        let points = (0..count)
            .map(|k| {
                let mu = mu_min + k as f64 * step;
                Point::new(mu, cost(mu))
            })
            .collect();
        Ok(Self::new(points))
    }

    /// `f(mu) = k*mu^2` on a grid.
    pub fn quadratic_grid(mu_min: f64, mu_max: f64, step: f64, k: f64) -> Result<Self> {
        Self::grid(mu_min, mu_max, step, |mu| k * mu * mu)
    }

    /// `f(mu) = k*mu` on a grid.
    pub fn linear_grid(mu_min: f64, mu_max: f64, step: f64, k: f64) -> Result<Self> {
        Self::grid(mu_min, mu_max, step, |mu| k * mu)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.points.contains(&p)
    }

    pub fn min_cost(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.f)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest gap between consecutive distinct service rates.
    pub fn resolution(&self) -> f64 {
        let mut mus: Vec<f64> = self.points.iter().map(|p| p.mu).collect();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        mus.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// An action set that passed [`validate`] and contains the idle point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedActions {
    pub actions: ActionSet,
    pub idle_appended: bool,
}

/// Checks every invariant of `params` and `actions` and appends the idle point
/// when it is missing.
pub fn validate(params: &ModelParams, actions: &ActionSet) -> Result<ValidatedActions> {
    let mut errors = params.validate().err().unwrap_or_default();
    if actions.is_empty() {
        errors.push(FieldError {
            field: "actions",
            message: "action set empty".into(),
        });
    }
    for (k, p) in actions.points.iter().enumerate() {
        if !(p.mu.is_finite() && p.mu > 0.0) {
            errors.push(FieldError {
                field: "actions",
                message: format!("action {k}: mu must be > 0 (got {})", p.mu),
            });
        }
        if !p.f.is_finite() {
            errors.push(FieldError {
                field: "actions",
                message: format!("action {k}: f must be finite (got {})", p.f),
            });
        }
    }
    if !errors.is_empty() {
        return Err(Error::Invalid(errors));
    }
    let idle = params.idle_point();
    let mut out = actions.clone();
    let idle_appended = !out.contains(idle);
    if idle_appended {
        out.points.push(idle);
    }
    out.includes_idle = true;
    Ok(ValidatedActions {
        actions: out,
        idle_appended,
    })
}

/// What the server does in a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Idle,
    Serve(Point),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub up: f64,
    pub down: f64,
}

/// Stationary deterministic policy on states `1..=L`; state 0 is always idle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<Point>,
}

impl Policy {
    pub fn new(actions: Vec<Point>) -> Self {
        Self { actions }
    }

    pub fn constant(point: Point, states: usize) -> Self {
        Self::new(vec![point; states])
    }

    /// Number of controlled states `L`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Action at state `i >= 1`.
    pub fn at(&self, i: usize) -> Point {
        self.actions[i - 1]
    }

    pub fn points(&self) -> &[Point] {
        &self.actions
    }

    /// Service rates for states `1..=L`.
    pub fn mus(&self) -> Vec<f64> {
        self.actions.iter().map(|p| p.mu).collect()
    }

    pub fn is_idle_everywhere(&self, params: &ModelParams) -> bool {
        let idle = params.idle_point();
        self.actions.iter().all(|p| *p == idle)
    }
}

fn resolve(params: &ModelParams, action: Action) -> Point {
    match action {
        Action::Idle => params.idle_point(),
        Action::Serve(p) => p,
    }
}

fn check_state(params: &ModelParams, i: usize) -> Result<()> {
    match params.capacity {
        Capacity::Finite(n) if i > n => Err(Error::StateOutOfRange { state: i, top: n }),
        _ => Ok(()),
    }
}

/// Reward rate at state `i >= 1` under action point `p`, without the
/// blocked-arrival adjustment.
#[inline]
pub(crate) fn point_reward(params: &ModelParams, i: usize, p: Point) -> f64 {
    let i = i as f64;
    let income = match params.payment {
        Payment::AtArrival => params.lambda * params.r,
        Payment::AtCompletion => p.mu * params.r,
    };
    income - params.h * i - params.c * (i - 1.0) * params.theta - p.f
}

/// Reward rate at the empty state.
#[inline]
pub(crate) fn empty_reward(params: &ModelParams) -> f64 {
    match params.payment {
        Payment::AtArrival => params.lambda * params.r,
        Payment::AtCompletion => 0.0,
    }
}

/// Arrival income forfeited when arrivals are blocked (finite buffer top).
#[inline]
pub(crate) fn blocked_income(params: &ModelParams) -> f64 {
    match params.payment {
        Payment::AtArrival => params.lambda * params.r,
        Payment::AtCompletion => 0.0,
    }
}

/// Reward rate `r(i, a)`.
pub fn reward_rate(params: &ModelParams, i: usize, action: Action) -> Result<f64> {
    check_state(params, i)?;
    let base = match (i, action) {
        (0, Action::Serve(_)) => return Err(Error::ActiveAtEmpty),
        (0, Action::Idle) => empty_reward(params),
        (_, Action::Idle) => {
            let x = i as f64;
            let income = match params.payment {
                Payment::AtArrival => params.lambda * params.r,
                Payment::AtCompletion => 0.0,
            };
            income - params.h * x - params.c * params.theta * x
        }
        (_, Action::Serve(p)) => point_reward(params, i, p),
    };
    if params.finite_capacity() == Some(i) {
        Ok(base - blocked_income(params))
    } else {
        Ok(base)
    }
}

#[inline]
pub(crate) fn down_rate(params: &ModelParams, i: usize, p: Point) -> f64 {
    if i == 0 {
        0.0
    } else {
        p.mu + (i as f64 - 1.0) * params.theta
    }
}

/// Birth and death rates out of state `i`.
pub fn transition_rates(params: &ModelParams, i: usize, action: Action) -> Result<Rates> {
    check_state(params, i)?;
    if i == 0 {
        if let Action::Serve(_) = action {
            return Err(Error::ActiveAtEmpty);
        }
    }
    let up = if params.finite_capacity() == Some(i) {
        0.0
    } else {
        params.lambda
    };
    let down = match action {
        Action::Idle => i as f64 * params.theta,
        Action::Serve(_) => down_rate(params, i, resolve(params, action)),
    };
    Ok(Rates { up, down })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example() -> ModelParams {
        ModelParams::new(0.5, 2.0, 1.0, 3.0, 0.5)
    }

    #[test]
    fn reward_examples() {
        let p = example();
        assert_abs_diff_eq!(
            reward_rate(&p, 0, Action::Idle).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let a = Action::Serve(Point::new(4.0, 4.0));
        assert_abs_diff_eq!(reward_rate(&p, 2, a).unwrap(), -6.5, epsilon = 1e-15);
        let pc = p.with_payment(Payment::AtCompletion);
        assert_abs_diff_eq!(reward_rate(&pc, 1, a).unwrap(), 3.0, epsilon = 1e-15);
        // idle under completion payment: -h*i - c*theta*i
        assert_abs_diff_eq!(
            reward_rate(&pc, 3, Action::Idle).unwrap(),
            -3.0 - 4.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn active_action_at_empty_state_is_rejected() {
        let p = example();
        let a = Action::Serve(Point::new(1.0, 1.0));
        assert!(matches!(reward_rate(&p, 0, a), Err(Error::ActiveAtEmpty)));
        assert!(matches!(
            transition_rates(&p, 0, a),
            Err(Error::ActiveAtEmpty)
        ));
    }

    #[test]
    fn finite_top_forfeits_arrival_income() {
        let p = example().with_capacity(Capacity::Finite(4));
        let a = Action::Serve(Point::new(2.0, 1.0));
        let inner = point_reward(&p, 4, Point::new(2.0, 1.0));
        assert_abs_diff_eq!(reward_rate(&p, 4, a).unwrap(), inner - 1.0, epsilon = 1e-15);
        assert_eq!(transition_rates(&p, 4, a).unwrap().up, 0.0);
        assert!(matches!(
            reward_rate(&p, 5, a),
            Err(Error::StateOutOfRange { .. })
        ));
        let pc = p.with_payment(Payment::AtCompletion);
        let inner = point_reward(&pc, 4, Point::new(2.0, 1.0));
        assert_abs_diff_eq!(reward_rate(&pc, 4, a).unwrap(), inner, epsilon = 1e-15);
    }

    #[test]
    fn rate_examples() {
        let p = example();
        assert_eq!(
            transition_rates(&p, 0, Action::Idle).unwrap(),
            Rates { up: 0.5, down: 0.0 }
        );
        let a = Action::Serve(Point::new(2.0, 7.0));
        assert_eq!(
            transition_rates(&p, 3, a).unwrap(),
            Rates { up: 0.5, down: 3.0 }
        );
        assert_eq!(
            transition_rates(&p, 3, Action::Idle).unwrap(),
            Rates { up: 0.5, down: 1.5 }
        );
    }

    #[test]
    fn idle_matches_its_point_in_both_conventions() {
        for payment in [Payment::AtArrival, Payment::AtCompletion] {
            let p = example().with_payment(payment);
            let idle = Action::Serve(p.idle_point());
            for i in 1..20 {
                let a = reward_rate(&p, i, Action::Idle).unwrap();
                let b = reward_rate(&p, i, idle).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                assert_eq!(
                    transition_rates(&p, i, Action::Idle).unwrap(),
                    transition_rates(&p, i, idle).unwrap()
                );
            }
        }
    }

    #[test]
    fn validate_reports_fields() {
        let mut p = example();
        p.lambda = 0.0;
        let err = validate(&p, &ActionSet::new(vec![])).unwrap_err();
        let Error::Invalid(list) = err else { panic!() };
        let messages: Vec<_> = list.iter().map(|e| e.message.as_str()).collect();
        assert!(messages.contains(&"lambda must be > 0"));
        assert!(messages.contains(&"action set empty"));
        assert_eq!(list[0].field, "lambda");
    }

    #[test]
    fn validate_appends_idle_point() {
        let p = example();
        let grid = ActionSet::quadratic_grid(0.5, 30.0, 0.01, 0.25).unwrap();
        assert_eq!(grid.len(), 2951);
        let v = validate(&p, &grid).unwrap();
        assert!(v.idle_appended);
        assert!(v.actions.includes_idle);
        assert_eq!(*v.actions.points.last().unwrap(), Point::new(0.5, 1.5));
        let again = validate(&p, &v.actions).unwrap();
        assert!(!again.idle_appended);
        assert_eq!(again.actions.len(), v.actions.len());
    }

    #[test]
    fn validate_rejects_nonpositive_rates() {
        let p = example().with_criterion(Criterion::Discounted { alpha: -1.0 });
        let set = ActionSet::new(vec![Point::new(0.0, 1.0)]);
        let Error::Invalid(list) = validate(&p, &set).unwrap_err() else {
            panic!()
        };
        let fields: Vec<_> = list.iter().map(|e| e.field).collect();
        assert_eq!(fields, vec!["alpha", "actions"]);
    }
}
