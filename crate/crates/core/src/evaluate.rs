//! Exact evaluation of a fixed policy on the (finite or truncated) birth-death
//! chain.
//!
//! The chain over states `0..=L` has up-rate `lambda` everywhere except at
//! `L`, where arrivals are blocked. A truncated infinite buffer keeps its
//! ordinary reward at `L`; a genuine finite buffer forfeits the arrival income
//! there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Criterion, ModelParams, Policy};
use crate::tridiag;

/// Result of evaluating one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub criterion: Criterion,
    /// Long-run average reward `g` (average criterion only).
    pub gain: Option<f64>,
    /// Bias `u` (normalized so that `sum u*P = 0`) or discounted value `v`,
    /// indexed by state `0..=L`.
    pub values: Vec<f64>,
    /// `values[i+1] - values[i]`, computed directly by the solve rather than
    /// by subtracting `values`.
    pub deltas: Vec<f64>,
    /// Stationary distribution (average criterion only).
    pub stationary: Option<Vec<f64>>,
    /// Largest absolute defect of the evaluation equations.
    pub residual: f64,
}

impl Evaluation {
    /// `g` under the average criterion, `v(0)` under the discounted one.
    pub fn objective(&self) -> f64 {
        self.gain.unwrap_or(self.values[0])
    }

    pub fn second_differences(&self) -> Vec<f64> {
        self.deltas.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn top(&self) -> usize {
        self.values.len() - 1
    }
}

/// Rates and rewards of the chain induced by a policy.
#[derive(Debug, Clone)]
pub(crate) struct Chain {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub reward: Vec<f64>,
}

impl Chain {
    pub fn top(&self) -> usize {
        self.reward.len() - 1
    }
}

pub(crate) fn build_chain(policy: &Policy, params: &ModelParams) -> Result<Chain> {
    let top = policy.len();
    let finite = params.finite_capacity();
    if let Some(n) = finite {
        if n != top {
            return Err(Error::Mismatch(format!(
                "policy covers {top} states but capacity is {n}"
            )));
        }
    }
    let mut up = vec![params.lambda; top + 1];
    up[top] = 0.0;
    let mut down = vec![0.0; top + 1];
    let mut reward = vec![0.0; top + 1];
    reward[0] = model::empty_reward(params);
    for i in 1..=top {
        let p = policy.at(i);
        down[i] = model::down_rate(params, i, p);
        if down[i].is_nan() || down[i] <= 0.0 {
            return Err(Error::ZeroDownRate { state: i });
        }
        reward[i] = model::point_reward(params, i, p);
    }
    if finite.is_some() {
        reward[top] -= model::blocked_income(params);
    }
    Ok(Chain { up, down, reward })
}

fn stationary_of(chain: &Chain) -> Vec<f64> {
    // product form in log space; far tails underflow to exactly 0
    let top = chain.top();
    let mut log_w = vec![0.0; top + 1];
    for i in 1..=top {
        log_w[i] = log_w[i - 1] + (chain.up[i - 1] / chain.down[i]).ln();
    }
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_w.iter().map(|w| (w - peak).exp()).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

/// Stationary distribution of the chain induced by `policy` on `0..=L`,
/// `L = policy.len()`.
pub fn stationary_distribution(policy: &Policy, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(stationary_of(&build_chain(policy, params)?))
}

/// Average-reward evaluation: `g = r(i) + sum_j q_ij u(j)` for every state,
/// with `sum_i u(i) P(i) = 0`.
pub fn evaluate_average(policy: &Policy, params: &ModelParams) -> Result<Evaluation> {
    let chain = build_chain(policy, params)?;
    let p = stationary_of(&chain);
    let gain: f64 = p.iter().zip(&chain.reward).map(|(p, r)| p * r).sum();
    let top = chain.top();

    let mut deltas = vec![0.0; top];
    if top > 0 {
        // each recursion runs in its damped direction: from 0 up to the mode
        // of P, and from L down to it
        let mode = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
            .min(top - 1);
        for i in 0..mode {
            let inflow = if i == 0 {
                0.0
            } else {
                chain.down[i] * deltas[i - 1]
            };
            deltas[i] = (gain - chain.reward[i] + inflow) / chain.up[i];
        }
        for i in (mode + 1..=top).rev() {
            let outflow = if i == top {
                0.0
            } else {
                chain.up[i] * deltas[i]
            };
            deltas[i - 1] = (chain.reward[i] + outflow - gain) / chain.down[i];
        }
    }

    let mut values = vec![0.0; top + 1];
    for i in 0..top {
        values[i + 1] = values[i] + deltas[i];
    }
    let shift: f64 = values.iter().zip(&p).map(|(u, p)| u * p).sum();
    for u in &mut values {
        *u -= shift;
    }

    let mut residual = 0.0f64;
    for i in 0..=top {
        let mut rhs = chain.reward[i];
        if i < top {
            rhs += chain.up[i] * deltas[i];
        }
        if i > 0 {
            rhs -= chain.down[i] * deltas[i - 1];
        }
        residual = residual.max((rhs - gain).abs());
    }
    let norm: f64 = values.iter().zip(&p).map(|(u, p)| u * p).sum();
    residual = residual.max(norm.abs());

    Ok(Evaluation {
        criterion: Criterion::Average,
        gain: Some(gain),
        values,
        deltas,
        stationary: Some(p),
        residual,
    })
}

/// Discounted evaluation: solves `(alpha*I - Q) v = r` by Thomas elimination.
pub fn evaluate_discounted(
    policy: &Policy,
    params: &ModelParams,
    alpha: f64,
) -> Result<Evaluation> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::field("alpha", "alpha must be > 0"));
    }
    let chain = build_chain(policy, params)?;
    let n = chain.top() + 1;
    let lower: Vec<f64> = chain.down.iter().map(|d| -d).collect();
    let upper: Vec<f64> = chain.up.iter().map(|u| -u).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| alpha + chain.up[i] + chain.down[i])
        .collect();
    let values = tridiag::solve(&lower, &diag, &upper, &chain.reward)?;
    let residual = tridiag::residual(&lower, &diag, &upper, &chain.reward, &values);
    let deltas = values.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Evaluation {
        criterion: Criterion::Discounted { alpha },
        gain: None,
        values,
        deltas,
        stationary: None,
        residual,
    })
}

/// Evaluates under the criterion recorded in `params`.
pub fn evaluate(policy: &Policy, params: &ModelParams) -> Result<Evaluation> {
    match params.criterion {
        Criterion::Average => evaluate_average(policy, params),
        Criterion::Discounted { alpha } => evaluate_discounted(policy, params, alpha),
    }
}

/// First and second forward differences of `values`.
pub fn differences(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let first: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let second = first.windows(2).map(|w| w[1] - w[0]).collect();
    (first, second)
}

/// Smallest `L` such that a Poisson(`mean`) variable exceeds `0.95*L` with
/// probability below `tail_mass`, and at least `floor`.
///
/// The idle policy's stationary law is Poisson(`lambda/theta`), so this picks
/// a truncation whose trusted zone carries negligible boundary effects.
pub fn poisson_truncation(mean: f64, tail_mass: f64, floor: usize) -> usize {
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    let mut k = 0usize;
    while 1.0 - cdf >= tail_mass && k < 10_000_000 {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
        if pmf == 0.0 && k as f64 > mean {
            break;
        }
    }
    ((k as f64 / 0.95).ceil() as usize + 1).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Capacity, Payment, Point};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example() -> ModelParams {
        ModelParams::new(0.5, 2.0, 1.0, 3.0, 0.5)
    }

    /// Dense generator of the induced chain, built directly from the public
    /// rate and reward functions.
    fn dense(policy: &Policy, params: &ModelParams) -> (Vec<Vec<f64>>, Vec<f64>) {
        use crate::model::{reward_rate, transition_rates, Action};
        let top = policy.len();
        let mut q = vec![vec![0.0; top + 1]; top + 1];
        let mut r = vec![0.0; top + 1];
        for i in 0..=top {
            let a = if i == 0 {
                Action::Idle
            } else {
                Action::Serve(policy.at(i))
            };
            let rates = transition_rates(params, i, a).unwrap();
            let up = if i == top { 0.0 } else { rates.up };
            if i < top {
                q[i][i + 1] = up;
            }
            if i > 0 {
                q[i][i - 1] = rates.down;
            }
            q[i][i] = -(up + rates.down);
            r[i] = reward_rate(params, i, a).unwrap();
        }
        (q, r)
    }

    fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let m = a[row][col] / a[col][col];
                if m != 0.0 {
                    for k in col..n {
                        a[row][k] -= m * a[col][k];
                    }
                    b[row] -= m * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    /// Solves the Poisson equation and normalization as one dense system in
    /// the unknowns `(u_0..u_L, g)`.
    fn dense_average(policy: &Policy, params: &ModelParams) -> (f64, Vec<f64>, Vec<f64>) {
        let (q, r) = dense(policy, params);
        let n = r.len();
        // stationary: P Q = 0 with sum P = 1 replacing the last equation
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[j][i] = q[i][j];
            }
        }
        let mut b = vec![0.0; n];
        a[n - 1] = vec![1.0; n];
        b[n - 1] = 1.0;
        let p = gauss(a, b);
        let mut m = vec![vec![0.0; n + 1]; n + 1];
        let mut rhs = vec![0.0; n + 1];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = -q[i][j];
            }
            m[i][n] = 1.0;
            rhs[i] = r[i];
        }
        for j in 0..n {
            m[n][j] = p[j];
        }
        let x = gauss(m, rhs);
        (x[n], x[..n].to_vec(), p)
    }

    fn grid_policy(points: &[f64], theta_cost: f64) -> Policy {
        Policy::new(
            points
                .iter()
                .map(|&mu| Point::new(mu, theta_cost * mu * mu))
                .collect(),
        )
    }

    #[test]
    fn idle_stationary_is_truncated_poisson() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 60);
        let p = stationary_distribution(&idle, &params).unwrap();
        let mut pmf = (-1.0f64).exp();
        for (k, pk) in p.iter().enumerate().take(30) {
            if k > 0 {
                pmf /= k as f64;
            }
            assert_abs_diff_eq!(*pk, pmf, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fast_server_is_near_mm1() {
        let params = ModelParams::new(1.0, 0.0, 1.0, 0.0, 1e-4);
        let policy = Policy::constant(Point::new(50.0, 0.0), 400);
        let p = stationary_distribution(&policy, &params).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 - 1.0 / 50.0, epsilon = 1e-4);
        let (_, _, dense_p) = dense_average(&Policy::constant(Point::new(50.0, 0.0), 40), &params);
        let small =
            stationary_distribution(&Policy::constant(Point::new(50.0, 0.0), 40), &params).unwrap();
        for (a, b) in small.iter().zip(&dense_p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_single_state() {
        let params = example();
        let empty = Policy::new(vec![]);
        assert_eq!(stationary_distribution(&empty, &params).unwrap(), vec![1.0]);
        let ev = evaluate_average(&empty, &params).unwrap();
        assert_eq!(ev.gain, Some(1.0));
        assert!(ev.deltas.is_empty());
    }

    #[test]
    fn idle_gain_closed_form() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 80);
        let ev = evaluate_average(&idle, &params).unwrap();
        assert_abs_diff_eq!(ev.gain.unwrap(), -1.5, epsilon = 1e-8);
        assert!(ev.residual < 1e-9);
        // on the infinite chain u is exactly linear with slope -(h + c theta)/theta
        for d in &ev.deltas[..40] {
            assert_abs_diff_eq!(*d, -5.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn idle_discounted_closed_form() {
        let params = example();
        let idle = Policy::constant(params.idle_point(), 200);
        let ev = evaluate_discounted(&idle, &params, 1.0).unwrap();
        assert_abs_diff_eq!(ev.values[0], 1.0 / 6.0, epsilon = 1e-6);
        for i in 0..190 {
            let closed = 1.0 / 6.0 - 5.0 / 3.0 * i as f64;
            assert_abs_diff_eq!(ev.values[i], closed, epsilon = 1e-6);
        }
        let (d1, d2) = differences(&ev.values[..150]);
        for d in d1 {
            assert_abs_diff_eq!(d, -5.0 / 3.0, epsilon = 1e-9);
        }
        for d in d2 {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let params = ModelParams::new(0.7, 0.0, 0.0, 0.0, 0.3);
        let policy = Policy::constant(Point::new(2.0, 0.0), 50);
        let ev = evaluate_discounted(&policy, &params, 0.5).unwrap();
        assert!(ev.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_reward_discounts_exactly() {
        let params = ModelParams::new(0.7, 3.0, 0.0, 0.0, 0.3);
        let policy = Policy::constant(Point::new(2.0, 0.0), 50);
        for alpha in [0.5, 1.0] {
            let ev = evaluate_discounted(&policy, &params, alpha).unwrap();
            for v in &ev.values {
                assert_abs_diff_eq!(*v, 0.7 * 3.0 / alpha, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn difference_examples() {
        assert_eq!(
            differences(&[0.0, -1.0, -3.0]),
            (vec![-1.0, -2.0], vec![-1.0])
        );
        assert_eq!(differences(&[0.0, 1.0, 1.0]), (vec![1.0, 0.0], vec![-1.0]));
    }

    #[test]
    fn finite_capacity_requires_matching_policy() {
        let params = example().with_capacity(Capacity::Finite(5));
        let policy = Policy::constant(params.idle_point(), 4);
        assert!(matches!(
            evaluate_average(&policy, &params),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn heavy_traffic_bias_matches_dense_solve() {
        // mode of P far from 0: the recursions meet in the middle
        let params = ModelParams::new(6.0, 1.0, 0.3, 0.5, 0.1).with_payment(Payment::AtCompletion);
        let policy = grid_policy(&[0.5; 120], 0.25);
        let ev = evaluate_average(&policy, &params).unwrap();
        let (g, u, _) = dense_average(&policy, &params);
        assert_abs_diff_eq!(ev.gain.unwrap(), g, epsilon = 1e-9);
        for (a, b) in ev.values.iter().zip(&u) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6 * (1.0 + b.abs()));
        }
        assert!(ev.residual < 1e-8);
    }

    fn params_strategy() -> impl Strategy<Value = ModelParams> {
        (
            0.1f64..3.0,
            0.0f64..5.0,
            0.0f64..3.0,
            0.0f64..5.0,
            0.1f64..2.0,
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(lambda, r, h, c, theta, completion, finite)| {
                let mut p = ModelParams::new(lambda, r, h, c, theta);
                if completion {
                    p = p.with_payment(Payment::AtCompletion);
                }
                if finite {
                    p = p.with_capacity(Capacity::Finite(30));
                }
                p
            })
    }

    fn policy_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.2f64..8.0, -1.0f64..10.0), 30)
    }

    proptest! {
        #[test]
        fn ergodic_identity_and_dense_agreement(params in params_strategy(), acts in policy_strategy()) {
            let policy = Policy::new(acts.iter().map(|&(mu, f)| Point::new(mu, f)).collect());
            let ev = evaluate_average(&policy, &params).unwrap();
            let p = ev.stationary.as_ref().unwrap();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let chain = build_chain(&policy, &params).unwrap();
            let g: f64 = p.iter().zip(&chain.reward).map(|(a, b)| a * b).sum();
            prop_assert!((ev.gain.unwrap() - g).abs() < 1e-9);
            let norm: f64 = ev.values.iter().zip(p).map(|(u, p)| u * p).sum();
            prop_assert!(norm.abs() < 1e-10 * (1.0 + ev.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
            let scale = 1.0 + chain.reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            prop_assert!(ev.residual < 1e-9 * scale);

            let (g2, u2, _) = dense_average(&policy, &params);
            prop_assert!((ev.gain.unwrap() - g2).abs() < 1e-9 * scale);
            for (a, b) in ev.values.iter().zip(&u2) {
                prop_assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn flow_balance(params in params_strategy(), acts in policy_strategy()) {
            let policy = Policy::new(acts.iter().map(|&(mu, f)| Point::new(mu, f)).collect());
            let chain = build_chain(&policy, &params).unwrap();
            let p = stationary_distribution(&policy, &params).unwrap();
            let top = chain.top();
            let inflow: f64 = (0..top).map(|i| p[i] * params.lambda).sum();
            let outflow: f64 = (1..=top).map(|i| p[i] * chain.down[i]).sum();
            prop_assert!((inflow - outflow).abs() < 1e-10);
        }

        #[test]
        fn discounted_matches_dense(params in params_strategy(), acts in policy_strategy(), alpha in 0.05f64..3.0) {
            let policy = Policy::new(acts.iter().map(|&(mu, f)| Point::new(mu, f)).collect());
            let ev = evaluate_discounted(&policy, &params, alpha).unwrap();
            let (q, r) = dense(&policy, &params);
            let n = r.len();
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = if i == j { alpha } else { 0.0 } - q[i][j];
                }
            }
            let v = gauss(a, r);
            for (x, y) in ev.values.iter().zip(&v) {
                prop_assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
            }
            prop_assert!(ev.residual < 1e-9 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) * (alpha + 20.0));
        }

        #[test]
        fn idle_discounted_closed_form_random(
            lambda in 0.1f64..3.0, r in 0.0f64..5.0, h in 0.0f64..3.0, c in 0.0f64..5.0,
            theta in 0.2f64..2.0, alpha in 0.1f64..3.0,
        ) {
            let params = ModelParams::new(lambda, r, h, c, theta);
            let top = poisson_truncation(lambda / theta, 1e-12, 200);
            let idle = Policy::constant(params.idle_point(), top);
            let ev = evaluate_discounted(&idle, &params, alpha).unwrap();
            let k = params.abandonment_load() / (alpha + theta);
            let trusted = (top as f64 * 0.95) as usize;
            for i in 0..trusted {
                let closed = lambda / alpha * (r - k) - k * i as f64;
                prop_assert!((ev.values[i] - closed).abs() < 1e-6);
            }
        }
    }
}
