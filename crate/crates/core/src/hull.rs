//! Lower convex envelope `f*` of the action cloud and the breakpoint search
//! used by the improvement step.
//!
//! Every optimal action of the control problem lies on the lower boundary of
//! `conv(H)` and some optimal action is an extreme point, so the improvement
//! step only ever looks at envelope breakpoints. Along the breakpoints the
//! objective `-f - mu*beta` is concave, which lets [`best_index`] binary
//! search on the slopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Criterion, ModelParams, Payment, Point};

/// Default absolute tolerance on the improvement objective below which two
/// breakpoints count as tied.
pub const TIE_EPS: f64 = 1e-12;

/// Breakpoints of `f*`, strictly increasing in `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerEnvelope {
    points: Vec<Point>,
}

impl LowerEnvelope {
    pub fn breakpoints(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point {
        self.points[0]
    }

    pub fn last(&self) -> Point {
        *self.points.last().expect("envelope is nonempty")
    }

    pub fn mu_min(&self) -> f64 {
        self.first().mu
    }

    pub fn mu_max(&self) -> f64 {
        self.last().mu
    }

    /// `d+ f*` at breakpoint `k`; `+inf` at the rightmost breakpoint.
    pub fn right_slope(&self, k: usize) -> f64 {
        if k + 1 >= self.points.len() {
            f64::INFINITY
        } else {
            let (a, b) = (self.points[k], self.points[k + 1]);
            (b.f - a.f) / (b.mu - a.mu)
        }
    }

    /// `d- f*` at breakpoint `k`; `-inf` at the leftmost breakpoint.
    pub fn left_slope(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.right_slope(k - 1)
        }
    }

    /// `f*(mu)` by linear interpolation, `None` outside `[mu_min, mu_max]`.
    pub fn value_at(&self, mu: f64) -> Option<f64> {
        if mu < self.mu_min() || mu > self.mu_max() {
            return None;
        }
        let k = self.points.partition_point(|p| p.mu < mu);
        let b = self.points[k];
        if b.mu == mu || k == 0 {
            return Some(b.f);
        }
        let a = self.points[k - 1];
        Some(a.f + (b.f - a.f) * (mu - a.mu) / (b.mu - a.mu))
    }

    pub fn index_of(&self, p: Point) -> Option<usize> {
        let k = self.points.partition_point(|q| q.mu < p.mu);
        (k < self.points.len() && self.points[k] == p).then_some(k)
    }

    /// Objective of the improvement step at breakpoint `k`.
    #[inline]
    pub fn score(&self, k: usize, beta: f64) -> f64 {
        let p = self.points[k];
        -p.f - p.mu * beta
    }

    fn from_sorted(points: Vec<Point>) -> Self {
        Self { points }
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.mu - o.mu) * (b.f - o.f) - (a.f - o.f) * (b.mu - o.mu)
}

/// Lower convex hull of `points` by a monotone chain. Points sharing a service
/// rate collapse to the cheapest one; collinear interior points are dropped.
pub fn lower_envelope(points: &[Point]) -> Result<LowerEnvelope> {
    if points.is_empty() {
        return Err(Error::EmptyActions);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.mu.total_cmp(&b.mu).then(a.f.total_cmp(&b.f)));
    sorted.dedup_by(|later, kept| later.mu == kept.mu);

    let mut hull: Vec<Point> = Vec::with_capacity(sorted.len());
    for p in sorted {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(LowerEnvelope::from_sorted(hull))
}

/// Upper bound on `d- f*` at any optimal service rate.
///
/// `(h + c*theta)/(alpha + theta)` discounted, `(h + c*theta)/theta` average,
/// plus `r` when the reward is paid at completion.
pub fn slope_cap(params: &ModelParams) -> f64 {
    let load = params.abandonment_load();
    let base = match params.criterion {
        Criterion::Discounted { alpha } => load / (alpha + params.theta),
        Criterion::Average => load / params.theta,
    };
    match params.payment {
        Payment::AtArrival => base,
        Payment::AtCompletion => base + params.r,
    }
}

/// Removes breakpoints that can never be optimal for an infinite buffer:
/// left slope above [`slope_cap`], and, when every action cost is
/// non-negative, right slope `<= 0`.
pub fn prune(env: &LowerEnvelope, params: &ModelParams) -> LowerEnvelope {
    let cap = slope_cap(params);
    // the cheapest point of the cloud is always a breakpoint
    let nonneg = env.points.iter().all(|p| p.f >= 0.0);
    let kept: Vec<Point> = (0..env.len())
        .filter(|&k| env.left_slope(k) <= cap)
        .filter(|&k| !nonneg || env.right_slope(k) > 0.0)
        .map(|k| env.points[k])
        .collect();
    if kept.is_empty() {
        // cap >= 0 makes this unreachable for valid parameters
        return LowerEnvelope::from_sorted(vec![env.first()]);
    }
    LowerEnvelope::from_sorted(kept)
}

/// Index of the breakpoint maximizing `-f - mu*beta`.
///
/// An incumbent within `tie_eps` of the maximum is kept; otherwise the
/// smallest-`mu` maximizer wins.
pub fn best_index(env: &LowerEnvelope, beta: f64, incumbent: Option<usize>, tie_eps: f64) -> usize {
    let n = env.len();
    let target = -beta;
    // scores increase while the right slope is below -beta
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if env.right_slope(mid) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut best = lo;
    let mut best_score = env.score(lo, beta);
    for k in [lo.saturating_sub(1), (lo + 1).min(n - 1)] {
        let s = env.score(k, beta);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    while best > 0 && env.score(best - 1, beta) >= best_score - tie_eps {
        best -= 1;
    }
    match incumbent {
        Some(k) if k < n && env.score(k, beta) >= best_score - tie_eps => k,
        _ => best,
    }
}

/// Breakpoint maximizing `-f - mu*beta`, keeping `incumbent` on ties.
pub fn best_action(
    env: &LowerEnvelope,
    beta: f64,
    incumbent: Option<Point>,
    tie_eps: f64,
) -> Point {
    let best = best_index(env, beta, None, tie_eps);
    if let Some(p) = incumbent {
        let best_score = env.score(best, beta);
        if -p.f - p.mu * beta >= best_score - tie_eps {
            return p;
        }
    }
    env.points[best]
}
