//! Model equivalences between payment conventions and abandonment variants.

use crate::error::{Error, Result};
use crate::model::{ActionSet, Criterion, ModelParams, Payment, Point};

/// Rewrites a completion-payment model as an arrival-payment model with
/// `r = 0` and action costs `f - mu*r`.
///
/// The completion idle point `(theta, c*theta + theta*r)` maps to the arrival
/// idle point `(theta, c*theta)`, so validating either side appends matching
/// idle points.
pub fn completion_to_arrival(
    params: &ModelParams,
    actions: &ActionSet,
) -> Result<(ModelParams, ActionSet)> {
    if params.payment != Payment::AtCompletion {
        return Err(Error::Unsupported(
            "completion_to_arrival expects payment at completion".into(),
        ));
    }
    let r = params.r;
    let mut mapped = *params;
    mapped.payment = Payment::AtArrival;
    mapped.r = 0.0;
    let points = actions
        .points
        .iter()
        .map(|p| Point::new(p.mu, p.f - p.mu * r))
        .collect();
    Ok((
        mapped,
        ActionSet {
            points,
            includes_idle: actions.includes_idle,
        },
    ))
}

/// Average-reward equivalence: completion payment with abandonment cost `c`
/// equals arrival payment with abandonment cost `c + r`, same actions.
///
/// Exact for finite buffers. On a truncated infinite buffer the two gains
/// differ by `lambda * r * P(L)`, the arrival income the reflecting top keeps.
pub fn completion_to_arrival_average(params: &ModelParams) -> Result<ModelParams> {
    if params.payment != Payment::AtCompletion {
        return Err(Error::Unsupported(
            "completion_to_arrival_average expects payment at completion".into(),
        ));
    }
    if let Criterion::Discounted { .. } = params.criterion {
        return Err(Error::Unsupported(
            "the abandonment-cost equivalence holds only under the average criterion".into(),
        ));
    }
    let mut mapped = *params;
    mapped.payment = Payment::AtArrival;
    mapped.c = params.c + params.r;
    Ok(mapped)
}

/// Translates every action point by `(theta_s, c_s * theta_s)`, modeling
/// abandonment from service at rate `theta_s` with cost `c_s`.
///
/// The translated set no longer contains the idle point.
pub fn in_service_shift(actions: &ActionSet, theta_s: f64, c_s: f64) -> Result<ActionSet> {
    let mut errors = Vec::new();
    if !(theta_s >= 0.0 && theta_s.is_finite()) {
        errors.push(crate::error::FieldError {
            field: "theta_s",
            message: "theta_s must be >= 0".into(),
        });
    }
    if !(c_s >= 0.0 && c_s.is_finite()) {
        errors.push(crate::error::FieldError {
            field: "c_s",
            message: "c_s must be >= 0".into(),
        });
    }
    if !errors.is_empty() {
        return Err(Error::Invalid(errors));
    }
    if theta_s == 0.0 {
        return Ok(actions.clone());
    }
    Ok(ActionSet {
        points: actions
            .points
            .iter()
            .map(|p| Point::new(p.mu + theta_s, p.f + c_s * theta_s))
            .collect(),
        includes_idle: false,
    })
}
