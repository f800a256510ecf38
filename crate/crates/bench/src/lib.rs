//! Benchmark fixtures.

use ratectl_core::model::{ActionSet, ModelParams, Payment};

/// The reference instance: quadratic cost `mu^2/4` on `0.5..=30` in steps of 0.01.
pub fn reference(payment: Payment) -> (ModelParams, ActionSet) {
    let params = ModelParams::new(0.5, 2.0, 1.0, 3.0, 0.5).with_payment(payment);
    let actions = ActionSet::quadratic_grid(0.5, 30.0, 0.01, 0.25).expect("valid grid");
    (params, actions)
}
