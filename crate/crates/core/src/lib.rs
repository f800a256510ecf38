//! Optimal service-rate control for a single-server Markovian queue with
//! customer abandonment.
//!
//! The crate solves the control problem under discounted and long-run average
//! criteria, for rewards paid at arrival or at service completion, with an
//! infinite (truncated) or finite buffer. Optimal actions are searched only on
//! the lower convex envelope of the action cloud `{(mu, f)}`, and the
//! structural properties of the optimal policy (monotonicity, unimodality under
//! finite capacity, concavity of the value, tail limits) are exposed as
//! executable checks.
//!
//! ```
//! use ratectl_core::{ActionSet, ModelParams, Criterion, Payment, Capacity};
//! use ratectl_core::solver::{policy_iteration, SolveOptions};
//!
//! let params = ModelParams::new(0.5, 2.0, 1.0, 3.0, 0.5)
//!     .with_criterion(Criterion::Average);
//! let actions = ActionSet::quadratic_grid(0.5, 30.0, 0.5, 0.25).unwrap();
//! let report = policy_iteration(&params, &actions, 200, &SolveOptions::default()).unwrap();
//! assert!(report.diagnostics.monotone);
//! ```

pub mod error;
pub mod evaluate;
pub mod hull;
pub mod model;
pub mod sim;
pub mod solver;
pub mod structure;
pub mod transforms;
pub mod tridiag;

pub use error::{Error, Result};
pub use evaluate::Evaluation;
pub use hull::LowerEnvelope;
pub use model::{
    Action, ActionSet, Capacity, Criterion, ModelParams, Payment, Point, Policy, Rates,
    ValidatedActions,
};
pub use sim::SimEstimate;
pub use solver::{SolveOptions, SolveReport};
