//! Simulation-error-minimization system identification.
//!
//! Fits parametric nonlinear input-output (and state-space) models by
//! minimizing the free-run simulation error, recast as an equality-constrained
//! program over the parameters and the whole output trajectory. The solver
//! integrates a feedback-linearizing controlled-multiplier flow with the Euler
//! method; its linear-algebra core is a Q-less sparse Householder QR of the
//! block-banded constraint Jacobian with an instrumented FLOP ledger.

pub mod baselines;
pub mod dataset;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod models;
pub mod problem;
pub mod series;
pub mod sim;
pub mod solver;
pub mod sparse;
pub mod weighting;

pub use dataset::{Dataset, Scaler};
pub use error::{Error, Result};
pub use metrics::{bfr, rmse};
pub use model::{LocalJacobians, Model, ResidualJacobians, StateSpaceModel};
pub use series::Series;
pub use sim::simulate_free_run;
pub use weighting::Weighting;
