//! Learning-augmented model predictive control for a planar quadrotor under
//! time-varying disturbances.
//!
//! The controller combines the analytic vehicle model with a residual network
//! that sees the state, the control and a sinusoidal embedding of time, and
//! trains that network online on two timescales: the output layer on recent
//! data every few steps, the hidden layers on replayed data less often.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod learner;
pub mod mpc;
pub mod plant;
pub mod residual_net;
pub mod selfcheck;
pub mod time_embedding;

pub use error::{ConfigError, Error, Result, SimulationFault};
pub use plant::{Control, DisturbanceKind, DisturbanceSpec, QuadParams, State};
pub use time_embedding::TimeEmbeddingSpec;
