//! Stability-preserving online updates of gain-bounded feedback controllers.
//!
//! The crate is organised bottom-up:
//!
//! * [`signals`]: finite sequences of vectors and their ℓp norms.
//! * [`plant`]: point-mass dynamics, pre-stabilized error models, disturbance
//!   and obstacle generators, and disturbance reconstruction.
//! * [`gaincert`]: certified ℓ2 / ℓ∞ gain bounds for the plant and empirical
//!   lower bounds for any causal operator.
//! * [`policy`]: a recurrent controller whose ℓ2 gain is bounded by construction.
//! * [`training`]: losses, reverse-mode gradients through the closed loop,
//!   Adam with projection, and the receding-horizon open-loop baseline.
//! * [`switching`]: gain-budgeted update conditions, the time-scheduled and
//!   state-triggered update rules, budget design and the per-window bound checker.
//! * [`harness`]: scenarios, experiment drivers, comparisons and file output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod gaincert;
pub mod harness;
pub mod linalg;
pub mod plant;
pub mod policy;
pub mod signals;
pub mod switching;
pub mod trace;
pub mod training;

pub use error::{Error, Result};
