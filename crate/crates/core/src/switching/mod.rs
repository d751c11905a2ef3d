//! Gain-budgeted switching between policies.

pub mod budget;
pub mod controller;
pub mod rules;
pub mod verify;

pub use budget::*;
pub use controller::*;
pub use rules::*;
pub use verify::*;
