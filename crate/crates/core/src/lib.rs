//! Multiple optimal stopping (swing options) under g-expectations on a
//! recombining Brownian lattice, with independent oracles and a
//! finite-difference obstacle-problem solver for cross-checks.

pub mod cli;
pub mod driver;
pub mod engine;
pub mod error;
pub mod hjb;
pub mod lattice;
pub mod oracle;
pub mod par;
pub mod rewards;

pub use driver::Driver;
pub use engine::{Engine, MultiStopConfig, ValueStack};
pub use error::{Error, Result};
pub use lattice::{Lattice, TimeGrid};
pub use rewards::{RewardSpec, RewardSurface};
