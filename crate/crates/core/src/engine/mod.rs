//! Multiple optimal stopping under a g-expectation.
//!
//! Two independent solvers produce a [`ValueStack`]:
//!
//! * [`solve_multiple_direct`] runs the joint backward recursion
//!   `Z_j(n) = max{X(n) + E_n[Z_{j-1}(n + delta)], E_n[Z_j(n + 1)]}` one time
//!   step at a time across all rights;
//! * [`solve_multiple_auxiliary`] builds the `j`-exercise rewards
//!   `X^(j)(n) = X(n) + E_n[Y^(j-1)(n + delta)]` one right at a time and solves
//!   a single-stopping problem (Snell envelope) for each.
//!
//! The two must agree node for node. Policies are read off the stop regions
//! and composed into nested stopping vectors along lattice paths.

mod convergence;
mod policy;
mod properties;
mod solve;

pub use convergence::{convergence_study, ConvergenceBase, ConvergenceRow};
pub use policy::{
    compose_stopping_times, evaluate_policy, extract_policy, path_node, random_paths, PolicyRegions, StoppingVector,
};
pub use properties::{
    check_invariants, check_structural_properties, CheckOutcome, InvariantReport, StructuralCheck, StructuralOptions,
    StructuralReport,
};
pub use solve::{snell_envelope, solve_multiple_auxiliary, solve_multiple_direct, Engine, SnellEnvelope};

use crate::error::{Error, Result};
use crate::lattice::{Surface, TimeGrid, Triangle};

/// Relative width of the tie band used by every stop/continue decision.
pub const TIE_RELATIVE: f64 = 1e-12;

/// Tie band around a continuation value.
#[inline]
pub fn tie_tolerance(continuation: f64) -> f64 {
    TIE_RELATIVE * (1.0 + continuation.abs())
}

/// Earliest-stopping rule: stop unless continuing is strictly better by more
/// than the tie band.
#[inline]
pub fn prefers_stop(immediate: f64, continuation: f64) -> bool {
    immediate >= continuation - tie_tolerance(continuation)
}

/// Number of exercise rights and the refraction period in grid steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStopConfig {
    rights: usize,
    delta_steps: usize,
    delta_calendar: f64,
}

impl MultiStopConfig {
    pub fn new(rights: usize, delta_steps: usize, grid: &TimeGrid) -> Result<Self> {
        if rights == 0 {
            return Err(Error::Constraint("at least one exercise right is required".into()));
        }
        let cfg = MultiStopConfig { rights, delta_steps, delta_calendar: delta_steps as f64 * grid.dt() };
        cfg.check_fits(grid.steps())?;
        Ok(cfg)
    }

    /// Converts a calendar refraction period onto the grid; it must land on
    /// a whole number of steps.
    pub fn from_calendar(rights: usize, delta: f64, grid: &TimeGrid) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Constraint(format!("refraction period must be nonnegative, got {delta}")));
        }
        if rights >= 1 && (rights - 1) as f64 * delta > grid.horizon() * (1.0 + 1e-12) {
            return Err(Error::Constraint(format!(
                "(L-1) * delta = {} exceeds the horizon T = {}",
                (rights - 1) as f64 * delta,
                grid.horizon()
            )));
        }
        let ratio = delta / grid.dt();
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Constraint(format!(
                "refraction period {delta} is not a whole number of steps of size {} ({ratio} steps)",
                grid.dt()
            )));
        }
        Self::new(rights, steps as usize, grid)
    }

    pub(crate) fn check_fits(&self, steps: usize) -> Result<()> {
        if (self.rights - 1) * self.delta_steps > steps {
            return Err(Error::Constraint(format!(
                "(L-1) * delta = {} steps exceeds the horizon of {steps} steps",
                (self.rights - 1) * self.delta_steps
            )));
        }
        Ok(())
    }

    pub fn rights(&self) -> usize {
        self.rights
    }

    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }

    pub fn delta_calendar(&self) -> f64 {
        self.delta_calendar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Auxiliary,
}

/// Value surfaces `V_j`, `j`-exercise rewards `X^(j)`, one-step
/// continuation values `E_n[V_j(n + 1)]` and stop regions for `j = 1..=L`.
/// Right `j = 0` is identically zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStack {
    method: Method,
    config: MultiStopConfig,
    values: Vec<Surface>,
    rewards: Vec<Surface>,
    continuation: Vec<Surface>,
    regions: Vec<Triangle<bool>>,
}

impl ValueStack {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &MultiStopConfig {
        &self.config
    }

    pub fn rights(&self) -> usize {
        self.config.rights
    }

    pub fn steps(&self) -> usize {
        self.values[0].steps()
    }

    /// `V_j` for `1 <= j <= L`.
    pub fn values(&self, j: usize) -> &Surface {
        &self.values[j - 1]
    }

    /// `X^(j)` for `1 <= j <= L`.
    pub fn rewards(&self, j: usize) -> &Surface {
        &self.rewards[j - 1]
    }

    /// `E_n[V_j(n + 1)]`, zero on the last step.
    pub fn continuation(&self, j: usize) -> &Surface {
        &self.continuation[j - 1]
    }

    pub fn region(&self, j: usize) -> &Triangle<bool> {
        &self.regions[j - 1]
    }

    /// `V_j(n, k)` with `V_0 = 0` and zero beyond the horizon.
    pub fn value_at(&self, j: usize, n: usize, k: usize) -> f64 {
        if j == 0 || n > self.steps() {
            0.0
        } else {
            self.values[j - 1].get(n, k)
        }
    }

    /// `V_j(0, 0)` for `j = 1..=L`.
    pub fn values_at_origin(&self) -> Vec<f64> {
        self.values.iter().map(|s| s.get(0, 0)).collect()
    }

    /// `V_L(0, 0)`.
    pub fn price(&self) -> f64 {
        self.values[self.config.rights - 1].get(0, 0)
    }

    /// Marginal values `V_j(0) - V_{j-1}(0)`; reported only.
    pub fn marginal_values(&self) -> Vec<f64> {
        let v = self.values_at_origin();
        v.iter().enumerate().map(|(i, x)| if i == 0 { *x } else { x - v[i - 1] }).collect()
    }
}
