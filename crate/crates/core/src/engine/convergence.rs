//! Dyadic refinement of the lattice.

use super::{Engine, MultiStopConfig};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, TimeGrid};
use crate::par::Execution;
use crate::rewards::{evaluate_reward, RewardSpec};

/// Everything except the step count.
#[derive(Debug, Clone)]
pub struct ConvergenceBase {
    pub driver: Driver,
    pub x0: f64,
    pub drift: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub reward: RewardSpec,
    pub rights: usize,
    /// Refraction period in calendar time.
    pub delta: f64,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: u32,
    pub steps: usize,
    pub value: f64,
    /// `None` on the first row.
    pub abs_diff_prev: Option<f64>,
}

/// Prices `base` on `2^n` steps for every `n` in `n_min..=n_max`.
///
/// Differences between consecutive levels are reported as computed. The
/// grids are not nested filtrations so nothing forces them to shrink.
pub fn convergence_study(base: &ConvergenceBase, n_min: u32, n_max: u32) -> Result<Vec<ConvergenceRow>> {
    if n_min > n_max || n_max > 24 {
        return Err(Error::config(None, format!("invalid exponent range [{n_min}, {n_max}]")));
    }
    // Fail before any work if the finest level is unstable or a level is misaligned.
    let finest = TimeGrid::new(base.horizon, 1 << n_max)?;
    let ratio = base.driver.kappa() * finest.dt().sqrt();
    if ratio >= 1.0 {
        return Err(Error::Stability { ratio });
    }
    let mut configs = Vec::new();
    for n in n_min..=n_max {
        let grid = TimeGrid::new(base.horizon, 1 << n)?;
        let cfg = MultiStopConfig::from_calendar(base.rights, base.delta, &grid).map_err(|e| match e {
            Error::Constraint(m) => Error::config(None, format!("level 2^{n}: {m}")),
            other => other,
        })?;
        configs.push((n, grid, cfg));
    }

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(configs.len());
    for (n, grid, cfg) in configs {
        let lat = Lattice::new(grid, base.x0, base.drift, base.sigma)?;
        let reward = evaluate_reward(&base.reward, &lat)?;
        let engine = Engine::new(&base.driver, &lat)?.with_execution(base.execution);
        let value = engine.solve_auxiliary(&reward, &cfg)?.price();
        let abs_diff_prev = rows.last().map(|r| (value - r.value).abs());
        rows.push(ConvergenceRow { n, steps: 1 << n, value, abs_diff_prev });
    }
    Ok(rows)
}
