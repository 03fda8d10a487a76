//! Finite differences for the chain of obstacle problems
//! `max{f^(i) - v, v_t + 1/2 sigma^2 x^2 v_xx + (b - kappa sigma) x v_x} = 0`,
//! `v(T, .) = 0`, with `f^(1) = f` and
//! `f^(i)(t, x) = f(t, x) + E[v^(i-1)(t + delta, S_delta)]` where `S` starts at
//! `x` and has drift `b - kappa sigma`.
//!
//! Each level is solved on a log-uniform grid, fully implicit in time, with
//! projected successive over-relaxation.

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::engine::ValueStack;
use crate::error::{Error, Result};
use crate::rewards::{RewardKind, RewardSpec};

pub const MIN_SPACE_INTERVALS: usize = 50;
pub const MIN_TIME_STEPS: usize = 50;

/// Log-uniform state nodes `x_0 < ... < x_M` and uniform times
/// `t_0 = 0 < ... < t_P = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeGrid {
    x: Vec<f64>,
    log_min: f64,
    log_step: f64,
    horizon: f64,
    time_steps: usize,
}

impl PdeGrid {
    pub fn new(x_min: f64, x_max: f64, space_intervals: usize, time_steps: usize, horizon: f64, x0: f64) -> Result<Self> {
        if !(x_min > 0.0 && x_max.is_finite() && x_min < x_max) {
            return Err(Error::Domain(format!("state range must satisfy 0 < x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if !(x_min < x0 && x0 < x_max) {
            return Err(Error::Domain(format!("x0 = {x0} must lie strictly inside [{x_min}, {x_max}]")));
        }
        if space_intervals < MIN_SPACE_INTERVALS || time_steps < MIN_TIME_STEPS {
            return Err(Error::Domain(format!(
                "grid needs at least {MIN_SPACE_INTERVALS} space intervals and {MIN_TIME_STEPS} time steps, got {space_intervals} and {time_steps}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let log_min = x_min.ln();
        let log_step = (x_max.ln() - log_min) / space_intervals as f64;
        let mut x: Vec<f64> = (0..=space_intervals).map(|j| (log_min + j as f64 * log_step).exp()).collect();
        x[0] = x_min;
        x[space_intervals] = x_max;
        Ok(PdeGrid { x, log_min, log_step, horizon, time_steps })
    }

    pub fn states(&self) -> &[f64] {
        &self.x
    }

    pub fn space_intervals(&self) -> usize {
        self.x.len() - 1
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn time(&self, p: usize) -> f64 {
        self.horizon * p as f64 / self.time_steps as f64
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Piecewise-linear in `x`; flat below the grid and linearly extended
    /// above it.
    pub fn interpolate(&self, column: &[f64], x: f64) -> f64 {
        let m = self.space_intervals();
        if x <= self.x[0] {
            return column[0];
        }
        let j = if x >= self.x[m] {
            m - 1
        } else {
            (((x.ln() - self.log_min) / self.log_step).floor() as usize).min(m - 1)
        };
        let (xa, xb) = (self.x[j], self.x[j + 1]);
        column[j] + (column[j + 1] - column[j]) * (x - xa) / (xb - xa)
    }
}

/// State dynamics and ambiguity level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeModel {
    pub x0: f64,
    pub drift: f64,
    pub sigma: f64,
    pub kappa: f64,
}

impl PdeModel {
    /// Drift of the state under the worst-case measure.
    pub fn shifted_drift(&self) -> f64 {
        self.drift - self.kappa * self.sigma
    }
}

/// Where the continuation of the next right starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObstacleVariant {
    /// From the current state `x`.
    #[default]
    Direct,
    /// From `exp(-kappa sigma t) x`.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeOptions {
    pub omega: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub quadrature_order: usize,
    /// Largest total quadrature weight, seen from `x0`, allowed to fall
    /// outside `[x_min, x_max]`.
    pub coverage_budget: f64,
    pub variant: ObstacleVariant,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            omega: 1.3,
            tolerance: 1e-10,
            max_sweeps: 10_000,
            quadrature_order: 32,
            coverage_budget: 1e-8,
            variant: ObstacleVariant::Direct,
        }
    }
}

/// Obstacle and value for one level, indexed `[p][j]` for time `t_p` and
/// state `x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSolution {
    pub obstacle: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    /// Sup norm of `min(v - f, -(v_t + L v))` over interior nodes and steps.
    pub residual: f64,
    /// Most relaxation sweeps any single time step needed.
    pub sweeps: usize,
}

/// `f(t, x)` on the grid, zero at the horizon.
pub fn payoff_obstacle(grid: &PdeGrid, spec: &RewardSpec) -> Result<Vec<Vec<f64>>> {
    let f: Box<dyn Fn(f64) -> f64> = match spec.kind {
        RewardKind::Call { strike } => Box::new(move |x| (x - strike).max(0.0)),
        RewardKind::Put { strike } => Box::new(move |x| (strike - x).max(0.0)),
        RewardKind::Linear => Box::new(|x| x),
        RewardKind::Constant(c) if c >= 0.0 => Box::new(move |_| c),
        _ => return Err(Error::Domain(format!("payoff {:?} has no state formula for the obstacle problem", spec.kind))),
    };
    let p_max = grid.time_steps();
    Ok((0..=p_max)
        .map(|p| grid.states().iter().map(|&x| if p == p_max { 0.0 } else { f(x) }).collect())
        .collect())
}

fn check_shape(grid: &PdeGrid, rows: &[Vec<f64>], what: &str) -> Result<()> {
    let cols = grid.space_intervals() + 1;
    if rows.len() != grid.time_steps() + 1 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!(
            "{what} must be {} x {cols}",
            grid.time_steps() + 1
        )));
    }
    Ok(())
}

/// Solves one obstacle problem backward from `v(T, .) = 0`.
///
/// Boundaries: `v = f` at `x_min`, `v` linear in `x` at `x_max`.
pub fn solve_vi_level(grid: &PdeGrid, model: &PdeModel, obstacle: &[Vec<f64>], opts: &PdeOptions) -> Result<LevelSolution> {
    check_shape(grid, obstacle, "obstacle")?;
    let p_max = grid.time_steps();
    if obstacle[p_max].iter().any(|&v| v != 0.0) {
        return Err(Error::Domain("terminal obstacle row must be zero".into()));
    }
    let m = grid.space_intervals();
    let dt = grid.dt();
    let h = grid.log_step;
    let mu = model.shifted_drift() - 0.5 * model.sigma * model.sigma;
    let a = 0.5 * model.sigma * model.sigma / (h * h);
    let c = mu / (2.0 * h);
    let lower = dt * (a - c);
    let upper = dt * (a + c);
    let diag = 1.0 + 2.0 * a * dt;
    let x = grid.states();
    let slope = (x[m] - x[m - 1]) / (x[m - 1] - x[m - 2]);

    let mut value: Vec<Vec<f64>> = vec![vec![0.0; m + 1]; p_max + 1];
    let mut residual: f64 = 0.0;
    let mut max_sweeps = 0;
    for p in (0..p_max).rev() {
        let rhs = value[p + 1].clone();
        let f = &obstacle[p];
        let mut v: Vec<f64> = rhs.iter().zip(f).map(|(&r, &o)| r.max(o)).collect();
        v[0] = f[0];
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut change: f64 = 0.0;
            for i in 1..m {
                let gs = (rhs[i] + lower * v[i - 1] + upper * v[i + 1]) / diag;
                let new = (v[i] + opts.omega * (gs - v[i])).max(f[i]);
                change = change.max((new - v[i]).abs());
                v[i] = new;
            }
            let top = (v[m - 1] + (v[m - 1] - v[m - 2]) * slope).max(f[m]);
            change = change.max((top - v[m]).abs());
            v[m] = top;
            if change <= opts.tolerance {
                break;
            }
            if sweeps >= opts.max_sweeps {
                return Err(Error::Solver {
                    message: format!("projected relaxation did not converge at t = {}", grid.time(p)),
                    residual: change,
                });
            }
        }
        max_sweeps = max_sweeps.max(sweeps);
        for i in 1..m {
            let op = (diag * v[i] - lower * v[i - 1] - upper * v[i + 1] - rhs[i]) / dt;
            residual = residual.max((v[i] - f[i]).min(op).abs());
        }
        value[p] = v;
    }
    Ok(LevelSolution { obstacle: obstacle.to_vec(), value, residual, sweeps: max_sweeps })
}

/// Nodes and weights for the standard normal law.
pub fn normal_quadrature(order: usize) -> Result<Vec<(f64, f64)>> {
    let deg = NonZeroUsize::new(order).ok_or_else(|| Error::Domain("quadrature order must be positive".into()))?;
    let scale = std::f64::consts::PI.sqrt();
    Ok(GaussHermite::new(deg)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / scale))
        .collect())
}

/// `f^(i) = f + E[v_prev(t + delta, S_delta)]`, with the expectation taken
/// by Gauss-Hermite quadrature against the lognormal law and `v_prev`
/// interpolated in `x`. The added term vanishes when `t + delta > T`.
pub fn build_next_obstacle(
    grid: &PdeGrid,
    model: &PdeModel,
    v_prev: &[Vec<f64>],
    f: &[Vec<f64>],
    delta_steps: usize,
    opts: &PdeOptions,
) -> Result<Vec<Vec<f64>>> {
    check_shape(grid, v_prev, "previous value")?;
    check_shape(grid, f, "obstacle")?;
    let p_max = grid.time_steps();
    let mut next = f.to_vec();
    if delta_steps == 0 {
        for (row, prev) in next.iter_mut().zip(v_prev) {
            for (o, v) in row.iter_mut().zip(prev) {
                *o += v;
            }
        }
        return Ok(next);
    }
    let delta = delta_steps as f64 * grid.dt();
    let nodes = normal_quadrature(opts.quadrature_order)?;
    let log_mean = (model.shifted_drift() - 0.5 * model.sigma * model.sigma) * delta;
    let spread = model.sigma * delta.sqrt();
    let factors: Vec<(f64, f64)> = nodes.iter().map(|&(xi, w)| ((log_mean + spread * xi).exp(), w)).collect();
    let start_scale = |p: usize| match opts.variant {
        ObstacleVariant::Direct => 1.0,
        ObstacleVariant::Scaled => (-model.kappa * model.sigma * grid.time(p)).exp(),
    };

    for p in 0..=p_max.saturating_sub(delta_steps) {
        let x0 = model.x0 * start_scale(p);
        let outside: f64 = factors
            .iter()
            .filter(|(g, _)| !(grid.x_min()..=grid.x_max()).contains(&(x0 * g)))
            .map(|(_, w)| w)
            .sum();
        if outside > opts.coverage_budget {
            return Err(Error::Coverage(format!(
                "quadrature weight {outside:e} from x0 = {x0} at t = {} falls outside [{}, {}]",
                grid.time(p),
                grid.x_min(),
                grid.x_max()
            )));
        }
        let column = &v_prev[p + delta_steps];
        let scale = start_scale(p);
        for (j, &x) in grid.states().iter().enumerate() {
            let y = x * scale;
            next[p][j] += factors.iter().map(|&(g, w)| w * grid.interpolate(column, y * g)).sum::<f64>();
        }
    }
    Ok(next)
}

/// Obstacles and values for levels `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleChain {
    pub grid: PdeGrid,
    pub levels: Vec<LevelSolution>,
}

impl ObstacleChain {
    pub fn level(&self, i: usize) -> &LevelSolution {
        &self.levels[i - 1]
    }

    /// `v^(i)(t_p, x)`.
    pub fn value_at(&self, i: usize, p: usize, x: f64) -> f64 {
        self.grid.interpolate(&self.level(i).value[p], x)
    }

    pub fn max_residual(&self) -> f64 {
        self.levels.iter().map(|l| l.residual).fold(0.0, f64::max)
    }
}

/// Solves `L` obstacle problems with the refraction period `delta` given in
/// calendar time; it must be a whole number of time steps.
pub fn solve_obstacle_chain(
    grid: &PdeGrid,
    model: &PdeModel,
    payoff: &RewardSpec,
    rights: usize,
    delta: f64,
    opts: &PdeOptions,
) -> Result<ObstacleChain> {
    if rights == 0 {
        return Err(Error::Constraint("at least one exercise right is required".into()));
    }
    let ratio = delta / grid.dt();
    let delta_steps = ratio.round();
    if !(delta >= 0.0) || (ratio - delta_steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Constraint(format!(
            "refraction period {delta} is not a whole number of PDE time steps of size {}",
            grid.dt()
        )));
    }
    let f = payoff_obstacle(grid, payoff)?;
    let mut levels: Vec<LevelSolution> = Vec::with_capacity(rights);
    for _ in 0..rights {
        let obstacle = match levels.last() {
            None => f.clone(),
            Some(prev) => build_next_obstacle(grid, model, &prev.value, &f, delta_steps as usize, opts)?,
        };
        levels.push(solve_vi_level(grid, model, &obstacle, opts)?);
    }
    Ok(ObstacleChain { grid: grid.clone(), levels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGap {
    pub level: usize,
    pub pde: f64,
    pub lattice: f64,
    /// `|pde - lattice| / (1 + |lattice|)`
    pub relative_gap: f64,
    pub flagged: bool,
}

/// `v^(i)(0, x0)` against the lattice `Y^(i)(0)` for every level both sides
/// have.
pub fn compare_pde_lattice(chain: &ObstacleChain, stack: &ValueStack, x0: f64, tolerance: f64) -> Vec<LevelGap> {
    let levels = chain.levels.len().min(stack.rights());
    (1..=levels)
        .map(|i| {
            let pde = chain.value_at(i, 0, x0);
            let lattice = stack.values(i).get(0, 0);
            let relative_gap = (pde - lattice).abs() / (1.0 + lattice.abs());
            LevelGap { level: i, pde, lattice, relative_gap, flagged: !(relative_gap <= tolerance) }
        })
        .collect()
}
