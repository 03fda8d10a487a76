//! Recombining binary approximation of a one-dimensional Brownian filtration.
//!
//! Node `(n, k)` with `0 <= k <= n` sits at Brownian level
//! `W(n, k) = (2k - n) sqrt(dt)` and carries the geometric Brownian state
//! `S(n, k) = x0 exp((b - sigma^2/2) t_n + sigma W(n, k))`. The "up" child of
//! `(n, k)` is `(n + 1, k + 1)`, the "down" child is `(n + 1, k)`.
//!
//! Conditional g-expectations are computed with the one-step scheme
//!
//! ```text
//! z = (y_up - y_down) / (2 sqrt(dt))
//! y = (y_up + y_down) / 2 + g(t, z) dt
//! ```
//!
//! which is monotone as long as `kappa sqrt(dt) < 1`.

use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Domain("lattice needs at least one step".into()));
        }
        Ok(TimeGrid { horizon, steps, dt: horizon / steps as f64 })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Lower-triangular storage indexed by lattice node `(n, k)`, `0 <= k <= n <= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle<T> {
    steps: usize,
    data: Vec<T>,
}

pub type Surface = Triangle<f64>;

#[inline]
fn offset(n: usize) -> usize {
    n * (n + 1) / 2
}

impl<T: Clone> Triangle<T> {
    pub fn filled(steps: usize, value: T) -> Self {
        Triangle { steps, data: vec![value; offset(steps + 1)] }
    }

    pub fn from_fn(steps: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(offset(steps + 1));
        for n in 0..=steps {
            for k in 0..=n {
                data.push(f(n, k));
            }
        }
        Triangle { steps, data }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> T {
        debug_assert!(k <= n && n <= self.steps);
        self.data[offset(n) + k].clone()
    }

    #[inline]
    pub fn set(&mut self, n: usize, k: usize, value: T) {
        debug_assert!(k <= n && n <= self.steps);
        self.data[offset(n) + k] = value;
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[T] {
        &self.data[offset(n)..offset(n + 1)]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.data[offset(n)..offset(n + 1)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        (0..=self.steps).flat_map(move |n| self.row(n).iter().enumerate().map(move |(k, v)| (n, k, v)))
    }
}

impl Surface {
    pub fn zeros(steps: usize) -> Self {
        Triangle::filled(steps, 0.0)
    }

    pub fn slice(&self, n: usize) -> ValueSlice {
        ValueSlice { step: n, values: self.row(n).to_vec() }
    }

    /// Largest componentwise absolute difference.
    pub fn max_abs_diff(&self, other: &Surface) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest componentwise `|a - b| / (1 + |b|)`.
    pub fn max_rel_diff(&self, other: &Surface) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs() / (1.0 + b.abs())))
    }
}

/// Values at every node of one lattice step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSlice {
    pub step: usize,
    pub values: Vec<f64>,
}

impl ValueSlice {
    pub fn new(step: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != step + 1 {
            return Err(Error::Shape(format!("slice at step {step} needs {} values, got {}", step + 1, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("slice value {v} is not finite")));
        }
        Ok(ValueSlice { step, values })
    }

    pub fn constant(step: usize, c: f64) -> Self {
        ValueSlice { step, values: vec![c; step + 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid: TimeGrid,
    x0: f64,
    b: f64,
    sigma: f64,
    sqrt_dt: f64,
}

impl Lattice {
    pub fn new(grid: TimeGrid, x0: f64, b: f64, sigma: f64) -> Result<Self> {
        if !(x0.is_finite() && x0 > 0.0) {
            return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !b.is_finite() {
            return Err(Error::Domain(format!("drift must be finite, got {b}")));
        }
        Ok(Lattice { grid, x0, b, sigma, sqrt_dt: grid.dt().sqrt() })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn drift(&self) -> f64 {
        self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn time(&self, n: usize) -> f64 {
        self.grid.time(n)
    }

    pub fn brownian(&self, n: usize, k: usize) -> f64 {
        (2.0 * k as f64 - n as f64) * self.sqrt_dt
    }

    pub fn state(&self, n: usize, k: usize) -> f64 {
        let t = self.time(n);
        self.x0 * ((self.b - 0.5 * self.sigma * self.sigma) * t + self.sigma * self.brownian(n, k)).exp()
    }

    /// Checks the one-step monotonicity condition `kappa sqrt(dt) < 1`.
    pub fn check_stability(&self, d: &Driver) -> Result<()> {
        let ratio = d.kappa() * self.sqrt_dt;
        if ratio < 1.0 {
            Ok(())
        } else {
            Err(Error::Stability { ratio })
        }
    }
}

pub fn build_lattice(grid: TimeGrid, x0: f64, b: f64, sigma: f64) -> Result<Lattice> {
    Lattice::new(grid, x0, b, sigma)
}

#[inline]
fn step_unchecked(d: &Driver, t: f64, dt: f64, two_sqrt_dt: f64, y_up: f64, y_down: f64) -> (f64, f64) {
    let z = (y_up - y_down) / two_sqrt_dt;
    let y = 0.5 * (y_up + y_down) + d.g(t, z) * dt;
    (y, z)
}

/// One backward step of the g-expectation: returns `(y, z)`.
pub fn g_step(d: &Driver, t: f64, dt: f64, y_up: f64, y_down: f64) -> Result<(f64, f64)> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(y_up.is_finite() && y_down.is_finite() && t.is_finite()) {
        return Err(Error::Domain("g_step inputs must be finite".into()));
    }
    let ratio = d.kappa() * dt.sqrt();
    if ratio >= 1.0 {
        return Err(Error::Stability { ratio });
    }
    Ok(step_unchecked(d, t, dt, 2.0 * dt.sqrt(), y_up, y_down))
}

/// A driver bound to a lattice after the stability check; the engine's
/// workhorse for conditional g-expectations.
#[derive(Debug, Clone, Copy)]
pub struct GExpectation<'a> {
    driver: &'a Driver,
    lattice: &'a Lattice,
    exec: Execution,
}

impl<'a> GExpectation<'a> {
    pub fn new(driver: &'a Driver, lattice: &'a Lattice) -> Result<Self> {
        lattice.check_stability(driver)?;
        Ok(GExpectation { driver, lattice, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn driver(&self) -> &'a Driver {
        self.driver
    }

    pub fn lattice(&self) -> &'a Lattice {
        self.lattice
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// One node: children values at step `n + 1` to the value at step `n`.
    #[inline]
    pub fn step(&self, n: usize, y_up: f64, y_down: f64) -> f64 {
        let dt = self.lattice.dt();
        step_unchecked(self.driver, self.lattice.time(n), dt, 2.0 * self.lattice.sqrt_dt(), y_up, y_down).0
    }

    /// Rolls the `n + 2` values of step `n + 1` back into the `n + 1` values
    /// of step `n`.
    pub fn rollback_into(&self, n: usize, next: &[f64], out: &mut [f64]) {
        debug_assert_eq!(next.len(), n + 2);
        debug_assert_eq!(out.len(), n + 1);
        let d = self.driver;
        let t = self.lattice.time(n);
        let dt = self.lattice.dt();
        let two_sqrt_dt = 2.0 * self.lattice.sqrt_dt();
        self.exec.fill(out, |k| step_unchecked(d, t, dt, two_sqrt_dt, next[k + 1], next[k]).0);
    }

    /// Rolls the values at step `from` back `span` steps. Returns the row at
    /// step `from - span`.
    pub fn rollback_span(&self, from: usize, values: &[f64], span: usize) -> Vec<f64> {
        debug_assert!(span <= from);
        debug_assert_eq!(values.len(), from + 1);
        let mut cur = values.to_vec();
        let mut buf = vec![0.0; from + 1];
        for m in (from - span..from).rev() {
            buf.truncate(m + 1);
            self.rollback_into(m, &cur, &mut buf);
            std::mem::swap(&mut cur, &mut buf);
        }
        cur
    }

    pub fn rollback(&self, next: &ValueSlice) -> Result<ValueSlice> {
        if next.step == 0 || next.step > self.lattice.steps() {
            return Err(Error::Shape(format!("cannot roll back a slice at step {}", next.step)));
        }
        if next.values.len() != next.step + 1 {
            return Err(Error::Shape(format!(
                "slice at step {} has {} values, expected {}",
                next.step,
                next.values.len(),
                next.step + 1
            )));
        }
        let n = next.step - 1;
        let mut out = vec![0.0; n + 1];
        self.rollback_into(n, &next.values, &mut out);
        Ok(ValueSlice { step: n, values: out })
    }

    /// `E_n[xi]` for `xi` given at step `m >= n`.
    pub fn conditional(&self, slice: &ValueSlice, target: usize) -> Result<ValueSlice> {
        if target > slice.step {
            return Err(Error::Ordering { target, source_step: slice.step });
        }
        if slice.step > self.lattice.steps() || slice.values.len() != slice.step + 1 {
            return Err(Error::Shape(format!("slice at step {} does not fit the lattice", slice.step)));
        }
        Ok(ValueSlice { step: target, values: self.rollback_span(slice.step, &slice.values, slice.step - target) })
    }
}

/// One-step conditional g-expectation of a slice at step `n + 1`.
pub fn rollback_slice(d: &Driver, lat: &Lattice, n: usize, next: &ValueSlice) -> Result<ValueSlice> {
    if next.step != n + 1 {
        return Err(Error::Shape(format!("expected a slice at step {}, got step {}", n + 1, next.step)));
    }
    GExpectation::new(d, lat)?.rollback(next)
}

pub fn conditional_g_expectation(d: &Driver, lat: &Lattice, slice: &ValueSlice, target: usize) -> Result<ValueSlice> {
    GExpectation::new(d, lat)?.conditional(slice, target)
}

/// Violation counts from randomized tests of the g-expectation axioms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AxiomReport {
    pub trials: usize,
    pub monotonicity: usize,
    /// Max `|E[A + c] - E[A] - c|`. Zero whenever the arithmetic is exact.
    pub translation_error: f64,
    pub domination: usize,
    /// `None` unless the driver is concave.
    pub concavity: Option<usize>,
}

impl AxiomReport {
    /// Inputs stay below 32 in magnitude, so this is a few ulps.
    pub const TRANSLATION_SLACK: f64 = 1e-13;

    pub fn violations(&self) -> usize {
        self.monotonicity
            + self.domination
            + self.concavity.unwrap_or(0)
            + usize::from(self.translation_error > Self::TRANSLATION_SLACK)
    }
}

/// Runs `trials` random conditional expectations over spans of up to four
/// steps and checks monotonicity, translation invariance, domination by the
/// `sup_kappa` evaluation with the same `kappa` and, for concave drivers,
/// concavity. Inputs are multiples of `2^-10` so that on grids with `dt` a
/// power of four every homogeneous driver computes exactly; comparisons
/// still allow `1e-13` relative slack for the others.
pub fn check_expectation_axioms(d: &Driver, lat: &Lattice, trials: usize, seed: u64) -> Result<AxiomReport> {
    use rand::{Rng, SeedableRng};

    let ge = GExpectation::new(d, lat)?.with_execution(Execution::Sequential);
    let dominating = Driver::sup_kappa(d.kappa())?;
    let ge_dom = GExpectation::new(&dominating, lat)?.with_execution(Execution::Sequential);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dyadic = |rng: &mut rand_chacha::ChaCha8Rng, max: f64| (rng.gen_range(0.0..max) * 1024.0).floor() / 1024.0;
    let below = |lhs: f64, rhs: f64| lhs <= rhs + 1e-13 * (1.0 + lhs.abs().max(rhs.abs()));
    let steps = lat.steps();
    let mut rep = AxiomReport { trials, concavity: d.flags().is_concave.then_some(0), ..Default::default() };

    for _ in 0..trials {
        let from = rng.gen_range(1..=steps);
        let span = rng.gen_range(1..=from.min(4));
        let a: Vec<f64> = (0..=from).map(|_| dyadic(&mut rng, 16.0)).collect();
        let b: Vec<f64> = (0..=from).map(|_| dyadic(&mut rng, 16.0)).collect();
        let lower: Vec<f64> = a.iter().map(|&x| x - dyadic(&mut rng, 4.0)).collect();
        let c = dyadic(&mut rng, 8.0) - 4.0;
        let roll = |v: &[f64]| ge.rollback_span(from, v, span);

        let (ea, eb) = (roll(&a), roll(&b));
        rep.monotonicity += roll(&lower).iter().zip(&ea).filter(|(l, u)| !below(**l, **u)).count();

        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        for (s, e) in roll(&shifted).iter().zip(&ea) {
            rep.translation_error = rep.translation_error.max((s - (e + c)).abs());
        }

        let gap: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        let bound = ge_dom.rollback_span(from, &gap, span);
        rep.domination += ea.iter().zip(&eb).zip(&bound).filter(|((x, y), m)| !below((*x - *y).abs(), **m)).count();

        if let Some(count) = rep.concavity.as_mut() {
            let lambda = rng.gen_range(1..16) as f64 / 16.0;
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            *count += roll(&mix)
                .iter()
                .zip(ea.iter().zip(&eb))
                .filter(|(m, (x, y))| !below(lambda * **x + (1.0 - lambda) * **y, **m))
                .count();
        }
    }
    Ok(rep)
}
