//! Reward surfaces `X(n, k)` on the lattice.
//!
//! Steps beyond the horizon carry reward 0, so "exercising" after `N` is
//! well defined and worthless.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// Explicit per-node values, e.g. loaded from a "n k value" text file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeTable {
    entries: BTreeMap<(usize, usize), f64>,
}

impl NodeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, n: usize, k: usize, value: f64) {
        self.entries.insert((n, k), value);
    }

    /// Table whose value depends on the step only.
    pub fn deterministic(profile: &[f64]) -> Self {
        let mut t = NodeTable::new();
        for (n, &v) in profile.iter().enumerate() {
            for k in 0..=n {
                t.insert(n, k, v);
            }
        }
        t
    }

    pub fn from_fn(steps: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = NodeTable::new();
        for n in 0..=steps {
            for k in 0..=n {
                t.insert(n, k, f(n, k));
            }
        }
        t
    }

    /// Parses rows `n k value`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = NodeTable::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::config(Some(i + 1), format!("expected `n k value`, got `{line}`"));
            if fields.len() != 3 {
                return Err(bad());
            }
            let n: usize = fields[0].parse().map_err(|_| bad())?;
            let k: usize = fields[1].parse().map_err(|_| bad())?;
            let v: f64 = fields[2].parse().map_err(|_| bad())?;
            if k > n {
                return Err(Error::config(Some(i + 1), format!("node ({n}, {k}) has k > n")));
            }
            t.insert(n, k, v);
        }
        Ok(t)
    }

    pub fn get(&self, n: usize, k: usize) -> Option<f64> {
        self.entries.get(&(n, k)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardKind {
    /// `(S - K)^+`
    Call { strike: f64 },
    /// `(K - S)^+`
    Put { strike: f64 },
    /// `S` itself.
    Linear,
    /// The same value at every node.
    Constant(f64),
    Table(NodeTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Forces `X(N, .) = 0`.
    pub terminal_zero: bool,
    /// When set, checked against the produced values along `k`.
    pub monotone: Option<Monotonicity>,
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        RewardSpec { kind, terminal_zero: false, monotone: None }
    }

    pub fn call(strike: f64) -> Self {
        Self::new(RewardKind::Call { strike })
    }

    pub fn put(strike: f64) -> Self {
        Self::new(RewardKind::Put { strike })
    }

    pub fn table(table: NodeTable) -> Self {
        Self::new(RewardKind::Table(table))
    }

    pub fn terminal_zero(mut self, yes: bool) -> Self {
        self.terminal_zero = yes;
        self
    }

    pub fn monotone(mut self, m: Monotonicity) -> Self {
        self.monotone = Some(m);
        self
    }

    /// The monotonicity a payoff kind has by construction.
    pub fn natural_monotonicity(&self) -> Option<Monotonicity> {
        match self.kind {
            RewardKind::Call { .. } | RewardKind::Linear => Some(Monotonicity::Increasing),
            RewardKind::Put { .. } => Some(Monotonicity::Decreasing),
            RewardKind::Constant(_) => Some(Monotonicity::Increasing),
            RewardKind::Table(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSurface {
    values: Surface,
}

impl RewardSurface {
    pub fn from_surface(values: Surface) -> Result<Self> {
        for (n, k, &v) in values.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("reward at node ({n}, {k}) must be finite and nonnegative, got {v}")));
            }
        }
        Ok(RewardSurface { values })
    }

    pub fn zero(steps: usize) -> Self {
        RewardSurface { values: Surface::zeros(steps) }
    }

    /// Step-only reward `X(n, .) = profile[n]`.
    pub fn deterministic(profile: &[f64]) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::Shape("empty reward profile".into()));
        }
        Self::from_surface(Surface::from_fn(profile.len() - 1, |n, _| profile[n]))
    }

    pub fn steps(&self) -> usize {
        self.values.steps()
    }

    /// `X(n, k)`, zero beyond the horizon.
    #[inline]
    pub fn at(&self, n: usize, k: usize) -> f64 {
        if n > self.values.steps() {
            0.0
        } else {
            self.values.get(n, k)
        }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.values.row(n)
    }

    pub fn surface(&self) -> &Surface {
        &self.values
    }

    /// Returns the per-step profile when every row is constant in `k`.
    pub fn deterministic_profile(&self) -> Option<Vec<f64>> {
        (0..=self.steps())
            .map(|n| {
                let row = self.row(n);
                row.iter().all(|&v| v == row[0]).then_some(row[0])
            })
            .collect()
    }

    /// First node where the row fails to be monotone in `k`, if any.
    pub fn monotonicity_witness(&self, m: Monotonicity) -> Option<(usize, usize)> {
        for n in 1..=self.steps() {
            let row = self.row(n);
            for k in 0..n {
                let ok = match m {
                    Monotonicity::Increasing => row[k + 1] >= row[k],
                    Monotonicity::Decreasing => row[k + 1] <= row[k],
                };
                if !ok {
                    return Some((n, k));
                }
            }
        }
        None
    }

    pub fn is_monotone(&self, m: Monotonicity) -> bool {
        self.monotonicity_witness(m).is_none()
    }
}

pub fn evaluate_reward(spec: &RewardSpec, lat: &Lattice) -> Result<RewardSurface> {
    let steps = lat.steps();
    let values = match &spec.kind {
        RewardKind::Call { strike } | RewardKind::Put { strike } if !(strike.is_finite() && *strike >= 0.0) => {
            return Err(Error::Domain(format!("strike must be finite and nonnegative, got {strike}")));
        }
        RewardKind::Call { strike } => Surface::from_fn(steps, |n, k| (lat.state(n, k) - strike).max(0.0)),
        RewardKind::Put { strike } => Surface::from_fn(steps, |n, k| (strike - lat.state(n, k)).max(0.0)),
        RewardKind::Linear => Surface::from_fn(steps, |n, k| lat.state(n, k)),
        RewardKind::Constant(c) => Surface::filled(steps, *c),
        RewardKind::Table(table) => {
            let expected = (steps + 1) * (steps + 2) / 2;
            if table.len() != expected {
                return Err(Error::Shape(format!(
                    "reward table has {} entries; a {steps}-step lattice has {expected} nodes",
                    table.len()
                )));
            }
            let mut s = Surface::zeros(steps);
            for n in 0..=steps {
                for k in 0..=n {
                    let v = table
                        .get(n, k)
                        .ok_or_else(|| Error::Shape(format!("reward table is missing node ({n}, {k})")))?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Domain(format!("reward table entry at ({n}, {k}) is {v}; rewards must be nonnegative")));
                    }
                    s.set(n, k, v);
                }
            }
            s
        }
    };
    let mut surface = RewardSurface::from_surface(values)?;
    if spec.terminal_zero {
        surface.values.row_mut(steps).fill(0.0);
    }
    if let Some(m) = spec.monotone {
        if let Some((n, k)) = surface.monotonicity_witness(m) {
            return Err(Error::Validation(format!(
                "reward declared {m:?} but X({n},{}) = {} vs X({n},{k}) = {}",
                k + 1,
                surface.at(n, k + 1),
                surface.at(n, k)
            )));
        }
    }
    Ok(surface)
}
