//! Ground truth for the engine: exhaustive enumeration of adapted stopping
//! rules on a small non-recombining tree, the classical problem under a
//! drift-shifted measure, and the closed form for deterministic rewards.

use crate::driver::Driver;
use crate::engine::{prefers_stop, MultiStopConfig};
use crate::error::{Error, Result};
use crate::lattice::{g_step, Lattice, Surface, TimeGrid};
use crate::rewards::{Monotonicity, RewardSurface};

pub const MAX_TREE_DEPTH: usize = 5;
pub const MAX_ENUMERATED_RIGHTS: usize = 2;
/// Largest number of candidate stopping vectors one enumeration may visit.
pub const MAX_CANDIDATES: u128 = 20_000_000;

/// Full binary tree of lattice paths. Node `(s, p)` is reached by the moves
/// encoded in the `s` low bits of `p`, most significant first, `1` for up.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTree {
    depth: usize,
    grid: TimeGrid,
    payoff: Vec<Vec<f64>>,
}

impl PathTree {
    /// Copies the recombining reward onto every path: node `(s, p)` gets
    /// `X(s, popcount(p))`.
    pub fn from_surface(reward: &RewardSurface, grid: &TimeGrid) -> Result<Self> {
        if reward.steps() != grid.steps() {
            return Err(Error::Shape(format!("reward has {} steps, grid has {}", reward.steps(), grid.steps())));
        }
        Self::from_fn(grid, |s, p| reward.at(s, p.count_ones() as usize))
    }

    pub fn from_fn(grid: &TimeGrid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let depth = grid.steps();
        if depth > MAX_TREE_DEPTH {
            return Err(Error::Capacity(format!("tree depth {depth} exceeds {MAX_TREE_DEPTH}")));
        }
        let payoff: Vec<Vec<f64>> = (0..=depth).map(|s| (0..1usize << s).map(|p| f(s, p)).collect()).collect();
        for (s, row) in payoff.iter().enumerate() {
            if let Some(p) = row.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Domain(format!("payoff at tree node ({s}, {p}) is {}", row[p])));
            }
        }
        Ok(PathTree { depth, grid: *grid, payoff })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    /// Zero beyond the horizon.
    pub fn payoff(&self, s: usize, p: usize) -> f64 {
        if s > self.depth {
            0.0
        } else {
            self.payoff[s][p]
        }
    }

    /// Moves of the path ending in `leaf`, first move first.
    pub fn leaf_path(&self, leaf: usize) -> Vec<bool> {
        (0..self.depth).map(|i| (leaf >> (self.depth - 1 - i)) & 1 == 1).collect()
    }

    fn node_on_leaf(&self, leaf: usize, s: usize) -> usize {
        leaf >> (self.depth - s)
    }

    /// `E_0` of a terminal payoff given per leaf.
    pub fn rollback(&self, d: &Driver, leaves: &[f64]) -> Result<f64> {
        if leaves.len() != 1 << self.depth {
            return Err(Error::Shape(format!("{} leaf values for {} leaves", leaves.len(), 1 << self.depth)));
        }
        let dt = self.grid.dt();
        let mut row = leaves.to_vec();
        for s in (0..self.depth).rev() {
            let t = self.grid.time(s);
            row = (0..1usize << s)
                .map(|p| g_step(d, t, dt, row[2 * p + 1], row[2 * p]).map(|(y, _)| y))
                .collect::<Result<_>>()?;
        }
        Ok(row[0])
    }

    /// `E_0[sum_l X(tau_l)]` where `times(path)` lists the exercise steps
    /// along each path. Steps beyond the horizon pay nothing. The caller is
    /// responsible for the times being adapted.
    pub fn evaluate_times(&self, d: &Driver, mut times: impl FnMut(&[bool]) -> Vec<usize>) -> Result<f64> {
        let leaves: Vec<f64> = (0..1usize << self.depth)
            .map(|leaf| {
                times(&self.leaf_path(leaf))
                    .into_iter()
                    .filter(|&s| s <= self.depth)
                    .map(|s| self.payoff(s, self.node_on_leaf(leaf, s)))
                    .sum()
            })
            .collect();
        self.rollback(d, &leaves)
    }
}

/// Number of adapted stopping rules on a tree of depth `h`.
pub fn stopping_rule_count(h: usize) -> u128 {
    (0..h).fold(1u128, |s, _| s.saturating_mul(s).saturating_add(1))
}

/// Every adapted stopping rule on a subtree of depth `h`, as the stop level
/// (relative to the subtree root) of each of its `2^h` leaves.
fn stopping_rules(h: usize, memo: &mut Vec<Vec<Vec<u8>>>) -> &[Vec<u8>] {
    while memo.len() <= h {
        let level = memo.len();
        let mut rules = vec![vec![0u8; 1 << level]];
        if level > 0 {
            let sub = &memo[level - 1];
            for a in sub {
                for b in sub {
                    rules.push(a.iter().chain(b).map(|&s| s + 1).collect());
                }
            }
        }
        memo.push(rules);
    }
    &memo[h]
}

/// Best value of the enumeration and the stopping vector attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub value: f64,
    /// Exercise steps per leaf (indexed as [`PathTree::leaf_path`]), ascending.
    /// Steps beyond the horizon mark unexercised rights.
    pub argmax: Vec<Vec<usize>>,
    /// Number of stopping vectors evaluated.
    pub count: u128,
}

impl EnumerationResult {
    /// Argmax times along `path`.
    pub fn times_on(&self, path: &[bool]) -> &[usize] {
        let leaf = path.iter().fold(0usize, |acc, &up| 2 * acc + up as usize);
        &self.argmax[leaf]
    }
}

/// One block of second-right options below a first-right stop node.
struct Block {
    start: usize,
    options: Vec<Vec<u8>>,
}

fn second_right_options(depth: usize, s: usize, delta: usize, memo: &mut Vec<Vec<Vec<u8>>>) -> Vec<Vec<u8>> {
    let width = 1usize << (depth - s);
    let start = s + delta;
    if start > depth {
        return vec![vec![start as u8; width]];
    }
    let sub = stopping_rules(depth - start, memo).to_vec();
    let parts = 1usize << delta;
    let mut out = Vec::new();
    let mut idx = vec![0usize; parts];
    loop {
        out.push(idx.iter().flat_map(|&i| sub[i].iter().map(|&l| l + start as u8)).collect());
        let mut pos = parts;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sub.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn count_pairs(depth: usize, delta: usize, first: &[Vec<u8>]) -> u128 {
    first
        .iter()
        .map(|rule| {
            let mut total = 1u128;
            let mut leaf = 0;
            while leaf < rule.len() {
                let s = rule[leaf] as usize;
                let start = s + delta;
                let n = if start > depth { 1 } else { stopping_rule_count(depth - start).saturating_pow(1 << delta) };
                total = total.saturating_mul(n);
                leaf += 1 << (depth - s);
            }
            total
        })
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// Maximizes `E_0[sum_l X(tau_l)]` over every adapted stopping rule (one
/// right) or every pair of rules `tau_1 <= tau_2` with `tau_2 - tau_1 >= delta`
/// (two rights). Pairs violating the separation are never generated.
pub fn enumerate_multiple_stopping(d: &Driver, tree: &PathTree, rights: usize, delta: usize) -> Result<EnumerationResult> {
    if tree.depth > MAX_TREE_DEPTH {
        return Err(Error::Capacity(format!("tree depth {} exceeds {MAX_TREE_DEPTH}", tree.depth)));
    }
    if rights == 0 || rights > MAX_ENUMERATED_RIGHTS {
        return Err(Error::Capacity(format!("enumeration supports 1 to {MAX_ENUMERATED_RIGHTS} rights, got {rights}")));
    }
    let depth = tree.depth;
    let leaves = 1usize << depth;
    let mut memo = Vec::new();
    let first: Vec<Vec<u8>> = stopping_rules(depth, &mut memo).to_vec();
    let count = if rights == 1 { first.len() as u128 } else { count_pairs(depth, delta, &first) };
    if count > MAX_CANDIDATES {
        return Err(Error::Capacity(format!("{count} candidate stopping vectors exceed the limit of {MAX_CANDIDATES}")));
    }

    let pay = |leaf: usize, s: usize| tree.payoff(s, if s > depth { 0 } else { leaf >> (depth - s) });
    let mut best = EnumerationResult { value: f64::NEG_INFINITY, argmax: Vec::new(), count };
    let consider = |best: &mut EnumerationResult, values: &[f64], times: &dyn Fn(usize) -> Vec<usize>| -> Result<()> {
        let v = tree.rollback(d, values)?;
        if v > best.value {
            best.value = v;
            best.argmax = (0..leaves).map(times).collect();
        }
        Ok(())
    };

    let mut values = vec![0.0; leaves];
    for rule in &first {
        let base: Vec<f64> = (0..leaves).map(|l| pay(l, rule[l] as usize)).collect();
        if rights == 1 {
            consider(&mut best, &base, &|l| vec![rule[l] as usize])?;
            continue;
        }
        let mut blocks = Vec::new();
        let mut leaf = 0;
        while leaf < leaves {
            let s = rule[leaf] as usize;
            blocks.push(Block { start: leaf, options: second_right_options(depth, s, delta, &mut memo) });
            leaf += 1 << (depth - s);
        }
        let mut idx = vec![0usize; blocks.len()];
        'pairs: loop {
            for (b, &i) in blocks.iter().zip(&idx) {
                for (off, &s2) in b.options[i].iter().enumerate() {
                    let l = b.start + off;
                    values[l] = base[l] + pay(l, s2 as usize);
                }
            }
            let second = |l: usize| {
                let b = blocks.partition_point(|b| b.start <= l) - 1;
                blocks[b].options[idx[b]][l - blocks[b].start] as usize
            };
            consider(&mut best, &values, &|l| vec![rule[l] as usize, second(l)])?;
            let mut pos = blocks.len();
            loop {
                if pos == 0 {
                    break 'pairs;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < blocks[pos].options.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    Ok(best)
}

/// `(1 - kappa sqrt(dt)) / 2`, the up-probability of the measure whose drift
/// is shifted down by `kappa`.
pub fn distorted_up_probability(kappa: f64, dt: f64) -> f64 {
    (1.0 - kappa * dt.sqrt()) / 2.0
}

/// Classical multiple-stopping values under the drift-shifted measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftShiftResult {
    pub p_up: f64,
    /// `values[j - 1]` is the surface for `j` rights.
    pub values: Vec<Surface>,
    /// `(j, n)` for every row of `V_j` whose monotonicity in the state differs
    /// from the reward's; the equivalence is exact only when this is empty.
    pub monotonicity_failures: Vec<(usize, usize)>,
}

impl DriftShiftResult {
    pub fn value(&self, j: usize) -> &Surface {
        &self.values[j - 1]
    }

    pub fn price(&self) -> f64 {
        self.values.last().map_or(0.0, |v| v.get(0, 0))
    }
}

/// Solves the multiple-stopping problem with the classical expectation under
/// up-probability `(1 - kappa sqrt(dt)) / 2` for an increasing reward, or
/// `(1 + kappa sqrt(dt)) / 2` for a decreasing one.
pub fn drift_shift_value(lat: &Lattice, reward: &RewardSurface, kappa: f64, cfg: &MultiStopConfig) -> Result<DriftShiftResult> {
    let steps = lat.steps();
    if reward.steps() != steps {
        return Err(Error::Shape(format!("reward has {} steps, lattice has {steps}", reward.steps())));
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::Domain(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    let ratio = kappa * lat.sqrt_dt();
    if ratio >= 1.0 {
        return Err(Error::Stability { ratio });
    }
    let direction = if reward.is_monotone(Monotonicity::Increasing) {
        Monotonicity::Increasing
    } else if reward.is_monotone(Monotonicity::Decreasing) {
        Monotonicity::Decreasing
    } else {
        let (n, k) = reward.monotonicity_witness(Monotonicity::Increasing).unwrap_or_default();
        return Err(Error::Precondition(format!("reward is not monotone in the state (first break at node ({n}, {k}))")));
    };
    let p_up = match direction {
        Monotonicity::Increasing => distorted_up_probability(kappa, lat.dt()),
        Monotonicity::Decreasing => 1.0 - distorted_up_probability(kappa, lat.dt()),
    };
    let p_down = 1.0 - p_up;
    let expect = |next: &[f64]| -> Vec<f64> { next.windows(2).map(|w| p_up * w[1] + p_down * w[0]).collect() };
    cfg.check_fits(steps)?;
    let delta = cfg.delta_steps();

    let mut values: Vec<Surface> = Vec::with_capacity(cfg.rights());
    let mut failures = Vec::new();
    for j in 1..=cfg.rights() {
        let mut rew = Surface::zeros(steps);
        for n in 0..=steps {
            let row = rew.row_mut(n);
            row.copy_from_slice(reward.row(n));
            if let Some(prev) = values.last() {
                if n + delta <= steps {
                    let mut carried = prev.row(n + delta).to_vec();
                    for _ in 0..delta {
                        carried = expect(&carried);
                    }
                    for (r, c) in row.iter_mut().zip(carried) {
                        *r += c;
                    }
                }
            }
        }
        let mut v = Surface::zeros(steps);
        v.row_mut(steps).copy_from_slice(rew.row(steps));
        for n in (0..steps).rev() {
            let cont = expect(v.row(n + 1));
            let row = v.row_mut(n);
            for k in 0..=n {
                let x = rew.get(n, k);
                row[k] = if prefers_stop(x, cont[k]) { x.max(cont[k]) } else { cont[k] };
            }
        }
        for n in 1..=steps {
            let ok = v.row(n).windows(2).all(|w| match direction {
                Monotonicity::Increasing => w[1] >= w[0],
                Monotonicity::Decreasing => w[1] <= w[0],
            });
            if !ok {
                failures.push((j, n));
            }
        }
        values.push(v);
    }
    Ok(DriftShiftResult { p_up, values, monotonicity_failures: failures })
}

/// `sum_{i < d} X(N - i delta)` with `d = min(L, floor((N - t) / delta) + 1)`
/// (`d = L` when `delta = 0`): the value at step `t` of a deterministic
/// nondecreasing reward under a superlinear driver. `profile[n]` is `X(n)`.
pub fn closed_form_deterministic(profile: &[f64], delta: usize, rights: usize, t: usize) -> f64 {
    let n = profile.len() - 1;
    assert!(t <= n, "step {t} beyond the horizon {n}");
    let usable = if delta == 0 { rights } else { rights.min((n - t) / delta + 1) };
    (0..usable).map(|i| profile[n - i * delta]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use crate::lattice::Lattice;
    use crate::rewards::{evaluate_reward, RewardSpec};

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    fn enumeration_instance() -> PathTree {
        PathTree::from_fn(&grid(2), |s, p| match (s, p) {
            (0, _) => 0.0,
            (1, 1) => 2.0,
            (1, _) => 0.0,
            _ => 1.0,
        })
        .unwrap()
    }

    #[test]
    fn rule_counts() {
        let counts: Vec<u128> = (0..5).map(stopping_rule_count).collect();
        assert_eq!(counts, [1, 2, 5, 26, 677]);
        let mut memo = Vec::new();
        for h in 0..5 {
            assert_eq!(stopping_rules(h, &mut memo).len() as u128, stopping_rule_count(h));
        }
    }

    #[test]
    fn depth_two_instance() {
        let r = enumerate_multiple_stopping(&Driver::zero(), &enumeration_instance(), 1, 0).unwrap();
        assert_eq!(r.count, 5);
        assert_eq!(r.value, 1.5);
        assert_eq!(r.times_on(&[true, false]), &[1]);
        assert_eq!(r.times_on(&[false, false]), &[2]);
    }

    #[test]
    fn zero_reward() {
        let tree = PathTree::from_fn(&grid(3), |_, _| 0.0).unwrap();
        for rights in 1..=2 {
            let r = enumerate_multiple_stopping(&Driver::inf_kappa(0.5).unwrap(), &tree, rights, 1).unwrap();
            assert_eq!(r.value, 0.0);
        }
    }

    #[test]
    fn pair_counts_match_generation() {
        let tree = PathTree::from_fn(&grid(3), |s, p| (s + p) as f64).unwrap();
        for delta in 0..=3 {
            let r = enumerate_multiple_stopping(&Driver::zero(), &tree, 2, delta).unwrap();
            let mut memo = Vec::new();
            let first = stopping_rules(3, &mut memo).to_vec();
            assert_eq!(r.count, count_pairs(3, delta, &first));
        }
        // Two rights, no refraction, depth 1: (0, 0), (0, 1), (1, 1).
        let tree = PathTree::from_fn(&grid(1), |_, _| 1.0).unwrap();
        let r = enumerate_multiple_stopping(&Driver::zero(), &tree, 2, 0).unwrap();
        assert_eq!(r.count, 3);
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn capacity_limits() {
        let tree = enumeration_instance();
        assert!(matches!(enumerate_multiple_stopping(&Driver::zero(), &tree, 3, 0), Err(Error::Capacity(_))));
        assert!(matches!(PathTree::from_fn(&grid(6), |_, _| 0.0), Err(Error::Capacity(_))));
        let deep = PathTree::from_fn(&grid(5), |_, _| 1.0).unwrap();
        assert!(matches!(enumerate_multiple_stopping(&Driver::zero(), &deep, 2, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn tree_copies_recombining_surface() {
        let g = grid(3);
        let lat = Lattice::new(g, 1.0, 0.0, 0.4).unwrap();
        let x = evaluate_reward(&RewardSpec::call(1.0), &lat).unwrap();
        let tree = PathTree::from_surface(&x, &g).unwrap();
        assert_eq!(tree.node_count(), 15);
        assert_eq!(tree.payoff(2, 0b10), x.at(2, 1));
        assert_eq!(tree.payoff(3, 0b111), x.at(3, 3));
        assert_eq!(tree.payoff(4, 0), 0.0);
    }

    #[test]
    fn distorted_probability() {
        assert!((distorted_up_probability(0.5, 0.04) - 0.45).abs() < 1e-15);
        assert_eq!(distorted_up_probability(0.0, 0.04), 0.5);
    }

    #[test]
    fn drift_shift_matches_inf_kappa_engine() {
        let lat = Lattice::new(grid(64), 1.0, 0.05, 0.3).unwrap();
        let d = Driver::inf_kappa(0.5).unwrap();
        let cfg = MultiStopConfig::new(2, 8, lat.grid()).unwrap();
        for spec in [RewardSpec::call(1.0), RewardSpec::put(1.0)] {
            let x = evaluate_reward(&spec, &lat).unwrap();
            let shifted = drift_shift_value(&lat, &x, 0.5, &cfg).unwrap();
            assert!(shifted.monotonicity_failures.is_empty());
            let stack = Engine::new(&d, &lat).unwrap().solve_auxiliary(&x, &cfg).unwrap();
            for j in 1..=2 {
                assert!(stack.values(j).max_rel_diff(shifted.value(j)) <= 1e-13);
            }
        }
    }

    #[test]
    fn drift_shift_zero_kappa_is_classical() {
        let lat = Lattice::new(grid(16), 1.0, 0.05, 0.3).unwrap();
        let x = evaluate_reward(&RewardSpec::call(1.0), &lat).unwrap();
        let cfg = MultiStopConfig::new(1, 0, lat.grid()).unwrap();
        let shifted = drift_shift_value(&lat, &x, 0.0, &cfg).unwrap();
        assert_eq!(shifted.p_up, 0.5);
        let stack = Engine::new(&Driver::zero(), &lat).unwrap().solve_auxiliary(&x, &cfg).unwrap();
        assert!((stack.price() - shifted.price()).abs() <= 1e-14);
    }

    #[test]
    fn non_monotone_reward_is_rejected() {
        let lat = Lattice::new(grid(4), 1.0, 0.0, 0.3).unwrap();
        let x = RewardSurface::from_surface(Surface::from_fn(4, |n, k| if n == 2 && k == 1 { 1.0 } else { 0.0 })).unwrap();
        let cfg = MultiStopConfig::new(1, 0, lat.grid()).unwrap();
        assert!(matches!(drift_shift_value(&lat, &x, 0.5, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_deterministic(&[0.0, 1.0, 2.0], 2, 2, 0), 2.0);
        assert_eq!(closed_form_deterministic(&[0.0, 1.0, 2.0], 1, 1, 0), 2.0);
        assert_eq!(closed_form_deterministic(&[3.0; 9], 2, 4, 0), 12.0);
        assert_eq!(closed_form_deterministic(&[3.0; 9], 2, 4, 5), 6.0);
        assert_eq!(closed_form_deterministic(&[1.0, 2.0], 0, 3, 0), 6.0);
    }
}
