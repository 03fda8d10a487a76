use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{prefers_stop, tie_tolerance, Method, MultiStopConfig, ValueStack};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::lattice::{GExpectation, Lattice, Triangle};
use crate::rewards::RewardSurface;

/// Earliest-stop regions `R_j`, `j = 1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRegions {
    regions: Vec<Triangle<bool>>,
}

impl PolicyRegions {
    pub fn new(regions: Vec<Triangle<bool>>) -> Self {
        PolicyRegions { regions }
    }

    pub fn rights(&self) -> usize {
        self.regions.len()
    }

    pub fn steps(&self) -> usize {
        self.regions[0].steps()
    }

    pub fn region(&self, j: usize) -> &Triangle<bool> {
        &self.regions[j - 1]
    }

    #[inline]
    pub fn is_stop(&self, j: usize, n: usize, k: usize) -> bool {
        self.regions[j - 1].get(n, k)
    }

    /// Lowest `k` of the stop region of right `j` at step `n`.
    pub fn lowest_stop(&self, j: usize, n: usize) -> Option<usize> {
        self.regions[j - 1].row(n).iter().position(|&s| s)
    }
}

/// Stop regions of a solved stack.
///
/// An auxiliary stack is read through `Y^(j) = X^(j)`; a direct stack through
/// `X(n) + E_n[Z_{j-1}(n + delta)] >= E_n[Z_j(n + 1)]`. Both use the same tie
/// band, so the two characterizations produce identical regions.
pub fn extract_policy(stack: &ValueStack) -> PolicyRegions {
    let steps = stack.steps();
    let regions = (1..=stack.rights())
        .map(|j| {
            let (v, x, c) = (stack.values(j), stack.rewards(j), stack.continuation(j));
            Triangle::from_fn(steps, |n, k| {
                let cont = c.get(n, k);
                match stack.method() {
                    Method::Auxiliary => v.get(n, k) - x.get(n, k) <= tie_tolerance(cont),
                    Method::Direct => prefers_stop(x.get(n, k), cont),
                }
            })
        })
        .collect();
    PolicyRegions { regions }
}

/// Lattice node reached after `n` moves along `path` (`true` = up).
#[inline]
pub fn path_node(path: &[bool], n: usize) -> usize {
    path[..n].iter().filter(|&&up| up).count()
}

/// Nested exercise times along one lattice path. Times beyond the horizon
/// mark rights left unexercised (reward 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingVector {
    pub times: Vec<usize>,
    pub horizon: usize,
}

impl StoppingVector {
    pub fn exercised(&self) -> usize {
        self.times.iter().filter(|&&t| t <= self.horizon).count()
    }

    pub fn min_separation(&self) -> Option<usize> {
        self.times.windows(2).map(|w| w[1] - w[0]).min()
    }

    /// `sum_l X(tau_l)` along the path.
    pub fn payoff(&self, reward: &RewardSurface, path: &[bool]) -> f64 {
        self.times
            .iter()
            .filter(|&&t| t <= self.horizon)
            .map(|&t| reward.at(t, path_node(path, t)))
            .sum()
    }
}

/// First step `>= start` where right `j` stops along `path`; `start` itself
/// when it lies beyond the horizon.
fn first_stop(policy: &PolicyRegions, j: usize, path: &[bool], start: usize) -> usize {
    let steps = policy.steps();
    if start > steps {
        return start;
    }
    let mut k = path_node(path, start);
    for n in start..=steps {
        if policy.is_stop(j, n, k) {
            return n;
        }
        if n < steps && path[n] {
            k += 1;
        }
    }
    unreachable!("every region stops at the horizon")
}

/// Walks `path`, taking the `d`-th time as the first entry into `R_{L-d+1}`
/// at or after the previous time plus the refraction period.
pub fn compose_stopping_times(policy: &PolicyRegions, path: &[bool], cfg: &MultiStopConfig) -> Result<StoppingVector> {
    let steps = policy.steps();
    if path.len() != steps {
        return Err(Error::Shape(format!("path has {} moves, lattice has {steps} steps", path.len())));
    }
    if policy.rights() != cfg.rights() {
        return Err(Error::Shape(format!("policy has {} rights, config has {}", policy.rights(), cfg.rights())));
    }
    let rights = cfg.rights();
    let mut times = Vec::with_capacity(rights);
    for d in 1..=rights {
        let start = if d == 1 { 0 } else { times[d - 2] + cfg.delta_steps() };
        times.push(first_stop(policy, rights - d + 1, path, start));
    }
    Ok(StoppingVector { times, horizon: steps })
}

/// Times `zeta_i`: first entry into the single-right region `R_1` at or after
/// `tau_{i-1} + delta`, with `tau` the composed vector.
pub(crate) fn single_right_times(policy: &PolicyRegions, path: &[bool], tau: &StoppingVector, delta: usize) -> Vec<usize> {
    (0..tau.times.len())
        .map(|i| {
            let start = if i == 0 { 0 } else { tau.times[i - 1] + delta };
            first_stop(policy, 1, path, start)
        })
        .collect()
}

/// Seeded fair-coin lattice paths.
pub fn random_paths(count: usize, steps: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..steps).map(|_| rng.gen::<bool>()).collect()).collect()
}

/// `E_0[sum_l X(tau_l)]` for the nested policy given by `policy`, by backward
/// induction on the lattice augmented with (rights left, steps until the
/// next exercise is allowed).
pub fn evaluate_policy(
    d: &Driver,
    lat: &Lattice,
    reward: &RewardSurface,
    policy: &PolicyRegions,
    cfg: &MultiStopConfig,
) -> Result<f64> {
    let ge = GExpectation::new(d, lat)?;
    let steps = lat.steps();
    if reward.steps() != steps || policy.steps() != steps {
        return Err(Error::Shape("reward, policy and lattice must share the step count".into()));
    }
    if policy.rights() != cfg.rights() {
        return Err(Error::Shape(format!("policy has {} rights, config has {}", policy.rights(), cfg.rights())));
    }
    let rights = cfg.rights();
    let delta = cfg.delta_steps();
    let waits = delta.max(1);
    let idx = |r: usize, w: usize| r * waits + w;

    // next[idx(r, w)]: row at step n + 1 for r rights left and w steps still
    // to wait; r = 0 is identically zero.
    let mut next: Vec<Vec<f64>> = vec![Vec::new(); (rights + 1) * waits];
    let mut cur: Vec<Vec<f64>> = vec![Vec::new(); (rights + 1) * waits];
    let roll = |n: usize, row: &Vec<f64>| -> Vec<f64> {
        if n == steps {
            vec![0.0; n + 1]
        } else {
            let mut out = vec![0.0; n + 1];
            ge.rollback_into(n, row, &mut out);
            out
        }
    };

    for n in (0..=steps).rev() {
        for w in 0..waits {
            cur[idx(0, w)] = vec![0.0; n + 1];
        }
        for r in 1..=rights {
            for w in (0..waits).rev() {
                let row = if w > 0 {
                    roll(n, &next[idx(r, w - 1)])
                } else {
                    let wait_cont = roll(n, &next[idx(r, 0)]);
                    let after = if delta == 0 {
                        cur[idx(r - 1, 0)].clone()
                    } else {
                        roll(n, &next[idx(r - 1, delta - 1)])
                    };
                    (0..=n)
                        .map(|k| if policy.is_stop(r, n, k) { reward.at(n, k) + after[k] } else { wait_cont[k] })
                        .collect()
                };
                cur[idx(r, w)] = row;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(next[idx(rights, 0)][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{solve_multiple_auxiliary, solve_multiple_direct};
    use crate::lattice::{Surface, TimeGrid};

    fn lat(steps: usize) -> Lattice {
        Lattice::new(TimeGrid::new(1.0, steps).unwrap(), 1.0, 0.0, 0.3).unwrap()
    }

    fn det(profile: &[f64]) -> RewardSurface {
        RewardSurface::deterministic(profile).unwrap()
    }

    #[test]
    fn deterministic_policy_and_times() {
        let l = lat(2);
        let x = det(&[1.0, 2.0, 0.0]);
        let cfg = MultiStopConfig::new(2, 1, l.grid()).unwrap();
        let d = Driver::inf_kappa(0.5).unwrap();
        let stack = solve_multiple_auxiliary(&d, &l, &x, &cfg).unwrap();
        let policy = extract_policy(&stack);
        // sigma*_1(0) = 1 since X(0) = 1 < 2.
        assert!(!policy.is_stop(1, 0, 0));
        assert!(policy.is_stop(1, 1, 0));
        for path in [[true, true], [true, false], [false, true], [false, false]] {
            let tau = compose_stopping_times(&policy, &path, &cfg).unwrap();
            assert_eq!(tau.times, vec![0, 1]);
            assert_eq!(tau.payoff(&x, &path), 3.0);
        }
        assert_eq!(evaluate_policy(&d, &l, &x, &policy, &cfg).unwrap(), 3.0);
    }

    #[test]
    fn terminal_step_always_stops() {
        let l = lat(5);
        let x = RewardSurface::from_surface(Surface::from_fn(5, |n, k| ((n + 2 * k) % 3) as f64)).unwrap();
        let cfg = MultiStopConfig::new(3, 1, l.grid()).unwrap();
        let stack = solve_multiple_auxiliary(&Driver::zero(), &l, &x, &cfg).unwrap();
        let policy = extract_policy(&stack);
        for j in 1..=3 {
            assert!(policy.region(j).row(5).iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_reward_times_are_spaced_by_delta() {
        let l = lat(10);
        let cfg = MultiStopConfig::new(4, 3, l.grid()).unwrap();
        let d = Driver::sup_kappa(0.5).unwrap();
        let stack = solve_multiple_auxiliary(&d, &l, &RewardSurface::zero(10), &cfg).unwrap();
        let policy = extract_policy(&stack);
        for path in random_paths(20, 10, 3) {
            let tau = compose_stopping_times(&policy, &path, &cfg).unwrap();
            assert_eq!(tau.times, vec![0, 3, 6, 9]);
        }
        assert_eq!(evaluate_policy(&d, &l, &RewardSurface::zero(10), &policy, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn unexercised_rights_sit_beyond_horizon() {
        let l = lat(4);
        // Only the last step pays: the earliest-optimal policy spends the first
        // right at once for nothing and keeps the second for the horizon.
        let x = det(&[0.0, 0.0, 0.0, 0.0, 5.0]);
        let cfg = MultiStopConfig::new(2, 2, l.grid()).unwrap();
        let stack = solve_multiple_direct(&Driver::zero(), &l, &x, &cfg).unwrap();
        let policy = extract_policy(&stack);
        let path = vec![true; 4];
        let tau = compose_stopping_times(&policy, &path, &cfg).unwrap();
        assert_eq!(tau.times, vec![0, 4]);
        assert_eq!(stack.price(), 5.0);
    }

    #[test]
    fn blocked_right_is_left_unexercised() {
        let l = lat(4);
        let x = det(&[0.0, 0.0, 5.0, 0.0, 0.0]);
        let cfg = MultiStopConfig::new(2, 3, l.grid()).unwrap();
        let d = Driver::zero();
        let stack = solve_multiple_auxiliary(&d, &l, &x, &cfg).unwrap();
        let policy = extract_policy(&stack);
        let path = vec![false, true, false, true];
        let tau = compose_stopping_times(&policy, &path, &cfg).unwrap();
        assert_eq!(tau.times, vec![2, 5]);
        assert_eq!(tau.exercised(), 1);
        assert_eq!(tau.payoff(&x, &path), 5.0);
        assert_eq!(evaluate_policy(&d, &l, &x, &policy, &cfg).unwrap(), 5.0);
    }

    #[test]
    fn path_length_is_checked() {
        let l = lat(3);
        let cfg = MultiStopConfig::new(1, 0, l.grid()).unwrap();
        let stack = solve_multiple_direct(&Driver::zero(), &l, &RewardSurface::zero(3), &cfg).unwrap();
        let policy = extract_policy(&stack);
        assert!(matches!(compose_stopping_times(&policy, &[true; 2], &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn random_paths_are_reproducible() {
        assert_eq!(random_paths(5, 17, 42), random_paths(5, 17, 42));
        assert_ne!(random_paths(5, 17, 42), random_paths(5, 17, 43));
    }
}
