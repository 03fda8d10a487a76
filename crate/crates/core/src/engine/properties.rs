//! Invariant and structural checks run against solved stacks.

use super::policy::single_right_times;
use super::{compose_stopping_times, evaluate_policy, extract_policy, random_paths, Engine, MultiStopConfig};
use crate::error::{Error, Result};
use crate::lattice::Surface;
use crate::oracle::closed_form_deterministic;
use crate::rewards::RewardSurface;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Outcome of the general invariants every solve must satisfy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvariantReport {
    /// Max relative node gap between the direct and auxiliary solvers.
    pub method_agreement: f64,
    /// Nodes where the two policy characterizations disagree.
    pub region_mismatches: usize,
    /// Largest violation of the dominance chain.
    pub dominance: f64,
    /// Max `|V_j(N) - X(N)|`; only meaningful for a positive refraction period.
    pub terminal: f64,
    /// Max relative gap between `V_j` and its value stopped on the region
    /// boundary.
    pub stopped_martingale: f64,
    pub separation_violations: usize,
    /// Relative gap between the evaluated nested policy and `V_L(0)`.
    pub policy_value_gap: f64,
    pub paths: usize,
    /// Diagnostic only: smallest count of exercised rights over the paths.
    pub min_exercised: usize,
    pub sacrifice_bound: usize,
}

impl InvariantReport {
    pub const AGREEMENT_TOL: f64 = 1e-12;
    pub const DOMINANCE_TOL: f64 = 1e-12;
    pub const MARTINGALE_TOL: f64 = 1e-10;
    pub const POLICY_TOL: f64 = 1e-10;

    /// Names and magnitudes of every failed invariant.
    pub fn failures(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if self.method_agreement > Self::AGREEMENT_TOL {
            out.push(("method_agreement", self.method_agreement));
        }
        if self.region_mismatches > 0 {
            out.push(("region_agreement", self.region_mismatches as f64));
        }
        if self.dominance > Self::DOMINANCE_TOL {
            out.push(("dominance_chain", self.dominance));
        }
        if self.terminal > 0.0 {
            out.push(("terminal_condition", self.terminal));
        }
        if self.stopped_martingale > Self::MARTINGALE_TOL {
            out.push(("stopped_martingale", self.stopped_martingale));
        }
        if self.separation_violations > 0 {
            out.push(("separation", self.separation_violations as f64));
        }
        if self.policy_value_gap > Self::POLICY_TOL {
            out.push(("policy_value", self.policy_value_gap));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Solves with both methods and checks agreement, dominance, the terminal
/// condition, the stopped-martingale property, separation of composed times
/// on `paths` seeded paths and the value of the nested policy.
pub fn check_invariants(
    engine: &Engine<'_>,
    reward: &RewardSurface,
    cfg: &MultiStopConfig,
    paths: usize,
    seed: u64,
) -> Result<InvariantReport> {
    let direct = engine.solve_direct(reward, cfg)?;
    let aux = engine.solve_auxiliary(reward, cfg)?;
    let steps = aux.steps();
    let rights = cfg.rights();
    let mut rep = InvariantReport { paths, sacrifice_bound: rights - rights / 2, ..Default::default() };

    for j in 1..=rights {
        rep.method_agreement = rep.method_agreement.max(direct.values(j).max_rel_diff(aux.values(j)));
    }
    let (pd, pa) = (extract_policy(&direct), extract_policy(&aux));
    for j in 1..=rights {
        rep.region_mismatches +=
            pd.region(j).iter().zip(pa.region(j).iter()).filter(|((_, _, a), (_, _, b))| a != b).count();
    }

    let ge = engine.expectation();
    for j in 1..=rights {
        let (v, x, c) = (aux.values(j), aux.rewards(j), aux.continuation(j));
        for (n, k, &vv) in v.iter() {
            let tol = |a: f64| DOMINANCE_SCALE * (1.0 + a.abs());
            let xv = x.get(n, k);
            let mut worst = (xv - vv - tol(xv)).max(c.get(n, k) - vv - tol(vv));
            if j > 1 {
                let (vp, xp) = (aux.values(j - 1).get(n, k), aux.rewards(j - 1).get(n, k));
                worst = worst.max(vp - vv - tol(vp)).max(xp - xv - tol(xp));
            }
            rep.dominance = rep.dominance.max(worst.max(0.0));
        }
        if cfg.delta_steps() >= 1 {
            for k in 0..=steps {
                rep.terminal = rep.terminal.max((v.get(steps, k) - reward.at(steps, k)).abs());
            }
        }

        // V_j stopped on its region boundary.
        let mut stopped = x.row(steps).to_vec();
        let mut buf = vec![0.0; steps];
        for n in (0..steps).rev() {
            buf.truncate(n + 1);
            ge.rollback_into(n, &stopped, &mut buf);
            for k in 0..=n {
                if pa.is_stop(j, n, k) {
                    buf[k] = x.get(n, k);
                }
            }
            for k in 0..=n {
                rep.stopped_martingale = rep.stopped_martingale.max(rel(buf[k], v.get(n, k)));
            }
            std::mem::swap(&mut stopped, &mut buf);
        }
    }

    rep.min_exercised = rights;
    for path in random_paths(paths, steps, seed) {
        let tau = compose_stopping_times(&pa, &path, cfg)?;
        if tau.min_separation().is_some_and(|s| s < cfg.delta_steps()) {
            rep.separation_violations += 1;
        }
        rep.min_exercised = rep.min_exercised.min(tau.exercised());
    }

    let policy_value = evaluate_policy(engine.driver(), engine.lattice(), reward, &pa, cfg)?;
    rep.policy_value_gap = rel(policy_value, aux.price());
    Ok(rep)
}

// Dominance slack is relative to the magnitude of the compared values.
const DOMINANCE_SCALE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralCheck {
    /// Sublinear drivers: `Y^(i) <= Y^(1) + E[Y^(i-1)(. + delta)]` and
    /// `tau_i <= zeta_i` along paths.
    SublinearBound,
    /// Sublinear drivers with zero refraction: `Z_L = L V` and all composed
    /// times coincide.
    DeltaZero,
    /// Superlinear drivers with a deterministic nondecreasing reward: the
    /// value is the sum of the rewards at `T, T - delta, ...`.
    SubmartingaleClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralOptions {
    pub paths: usize,
    pub seed: u64,
}

impl Default for StructuralOptions {
    fn default() -> Self {
        StructuralOptions { paths: 1000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: StructuralCheck,
    pub nodes_checked: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub paths_checked: usize,
    pub path_violations: usize,
}

impl CheckOutcome {
    fn new(check: StructuralCheck) -> Self {
        CheckOutcome { check, nodes_checked: 0, violations: 0, max_violation: 0.0, paths_checked: 0, path_violations: 0 }
    }

    fn record(&mut self, excess: f64) {
        self.nodes_checked += 1;
        if excess > 0.0 {
            self.violations += 1;
            self.max_violation = self.max_violation.max(excess);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.path_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructuralReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn get(&self, check: StructuralCheck) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.check == check)
    }
}

fn applicable(engine: &Engine<'_>, reward: &RewardSurface, cfg: &MultiStopConfig, check: StructuralCheck) -> bool {
    let d = engine.driver();
    match check {
        StructuralCheck::SublinearBound => d.admits_sublinear_checks(),
        StructuralCheck::DeltaZero => d.admits_sublinear_checks() && cfg.delta_steps() == 0,
        StructuralCheck::SubmartingaleClosedForm => {
            d.admits_superlinear_checks()
                && reward.deterministic_profile().is_some_and(|p| p.windows(2).all(|w| w[1] >= w[0]))
        }
    }
}

/// Runs the requested structural checks, or every applicable one when
/// `requested` is empty. Requesting a check whose driver or reward
/// conditions do not hold is a configuration error.
pub fn check_structural_properties(
    engine: &Engine<'_>,
    reward: &RewardSurface,
    cfg: &MultiStopConfig,
    requested: &[StructuralCheck],
    opts: &StructuralOptions,
) -> Result<StructuralReport> {
    let all = [StructuralCheck::SublinearBound, StructuralCheck::DeltaZero, StructuralCheck::SubmartingaleClosedForm];
    let checks: Vec<StructuralCheck> = if requested.is_empty() {
        all.into_iter().filter(|&c| applicable(engine, reward, cfg, c)).collect()
    } else {
        for &c in requested {
            if !applicable(engine, reward, cfg, c) {
                return Err(Error::config(
                    None,
                    format!("{c:?} does not apply to driver {} with this reward and refraction period", engine.driver()),
                ));
            }
        }
        requested.to_vec()
    };

    let stack = engine.solve_auxiliary(reward, cfg)?;
    let policy = extract_policy(&stack);
    let steps = stack.steps();
    let (rights, delta) = (cfg.rights(), cfg.delta_steps());
    let paths = random_paths(opts.paths, steps, opts.seed);
    let mut report = StructuralReport::default();

    for check in checks {
        let mut out = CheckOutcome::new(check);
        match check {
            StructuralCheck::SublinearBound => {
                let y1 = stack.values(1);
                for i in 2..=rights {
                    let prev: &Surface = stack.values(i - 1);
                    for n in 0..=steps {
                        let carried =
                            if n + delta <= steps { Some(engine.shifted_expectation(prev, n, delta)) } else { None };
                        for k in 0..=n {
                            let rhs = y1.get(n, k) + carried.as_ref().map_or(0.0, |c| c[k]);
                            let lhs = stack.values(i).get(n, k);
                            out.record(lhs - rhs - 1e-12 * (1.0 + rhs.abs()));
                        }
                    }
                }
                for path in &paths {
                    let tau = compose_stopping_times(&policy, path, cfg)?;
                    let zeta = single_right_times(&policy, path, &tau, delta);
                    out.paths_checked += 1;
                    if tau.times.iter().zip(&zeta).any(|(t, z)| t > z) {
                        out.path_violations += 1;
                    }
                }
            }
            StructuralCheck::DeltaZero => {
                let (v, z) = (stack.values(1), stack.values(rights));
                for (n, k, &zl) in z.iter() {
                    let target = rights as f64 * v.get(n, k);
                    out.record((zl - target).abs() - 1e-12 * (1.0 + target.abs()));
                }
                for path in &paths {
                    let tau = compose_stopping_times(&policy, path, cfg)?;
                    out.paths_checked += 1;
                    if tau.times.iter().any(|&t| t != tau.times[0]) {
                        out.path_violations += 1;
                    }
                }
            }
            StructuralCheck::SubmartingaleClosedForm => {
                let profile = reward.deterministic_profile().expect("checked by applicability");
                let z = stack.values(rights);
                for (n, k, &zl) in z.iter() {
                    let closed = closed_form_deterministic(&profile, delta, rights, n);
                    out.record((zl - closed).abs() - 1e-13 * (1.0 + closed.abs()));
                    let _ = k;
                }
            }
        }
        report.outcomes.push(out);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::Driver;
    use crate::lattice::{Lattice, TimeGrid};
    use crate::rewards::{evaluate_reward, RewardSpec};

    fn lat(steps: usize) -> Lattice {
        Lattice::new(TimeGrid::new(1.0, steps).unwrap(), 1.0, 0.03, 0.3).unwrap()
    }

    #[test]
    fn invariants_hold_on_call_instance() {
        let l = lat(64);
        let x = evaluate_reward(&RewardSpec::call(1.0), &l).unwrap();
        let cfg = MultiStopConfig::new(3, 5, l.grid()).unwrap();
        for d in [Driver::zero(), Driver::inf_kappa(0.5).unwrap(), Driver::smooth_inf(0.5, 0.05).unwrap()] {
            let e = Engine::new(&d, &l).unwrap();
            let rep = check_invariants(&e, &x, &cfg, 200, 1).unwrap();
            assert!(rep.passed(), "{d}: {:?}", rep.failures());
        }
    }

    #[test]
    fn wrong_flags_are_a_configuration_error() {
        let l = lat(8);
        let x = evaluate_reward(&RewardSpec::call(1.0), &l).unwrap();
        let cfg = MultiStopConfig::new(2, 1, l.grid()).unwrap();
        let d = Driver::inf_kappa(0.5).unwrap();
        let e = Engine::new(&d, &l).unwrap();
        let err = check_structural_properties(&e, &x, &cfg, &[StructuralCheck::SublinearBound], &Default::default());
        assert!(matches!(err, Err(Error::Config { .. })));
        let err = check_structural_properties(&e, &x, &cfg, &[StructuralCheck::SubmartingaleClosedForm], &Default::default());
        assert!(matches!(err, Err(Error::Config { .. })));
    }

    #[test]
    fn closed_form_for_increasing_profile() {
        let l = lat(2);
        let x = RewardSurface::deterministic(&[0.0, 1.0, 2.0]).unwrap();
        let cfg = MultiStopConfig::new(2, 2, l.grid()).unwrap();
        let d = Driver::inf_kappa(0.5).unwrap();
        let e = Engine::new(&d, &l).unwrap();
        let rep = check_structural_properties(&e, &x, &cfg, &[], &Default::default()).unwrap();
        let out = rep.get(StructuralCheck::SubmartingaleClosedForm).unwrap();
        assert!(out.passed());
        assert_eq!(out.nodes_checked, 6);
        assert!(rep.get(StructuralCheck::SublinearBound).is_none());
    }
}
