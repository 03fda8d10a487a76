//! The `verify` command: every invariant, structural check and oracle
//! comparison that applies to an instance.

use std::fmt::Write as _;

use super::{format_float, oracle_values, parse_config, prepare, CliError, Report, RunConfig};
use crate::driver::{verify_driver_properties, SampleGrid};
use crate::engine::{check_invariants, check_structural_properties, Engine, InvariantReport, StructuralOptions};
use crate::error::Error;
use crate::lattice::check_expectation_axioms;
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyLine {
    pub check: String,
    pub passed: bool,
    pub metric: f64,
}

impl VerifyLine {
    fn new(check: impl Into<String>, passed: bool, metric: f64) -> Self {
        VerifyLine { check: check.into(), passed, metric }
    }
}

pub(crate) fn report(lines: &[VerifyLine]) -> Report {
    let mut csv = String::from("check,passed,metric\n");
    let mut failures = Vec::new();
    for l in lines {
        writeln!(csv, "{},{},{}", l.check, l.passed, format_float(l.metric)).unwrap();
        if !l.passed {
            failures.push(format!("{} ({})", l.check, format_float(l.metric)));
        }
    }
    Report { csv, values_csv: None, failures }
}

const AXIOM_TRIALS: usize = 100;
const ENUMERATION_TOL: f64 = 1e-12;
const EXACT_TOL: f64 = 1e-13;

pub fn verify_config(cfg: &RunConfig, exec: Execution) -> Result<Vec<VerifyLine>, CliError> {
    let mut lines = Vec::new();
    match verify_driver_properties(&cfg.driver, &SampleGrid::default()) {
        Ok(r) => lines.push(VerifyLine::new("driver_properties", true, r.max_lipschitz_ratio)),
        Err(Error::Validation(m)) => {
            log::warn!("{m}");
            lines.push(VerifyLine::new("driver_properties", false, f64::NAN));
        }
        Err(e) => return Err(e.into()),
    }

    let s = prepare(cfg)?;
    let axioms = check_expectation_axioms(&cfg.driver, &s.lattice, AXIOM_TRIALS, cfg.seed)?;
    lines.push(VerifyLine::new("expectation_axioms", axioms.violations() == 0, axioms.violations() as f64));

    let multi = cfg.multi_stop()?;
    let engine = Engine::new(&cfg.driver, &s.lattice)?.with_execution(exec);
    let inv = check_invariants(&engine, &s.reward, &multi, cfg.verify_paths, cfg.seed)?;
    lines.push(VerifyLine::new("method_agreement", inv.method_agreement <= InvariantReport::AGREEMENT_TOL, inv.method_agreement));
    lines.push(VerifyLine::new("region_agreement", inv.region_mismatches == 0, inv.region_mismatches as f64));
    lines.push(VerifyLine::new("dominance_chain", inv.dominance <= InvariantReport::DOMINANCE_TOL, inv.dominance));
    if multi.delta_steps() >= 1 {
        lines.push(VerifyLine::new("terminal_condition", inv.terminal == 0.0, inv.terminal));
    }
    lines.push(VerifyLine::new(
        "stopped_martingale",
        inv.stopped_martingale <= InvariantReport::MARTINGALE_TOL,
        inv.stopped_martingale,
    ));
    lines.push(VerifyLine::new("separation", inv.separation_violations == 0, inv.separation_violations as f64));
    lines.push(VerifyLine::new("policy_value", inv.policy_value_gap <= InvariantReport::POLICY_TOL, inv.policy_value_gap));
    if inv.min_exercised < inv.sacrifice_bound {
        log::info!("fewest exercised rights {} is below L - floor(L/2) = {}", inv.min_exercised, inv.sacrifice_bound);
    }
    lines.push(VerifyLine::new("exercised_rights_diagnostic", true, inv.min_exercised as f64));

    let opts = StructuralOptions { paths: cfg.verify_paths, seed: cfg.seed };
    for out in check_structural_properties(&engine, &s.reward, &multi, &[], &opts)?.outcomes {
        let name = format!("structural_{:?}", out.check).to_lowercase();
        lines.push(VerifyLine::new(name, out.passed(), out.max_violation + out.path_violations as f64));
    }

    let values = oracle_values(cfg, &s, exec)?;
    let engine_value = values[1].1;
    for &(name, v) in &values[2..] {
        let tol = if name == "enumeration" { ENUMERATION_TOL } else { EXACT_TOL };
        let gap = (v - engine_value).abs() / (1.0 + engine_value.abs());
        lines.push(VerifyLine::new(format!("oracle_{name}"), gap <= tol, gap));
    }
    Ok(lines)
}

const BUNDLED: [(&str, &str); 7] = [
    (
        "call_inf_kappa",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 3\nrights.delta = 0.125\nmodel.b = 0.05\nmodel.sigma = 0.3\ndriver.kind = inf_kappa\ndriver.kappa = 0.5\n",
    ),
    (
        "put_inf_kappa",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 2\nrights.delta = 0.25\nmodel.sigma = 0.3\ndriver.kind = inf_kappa\ndriver.kappa = 0.5\npayoff.kind = put\n",
    ),
    (
        "put_sup_kappa",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 3\nrights.delta = 0.25\nmodel.sigma = 0.3\ndriver.kind = sup_kappa\ndriver.kappa = 0.5\npayoff.kind = put\n",
    ),
    (
        "call_sup_kappa_no_refraction",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 3\nrights.delta = 0\nmodel.sigma = 0.3\ndriver.kind = sup_kappa\ndriver.kappa = 0.5\n",
    ),
    (
        "call_smooth_inf",
        "horizon.T = 1\nlattice.steps = 64\nrights.L = 2\nrights.delta = 0.0625\nmodel.sigma = 0.3\ndriver.kind = smooth_inf\ndriver.kappa = 0.5\ndriver.epsilon = 0.05\nmode = continuous\n",
    ),
    (
        "tiny_enumeration",
        "horizon.T = 1\nlattice.steps = 4\nrights.L = 2\nrights.delta = 0.25\nmodel.sigma = 0.4\ndriver.kind = sup_kappa\ndriver.kappa = 0.5\n",
    ),
    (
        "constant_closed_form",
        "horizon.T = 1\nlattice.steps = 16\nrights.L = 3\nrights.delta = 0.375\ndriver.kind = inf_kappa\ndriver.kappa = 0.5\npayoff.kind = constant\npayoff.level = 2\n",
    ),
];

/// Runs [`verify_config`] on a fixed set of instances covering every driver
/// family, both payoff directions, zero refraction and the tiny-tree oracle.
pub fn bundled_suite(exec: Execution) -> Result<Vec<VerifyLine>, CliError> {
    let mut lines = Vec::new();
    for (name, text) in BUNDLED {
        let cfg = parse_config(text)?;
        for mut l in verify_config(&cfg, exec)? {
            l.check = format!("{name}/{}", l.check);
            lines.push(l);
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_suite_passes() {
        let lines = bundled_suite(Execution::Sequential).unwrap();
        let failed: Vec<_> = lines.iter().filter(|l| !l.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
        for check in ["oracle_enumeration", "oracle_drift_shift", "oracle_closed_form", "structural_deltazero"] {
            assert!(lines.iter().any(|l| l.check.ends_with(check)), "{check} never ran");
        }
    }
}
