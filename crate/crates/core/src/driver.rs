//! Generators `g(t, z)` of the backward equations that define the nonlinear
//! evaluation used throughout the crate.
//!
//! All drivers are deterministic in `(t, z)`, satisfy `g(t, 0) = 0`, and are
//! Lipschitz in `z` with constant `kappa`.

use std::fmt;

use crate::error::{Error, Result};

/// The built-in generator families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverKind {
    /// `g = 0`: the classical linear expectation.
    Zero,
    /// `g = a z`.
    Linear { a: f64 },
    /// `g = kappa |z|`: the sublinear evaluation dominating every driver
    /// with the same Lipschitz bound.
    SupKappa,
    /// `g = -kappa |z|`: kappa-ignorance, worst case over drifts in
    /// `[-kappa, kappa]`.
    InfKappa,
    /// `g = -kappa (sqrt(z^2 + eps^2) - eps)`: concave, not homogeneous.
    SmoothInf { epsilon: f64 },
}

/// Structural metadata. The engine uses these to decide which structural
/// checks apply, so `verify_driver_properties` cross-checks them by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DriverFlags {
    pub is_zero: bool,
    pub is_concave: bool,
    pub is_sublinear: bool,
    pub is_superlinear: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    id: String,
    kappa: f64,
    kind: DriverKind,
    flags: DriverFlags,
}

impl Driver {
    fn build(id: String, kappa: f64, kind: DriverKind, flags: DriverFlags) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::Domain(format!("kappa must be finite and nonnegative, got {kappa}")));
        }
        Driver { id, kappa, kind, flags }.checked_flags()
    }

    fn checked_flags(self) -> Result<Self> {
        if self.flags.is_sublinear && self.flags.is_superlinear {
            return Err(Error::Validation(format!(
                "driver {}: at most one of is_sublinear / is_superlinear may be set",
                self.id
            )));
        }
        Ok(self)
    }

    pub fn zero() -> Self {
        Driver {
            id: "zero".into(),
            kappa: 0.0,
            kind: DriverKind::Zero,
            flags: DriverFlags { is_zero: true, is_concave: true, ..Default::default() },
        }
    }

    /// `g = a z`, requiring `|a| <= kappa`.
    pub fn linear(a: f64, kappa: f64) -> Result<Self> {
        if !a.is_finite() || a.abs() > kappa {
            return Err(Error::Domain(format!("linear driver needs |a| <= kappa, got a={a}, kappa={kappa}")));
        }
        Self::build(
            format!("linear({a})"),
            kappa,
            DriverKind::Linear { a },
            DriverFlags { is_zero: a == 0.0, is_concave: true, ..Default::default() },
        )
    }

    pub fn sup_kappa(kappa: f64) -> Result<Self> {
        Self::build(
            format!("sup_kappa({kappa})"),
            kappa,
            DriverKind::SupKappa,
            DriverFlags { is_zero: kappa == 0.0, is_concave: kappa == 0.0, is_sublinear: true, is_superlinear: false },
        )
    }

    pub fn inf_kappa(kappa: f64) -> Result<Self> {
        Self::build(
            format!("inf_kappa({kappa})"),
            kappa,
            DriverKind::InfKappa,
            DriverFlags { is_zero: kappa == 0.0, is_concave: true, is_sublinear: false, is_superlinear: true },
        )
    }

    pub fn smooth_inf(kappa: f64, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Domain(format!("smooth_inf needs epsilon > 0, got {epsilon}")));
        }
        Self::build(
            format!("smooth_inf({kappa},{epsilon})"),
            kappa,
            DriverKind::SmoothInf { epsilon },
            DriverFlags { is_zero: kappa == 0.0, is_concave: true, ..Default::default() },
        )
    }

    /// Replaces the declared flags; used to declare custom metadata (and to
    /// exercise the flag validation).
    pub fn with_flags(mut self, flags: DriverFlags) -> Result<Self> {
        self.flags = flags;
        self.checked_flags()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn flags(&self) -> DriverFlags {
        self.flags
    }

    /// Linear drivers are both sublinear and superlinear; the flags can only
    /// carry one, so check selection asks here.
    pub fn admits_sublinear_checks(&self) -> bool {
        self.flags.is_sublinear || self.flags.is_zero || matches!(self.kind, DriverKind::Linear { .. })
    }

    pub fn admits_superlinear_checks(&self) -> bool {
        self.flags.is_superlinear || self.flags.is_zero || matches!(self.kind, DriverKind::Linear { .. })
    }

    /// Evaluates `g(t, z)`. Hot path; no validation.
    #[inline]
    pub fn g(&self, _t: f64, z: f64) -> f64 {
        match self.kind {
            DriverKind::Zero => 0.0,
            DriverKind::Linear { a } => a * z,
            DriverKind::SupKappa => self.kappa * z.abs(),
            DriverKind::InfKappa => -self.kappa * z.abs(),
            DriverKind::SmoothInf { epsilon } => -self.kappa * ((z * z + epsilon * epsilon).sqrt() - epsilon),
        }
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Validated evaluation of `g(t, z)`.
pub fn eval_driver(d: &Driver, t: f64, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("z must be finite, got {z}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("t must be a finite nonnegative time, got {t}")));
    }
    Ok(d.g(t, z))
}

/// Sampling grid for [`verify_driver_properties`].
///
/// Every `(t, z, z')` triple is visited in the listed order, so the first
/// witness reported for a failed flag is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    /// Convex weights in `(0, 1)` for the concavity test.
    pub lambdas: Vec<f64>,
    /// Positive factors for the homogeneity test.
    pub scales: Vec<f64>,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid {
            times: vec![0.0, 0.25, 0.5, 1.0],
            z: vec![0.0, 1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 3.7, -3.7, 10.0, -10.0, 0.013, -0.013],
            lambdas: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            scales: vec![0.1, 0.5, 2.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriverReport {
    pub max_lipschitz_ratio: f64,
    pub max_abs_at_zero: f64,
    pub concavity_violations: usize,
    pub subadditivity_violations: usize,
    pub superadditivity_violations: usize,
    pub homogeneity_violations: usize,
    pub samples: usize,
}

impl DriverReport {
    pub fn total_violations(&self) -> usize {
        self.concavity_violations
            + self.subadditivity_violations
            + self.superadditivity_violations
            + self.homogeneity_violations
    }
}

fn tol(values: &[f64]) -> f64 {
    1e-12 * (1.0 + values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Samples the generator on `grid`, counts violations of each structural
/// property and rejects flags contradicted by a sampled counterexample.
pub fn verify_driver_properties(d: &Driver, grid: &SampleGrid) -> Result<DriverReport> {
    let flags = d.flags();
    let mut report = DriverReport::default();
    let mut witness: Option<String> = None;
    let note = |w: &mut Option<String>, msg: String| {
        if w.is_none() {
            *w = Some(msg);
        }
    };

    for &t in &grid.times {
        let g0 = d.g(t, 0.0);
        report.max_abs_at_zero = report.max_abs_at_zero.max(g0.abs());
        if g0 != 0.0 {
            note(&mut witness, format!("g(t,0) = {g0} != 0 at t={t}"));
        }
        for &z in &grid.z {
            let gz = d.g(t, z);
            if flags.is_zero && gz != 0.0 {
                note(&mut witness, format!("declared zero but g(t={t}, z={z}) = {gz}"));
            }
            for &s in &grid.scales {
                let lhs = d.g(t, s * z);
                let rhs = s * gz;
                report.samples += 1;
                if (lhs - rhs).abs() > tol(&[lhs, rhs]) {
                    report.homogeneity_violations += 1;
                    if flags.is_sublinear || flags.is_superlinear {
                        note(&mut witness, format!("positive homogeneity fails at t={t}, z={z}, scale={s}"));
                    }
                }
            }
            for &zp in &grid.z {
                let gzp = d.g(t, zp);
                if z != zp {
                    let ratio = (gz - gzp).abs() / (z - zp).abs();
                    report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(ratio);
                    if ratio > d.kappa() * (1.0 + 1e-12) + 1e-15 {
                        note(&mut witness, format!("Lipschitz bound kappa={} exceeded at t={t}, z={z}, z'={zp}", d.kappa()));
                    }
                }
                let sum = d.g(t, z + zp);
                report.samples += 1;
                let eps = tol(&[sum, gz, gzp]);
                if sum > gz + gzp + eps {
                    report.subadditivity_violations += 1;
                    if flags.is_sublinear {
                        note(&mut witness, format!("declared sublinear but subadditivity fails at t={t}, z={z}, z'={zp}"));
                    }
                }
                if sum < gz + gzp - eps {
                    report.superadditivity_violations += 1;
                    if flags.is_superlinear {
                        note(&mut witness, format!("declared superlinear but superadditivity fails at t={t}, z={z}, z'={zp}"));
                    }
                }
                for &lam in &grid.lambdas {
                    let mix = d.g(t, lam * z + (1.0 - lam) * zp);
                    let chord = lam * gz + (1.0 - lam) * gzp;
                    report.samples += 1;
                    if mix < chord - tol(&[mix, chord]) {
                        report.concavity_violations += 1;
                        if flags.is_concave {
                            note(&mut witness, format!("declared concave but concavity fails at t={t}, z={z}, z'={zp}, lambda={lam}"));
                        }
                    }
                }
            }
        }
    }

    match witness {
        Some(w) => Err(Error::Validation(format!("driver {}: {w}", d.id()))),
        None => Ok(report),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    #[test]
    fn evaluates_builtin_definitions() {
        assert_eq!(eval_driver(&Driver::inf_kappa(0.5).unwrap(), 0.3, 2.5).unwrap(), -1.25);
        assert_eq!(eval_driver(&Driver::sup_kappa(0.5).unwrap(), 0.3, -3.0).unwrap(), 1.5);
        assert_eq!(eval_driver(&Driver::linear(0.2, 0.5).unwrap(), 0.0, 2.0).unwrap(), 0.4);
        let s = Driver::smooth_inf(1.0, 0.5).unwrap();
        assert!((s.g(0.0, 1.2) - -(1.3 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn every_builtin_vanishes_at_zero() {
        for d in builtins() {
            assert_eq!(eval_driver(&d, 0.7, 0.0).unwrap(), 0.0, "{d}");
        }
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let d = Driver::zero();
        assert!(matches!(eval_driver(&d, 0.0, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(eval_driver(&d, 0.0, f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(eval_driver(&d, -1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Driver::linear(0.8, 0.5).is_err());
        assert!(Driver::sup_kappa(-1.0).is_err());
        assert!(Driver::smooth_inf(0.5, 0.0).is_err());
        let both = DriverFlags { is_sublinear: true, is_superlinear: true, ..Default::default() };
        assert!(Driver::zero().with_flags(both).is_err());
    }

    #[test]
    fn inf_kappa_properties_on_grid() {
        let r = verify_driver_properties(&Driver::inf_kappa(0.5).unwrap(), &SampleGrid::default()).unwrap();
        assert!(r.max_lipschitz_ratio <= 0.5);
        assert_eq!(r.superadditivity_violations, 0);
        assert_eq!(r.concavity_violations, 0);
        assert_eq!(r.homogeneity_violations, 0);
        assert!(r.subadditivity_violations > 0);
    }

    #[test]
    fn zero_driver_has_no_violations() {
        let r = verify_driver_properties(&Driver::zero(), &SampleGrid::default()).unwrap();
        assert_eq!(r.total_violations(), 0);
        assert_eq!(r.max_lipschitz_ratio, 0.0);
        assert_eq!(r.max_abs_at_zero, 0.0);
    }

    #[test]
    fn smooth_inf_is_not_homogeneous_but_concave() {
        let r = verify_driver_properties(&Driver::smooth_inf(0.5, 0.1).unwrap(), &SampleGrid::default()).unwrap();
        assert!(r.homogeneity_violations > 0);
        assert_eq!(r.concavity_violations, 0);
        assert!(r.max_lipschitz_ratio <= 0.5);
    }

    #[test]
    fn contradicted_flag_names_witness() {
        let flags = DriverFlags { is_superlinear: true, ..Default::default() };
        let d = Driver::sup_kappa(1.0).unwrap().with_flags(flags).unwrap();
        let err = verify_driver_properties(&d, &SampleGrid::default()).unwrap_err();
        let Error::Validation(msg) = err else { panic!("wrong error kind") };
        assert!(msg.contains("z=1, z'=-1"), "{msg}");
    }

    #[test]
    fn false_concavity_flag_detected() {
        let flags = DriverFlags { is_concave: true, is_sublinear: true, ..Default::default() };
        let d = Driver::sup_kappa(0.3).unwrap().with_flags(flags).unwrap();
        assert!(verify_driver_properties(&d, &SampleGrid::default()).is_err());
    }

    pub(crate) fn builtins() -> Vec<Driver> {
        vec![
            Driver::zero(),
            Driver::linear(-0.3, 0.5).unwrap(),
            Driver::sup_kappa(0.5).unwrap(),
            Driver::inf_kappa(0.5).unwrap(),
            Driver::smooth_inf(0.5, 0.05).unwrap(),
        ]
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(10_000))]

            #[test]
            fn bounded_by_kappa_abs_z(t in 0.0..1.0f64, z in -50.0..50.0f64) {
                for d in builtins() {
                    let g = d.g(t, z);
                    let bound = d.kappa() * z.abs();
                    prop_assert!(g.abs() <= bound * (1.0 + 1e-15), "{} at z={}", d, z);
                    prop_assert!(g <= Driver::sup_kappa(d.kappa()).unwrap().g(t, z));
                }
            }
        }
    }
}
