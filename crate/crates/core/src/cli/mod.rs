//! Command dispatch and report emission for the `swingstop` binary.

pub mod config;
mod verify;

use std::fmt::Write as _;
use std::path::PathBuf;

pub use config::{parse_config, parse_config_in, Mode, RunConfig, REQUIRED_KEYS};
pub use verify::{bundled_suite, verify_config, VerifyLine};

use crate::driver::DriverKind;
use crate::engine::{convergence_study, extract_policy, ConvergenceBase, Engine, ValueStack};
use crate::error::Error;
use crate::hjb::{compare_pde_lattice, solve_obstacle_chain};
use crate::oracle::{closed_form_deterministic, drift_shift_value, enumerate_multiple_stopping, PathTree, MAX_TREE_DEPTH};
use crate::par::Execution;
use crate::rewards::{evaluate_reward, Monotonicity, RewardSurface};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Solver { .. } | Error::Coverage(_)) => EXIT_SOLVER,
            CliError::Core(_) | CliError::Io { .. } | CliError::Usage(_) => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Boundary,
    Converge,
    Oracle,
    Verify,
    PdeCompare,
}

/// Output of one command. A nonempty `failures` list means exit code 3.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub csv: String,
    /// Full PDE value grids, `pde-compare` only.
    pub values_csv: Option<String>,
    pub failures: Vec<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_ASSERTION
        }
    }
}

/// Seventeen significant digits, positional for moderate magnitudes.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    if !(-5..17).contains(&exp) {
        return sci;
    }
    if exp >= 0 {
        let split = exp as usize + 1;
        let frac = &digits[split..];
        format!("{sign}{}.{}", &digits[..split], if frac.is_empty() { "0" } else { frac })
    } else {
        format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
    }
}

/// Reads `SWINGSTOP_THREADS` (default 1) and sizes the global worker pool.
pub fn execution_from_env() -> Result<Execution, CliError> {
    let threads = match std::env::var("SWINGSTOP_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| CliError::Usage(format!("SWINGSTOP_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    if threads == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        // A pool that already exists (a second call in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        Ok(Execution::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        log::warn!("built without the parallel feature; ignoring SWINGSTOP_THREADS = {threads}");
        Ok(Execution::Sequential)
    }
}

pub(crate) struct Solved {
    pub lattice: crate::lattice::Lattice,
    pub reward: RewardSurface,
}

pub(crate) fn prepare(cfg: &RunConfig) -> Result<Solved, CliError> {
    let lattice = cfg.lattice()?;
    let reward = evaluate_reward(&cfg.reward, &lattice)?;
    Ok(Solved { lattice, reward })
}

fn solve(cfg: &RunConfig, s: &Solved, exec: Execution) -> Result<ValueStack, CliError> {
    let engine = Engine::new(&cfg.driver, &s.lattice)?.with_execution(exec);
    Ok(engine.solve_auxiliary(&s.reward, &cfg.multi_stop()?)?)
}

/// Runs `cmd`. Every command except `verify` needs a configuration.
pub fn run_command(cmd: Command, cfg: Option<&RunConfig>, exec: Execution) -> Result<Report, CliError> {
    let need = || cfg.ok_or_else(|| CliError::Usage("this command needs --config FILE".into()));
    match cmd {
        Command::Price => price(need()?, exec),
        Command::Boundary => boundary(need()?, exec),
        Command::Converge => converge(need()?, exec),
        Command::Oracle => oracle(need()?, exec),
        Command::Verify => match cfg {
            Some(cfg) => verify_config(cfg, exec),
            None => bundled_suite(exec),
        }
        .map(|lines| verify::report(&lines)),
        Command::PdeCompare => pde_compare(need()?, exec),
    }
}

fn price(cfg: &RunConfig, exec: Execution) -> Result<Report, CliError> {
    let s = prepare(cfg)?;
    let stack = solve(cfg, &s, exec)?;
    let mut csv = String::from("j,value_at_0\n");
    for (j, v) in stack.values_at_origin().iter().enumerate() {
        writeln!(csv, "{},{}", j + 1, format_float(*v)).unwrap();
    }
    Ok(Report { csv, ..Default::default() })
}

fn boundary(cfg: &RunConfig, exec: Execution) -> Result<Report, CliError> {
    let s = prepare(cfg)?;
    let stack = solve(cfg, &s, exec)?;
    let policy = extract_policy(&stack);
    let mut csv = String::from("j,step,time,state_at_lowest_stop_node\n");
    for j in 1..=cfg.rights {
        for n in 0..=cfg.steps {
            let state = policy.lowest_stop(j, n).map_or(f64::NAN, |k| s.lattice.state(n, k));
            writeln!(csv, "{j},{n},{},{}", format_float(s.lattice.time(n)), format_float(state)).unwrap();
        }
    }
    Ok(Report { csv, ..Default::default() })
}

fn converge(cfg: &RunConfig, exec: Execution) -> Result<Report, CliError> {
    let base = ConvergenceBase {
        driver: cfg.driver.clone(),
        x0: cfg.x0,
        drift: cfg.drift,
        sigma: cfg.sigma,
        horizon: cfg.horizon,
        reward: cfg.reward.clone(),
        rights: cfg.rights,
        delta: cfg.delta,
        execution: exec,
    };
    let rows = convergence_study(&base, cfg.converge_min, cfg.converge_max)?;
    let mut csv = String::from("n,steps,value,abs_diff_prev\n");
    for r in rows {
        let diff = r.abs_diff_prev.map_or_else(|| "NaN".to_string(), format_float);
        writeln!(csv, "{},{},{},{diff}", r.n, r.steps, format_float(r.value)).unwrap();
    }
    Ok(Report { csv, ..Default::default() })
}

/// Oracle values that apply to this configuration, by method name.
pub(crate) fn oracle_values(cfg: &RunConfig, s: &Solved, exec: Execution) -> Result<Vec<(&'static str, f64)>, CliError> {
    let multi = cfg.multi_stop()?;
    let engine = Engine::new(&cfg.driver, &s.lattice)?.with_execution(exec);
    let mut rows = vec![
        ("engine_direct", engine.solve_direct(&s.reward, &multi)?.price()),
        ("engine_auxiliary", engine.solve_auxiliary(&s.reward, &multi)?.price()),
    ];
    if cfg.steps <= MAX_TREE_DEPTH && cfg.rights <= 2 {
        let tree = PathTree::from_surface(&s.reward, s.lattice.grid())?;
        match enumerate_multiple_stopping(&cfg.driver, &tree, cfg.rights, cfg.delta_steps) {
            Ok(r) => rows.push(("enumeration", r.value)),
            Err(Error::Capacity(m)) => log::info!("enumeration skipped: {m}"),
            Err(e) => return Err(e.into()),
        }
    }
    let monotone = s.reward.is_monotone(Monotonicity::Increasing) || s.reward.is_monotone(Monotonicity::Decreasing);
    if matches!(cfg.driver.kind(), DriverKind::InfKappa) && monotone {
        let shifted = drift_shift_value(&s.lattice, &s.reward, cfg.driver.kappa(), &multi)?;
        if !shifted.monotonicity_failures.is_empty() {
            log::warn!("continuation values lose monotonicity at (right, step) {:?}", shifted.monotonicity_failures);
        }
        rows.push(("drift_shift", shifted.price()));
    }
    if cfg.driver.admits_superlinear_checks() {
        if let Some(profile) = s.reward.deterministic_profile().filter(|p| p.windows(2).all(|w| w[1] >= w[0])) {
            rows.push(("closed_form", closed_form_deterministic(&profile, cfg.delta_steps, cfg.rights, 0)));
        }
    }
    Ok(rows)
}

fn oracle(cfg: &RunConfig, exec: Execution) -> Result<Report, CliError> {
    let s = prepare(cfg)?;
    let mut csv = String::from("method,value\n");
    for (name, v) in oracle_values(cfg, &s, exec)? {
        writeln!(csv, "{name},{}", format_float(v)).unwrap();
    }
    Ok(Report { csv, ..Default::default() })
}

fn pde_compare(cfg: &RunConfig, exec: Execution) -> Result<Report, CliError> {
    if !matches!(cfg.driver.kind(), DriverKind::Zero | DriverKind::InfKappa) {
        return Err(Error::config(None, format!("pde-compare models kappa-ignorance; driver {} is not zero or inf_kappa", cfg.driver)).into());
    }
    if !cfg.reward.terminal_zero {
        return Err(Error::config(None, "pde-compare needs a zero terminal reward (mode = continuous)").into());
    }
    let s = prepare(cfg)?;
    let stack = solve(cfg, &s, exec)?;
    let grid = cfg.pde_grid()?;
    let chain = solve_obstacle_chain(&grid, &cfg.pde_model(), &cfg.reward, cfg.rights, cfg.delta, &cfg.pde_options())?;
    let gaps = compare_pde_lattice(&chain, &stack, cfg.x0, cfg.pde.tolerance);

    let mut report = Report { csv: String::from("i,pde,lattice,relative_gap\n"), ..Default::default() };
    for g in &gaps {
        writeln!(report.csv, "{},{},{},{}", g.level, format_float(g.pde), format_float(g.lattice), format_float(g.relative_gap))
            .unwrap();
        if g.flagged {
            report.failures.push(format!("level {}: relative gap {:e} above {:e}", g.level, g.relative_gap, cfg.pde.tolerance));
        }
    }
    let residual = chain.max_residual();
    if residual > 1e-6 {
        report.failures.push(format!("complementarity residual {residual:e} above 1e-6"));
    }
    let mut values = String::from("i,t,x,v\n");
    for (i, level) in chain.levels.iter().enumerate() {
        for (p, row) in level.value.iter().enumerate() {
            let t = format_float(grid.time(p));
            for (x, v) in grid.states().iter().zip(row) {
                writeln!(values, "{},{t},{},{}", i + 1, format_float(*x), format_float(*v)).unwrap();
            }
        }
    }
    report.values_csv = Some(values);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format() {
        assert_eq!(format_float(3.0), "3.0000000000000000");
        assert_eq!(format_float(-0.5), "-0.50000000000000000");
        assert_eq!(format_float(0.0), "0.0000000000000000");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_float(0.25e-4), "0.000025000000000000001");
        assert_eq!(format_float(f64::NAN), "NaN");
        for x in [0.1, 1.0 / 3.0, 12345.678901234567, 2.5e-3, 7e20, -1e-300] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x, "{x}");
        }
    }

    #[test]
    fn deterministic_price() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.txt"), "0 0 1\n1 0 2\n1 1 2\n2 0 0\n2 1 0\n2 2 0\n").unwrap();
        let text = "horizon.T = 1\nlattice.steps = 2\nrights.L = 2\nrights.delta = 0.5\npayoff.kind = table\npayoff.table_path = x.txt\n";
        let cfg = parse_config_in(text, dir.path()).unwrap();
        let rep = run_command(Command::Price, Some(&cfg), Execution::Sequential).unwrap();
        assert_eq!(rep.csv, "j,value_at_0\n1,2.0000000000000000\n2,3.0000000000000000\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(Error::config(None, "x")).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(Error::Solver { message: "x".into(), residual: 1.0 }).exit_code(), EXIT_SOLVER);
        assert_eq!(Report { failures: vec!["a".into()], ..Default::default() }.exit_code(), EXIT_ASSERTION);
    }
}
