//! Line-based `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::driver::Driver;
use crate::engine::MultiStopConfig;
use crate::error::{Error, Result};
use crate::hjb::{ObstacleVariant, PdeGrid, PdeModel, PdeOptions};
use crate::lattice::{Lattice, TimeGrid};
use crate::rewards::{NodeTable, RewardKind, RewardSpec};

pub const REQUIRED_KEYS: [&str; 3] = ["horizon.T", "rights.L", "rights.delta"];

const KNOWN_KEYS: [&str; 29] = [
    "horizon.T",
    "lattice.steps",
    "model.x0",
    "model.b",
    "model.sigma",
    "driver.kind",
    "driver.kappa",
    "driver.a",
    "driver.epsilon",
    "payoff.kind",
    "payoff.strike",
    "payoff.terminal_zero",
    "payoff.table_path",
    "payoff.level",
    "rights.L",
    "rights.delta",
    "mode",
    "output",
    "seed",
    "converge.n_min",
    "converge.n_max",
    "verify.paths",
    "pde.xmin",
    "pde.xmax",
    "pde.space_nodes",
    "pde.time_steps",
    "pde.quadrature_order",
    "pde.obstacle_variant",
    "pde.tolerance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Terminal reward kept as is.
    Discrete,
    /// Terminal reward forced to zero unless `payoff.terminal_zero` says
    /// otherwise.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub space_nodes: usize,
    pub time_steps: usize,
    pub quadrature_order: usize,
    pub variant: ObstacleVariant,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: f64,
    pub steps: usize,
    pub x0: f64,
    pub drift: f64,
    pub sigma: f64,
    pub driver: Driver,
    pub reward: RewardSpec,
    pub rights: usize,
    pub delta: f64,
    pub delta_steps: usize,
    pub mode: Mode,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub converge_min: u32,
    pub converge_max: u32,
    pub verify_paths: usize,
    pub pde: PdeSettings,
    /// Keys that were not given, with the value used.
    pub defaults: Vec<(String, String)>,
}

impl RunConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.grid()?, self.x0, self.drift, self.sigma)
    }

    pub fn multi_stop(&self) -> Result<MultiStopConfig> {
        MultiStopConfig::new(self.rights, self.delta_steps, &self.grid()?)
    }

    pub fn pde_grid(&self) -> Result<PdeGrid> {
        let p = &self.pde;
        PdeGrid::new(p.x_min, p.x_max, p.space_nodes, p.time_steps, self.horizon, self.x0)
    }

    pub fn pde_model(&self) -> PdeModel {
        PdeModel { x0: self.x0, drift: self.drift, sigma: self.sigma, kappa: self.driver.kappa() }
    }

    pub fn pde_options(&self) -> PdeOptions {
        PdeOptions { quadrature_order: self.pde.quadrature_order, variant: self.pde.variant, ..PdeOptions::default() }
    }
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
    defaults: Vec<(String, String)>,
}

impl Entries {
    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|(l, _)| *l)
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: std::fmt::Display,
    {
        match self.values.get(key) {
            Some((line, v)) => v
                .parse()
                .map_err(|_| Error::config(Some(*line), format!("cannot parse {key} = {v:?}"))),
            None => {
                self.defaults.push((key.to_string(), default.to_string()));
                Ok(default)
            }
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.values.get(key).expect("presence checked");
        v.parse().map_err(|_| Error::config(Some(*line), format!("cannot parse {key} = {v:?}")))
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.get(key, default)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(self.line(key), format!("{key} must be positive, got {v}")));
        }
        Ok(v)
    }
}

/// Parses and validates a configuration. Relative table paths resolve
/// against `base_dir`.
pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line), format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(Some(line), format!("unknown key {key:?}")));
        }
        if value.is_empty() {
            return Err(Error::config(Some(line), format!("missing value for {key}")));
        }
        if let Some((first, _)) = values.insert(key.to_string(), (line, value.to_string())) {
            return Err(Error::config(Some(line), format!("duplicate key {key} (first set at line {first})")));
        }
    }
    let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !values.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::config(None, format!("missing required keys: {}", missing.join(", "))));
    }
    let mut e = Entries { values, defaults: Vec::new() };

    let horizon: f64 = e.required("horizon.T")?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::config(e.line("horizon.T"), format!("horizon.T must be positive, got {horizon}")));
    }
    let steps: usize = e.get("lattice.steps", 256)?;
    if steps == 0 {
        return Err(Error::config(e.line("lattice.steps"), "lattice.steps must be at least 1"));
    }
    let x0 = e.positive("model.x0", 1.0)?;
    let drift: f64 = e.get("model.b", 0.0)?;
    let sigma = e.positive("model.sigma", 0.2)?;

    let kind: String = e.get("driver.kind", "zero".to_string())?;
    let kind_line = e.line("driver.kind");
    let driver = match kind.as_str() {
        "zero" => Driver::zero(),
        "linear" => {
            let a: f64 = e.get("driver.a", 0.0)?;
            let kappa = e.get("driver.kappa", a.abs())?;
            Driver::linear(a, kappa).map_err(|err| Error::config(e.line("driver.a").or(kind_line), err.to_string()))?
        }
        "sup_kappa" | "inf_kappa" | "smooth_inf" => {
            let kappa: f64 = e.get("driver.kappa", 0.0)?;
            let built = match kind.as_str() {
                "sup_kappa" => Driver::sup_kappa(kappa),
                "inf_kappa" => Driver::inf_kappa(kappa),
                _ => {
                    let eps = e.get("driver.epsilon", 0.01)?;
                    Driver::smooth_inf(kappa, eps)
                }
            };
            built.map_err(|err| Error::config(e.line("driver.kappa").or(kind_line), err.to_string()))?
        }
        other => return Err(Error::config(kind_line, format!("unknown driver.kind {other:?}"))),
    };

    let mode_name: String = e.get("mode", "discrete".to_string())?;
    let mode = match mode_name.as_str() {
        "discrete" => Mode::Discrete,
        "continuous" => Mode::Continuous,
        other => return Err(Error::config(e.line("mode"), format!("mode must be discrete or continuous, got {other:?}"))),
    };
    let payoff_kind: String = e.get("payoff.kind", "call".to_string())?;
    let kind = match payoff_kind.as_str() {
        "call" => RewardKind::Call { strike: e.get("payoff.strike", 1.0)? },
        "put" => RewardKind::Put { strike: e.get("payoff.strike", 1.0)? },
        "linear" => RewardKind::Linear,
        "constant" => RewardKind::Constant(e.get("payoff.level", 1.0)?),
        "table" => {
            let (line, rel) = e
                .raw("payoff.table_path")
                .cloned()
                .ok_or_else(|| Error::config(e.line("payoff.kind"), "payoff.kind = table needs payoff.table_path"))?;
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|err| Error::config(Some(line), format!("cannot read {}: {err}", path.display())))?;
            RewardKind::Table(NodeTable::parse(&text).map_err(|err| match err {
                Error::Config { line: tl, message } => Error::config(
                    Some(line),
                    format!("{}{}: {message}", path.display(), tl.map(|l| format!(":{l}")).unwrap_or_default()),
                ),
                other => Error::config(Some(line), other.to_string()),
            })?)
        }
        other => return Err(Error::config(e.line("payoff.kind"), format!("unknown payoff.kind {other:?}"))),
    };
    let terminal_zero = e.get("payoff.terminal_zero", mode == Mode::Continuous)?;
    let reward = RewardSpec::new(kind).terminal_zero(terminal_zero);

    let rights: usize = e.required("rights.L")?;
    let rights_line = e.line("rights.L");
    if rights == 0 {
        return Err(Error::config(rights_line, "rights.L must be at least 1"));
    }
    let delta: f64 = e.required("rights.delta")?;
    let delta_line = e.line("rights.delta");
    let grid = TimeGrid::new(horizon, steps).map_err(|err| Error::config(e.line("lattice.steps"), err.to_string()))?;
    let multi = MultiStopConfig::from_calendar(rights, delta, &grid).map_err(|err| Error::config(delta_line, err.to_string()))?;
    let ratio = driver.kappa() * grid.dt().sqrt();
    if ratio >= 1.0 {
        return Err(Error::config(
            e.line("lattice.steps").or(e.line("driver.kappa")),
            format!("kappa * sqrt(T / N) = {ratio} must be < 1"),
        ));
    }

    let output = e.raw("output").map(|(_, v)| PathBuf::from(v));
    let seed = e.get("seed", 0u64)?;
    let converge_min = e.get("converge.n_min", 4u32)?;
    let converge_max = e.get("converge.n_max", 9u32)?;
    if converge_min > converge_max {
        return Err(Error::config(e.line("converge.n_min"), "converge.n_min exceeds converge.n_max"));
    }
    let verify_paths = e.get("verify.paths", 1000usize)?;

    let x_min = e.positive("pde.xmin", x0 / 5.0)?;
    let x_max = e.positive("pde.xmax", x0 * 5.0)?;
    let space_nodes = e.get("pde.space_nodes", 200usize)?;
    let time_steps = e.get("pde.time_steps", 200usize)?;
    let quadrature_order = e.get("pde.quadrature_order", 32usize)?;
    let variant_name: String = e.get("pde.obstacle_variant", "direct".to_string())?;
    let variant = match variant_name.as_str() {
        "direct" => ObstacleVariant::Direct,
        "scaled" => ObstacleVariant::Scaled,
        other => {
            return Err(Error::config(
                e.line("pde.obstacle_variant"),
                format!("pde.obstacle_variant must be direct or scaled, got {other:?}"),
            ))
        }
    };
    let tolerance = e.positive("pde.tolerance", 2e-2)?;

    Ok(RunConfig {
        horizon,
        steps,
        x0,
        drift,
        sigma,
        driver,
        reward,
        rights,
        delta,
        delta_steps: multi.delta_steps(),
        mode,
        output,
        seed,
        converge_min,
        converge_max,
        verify_paths,
        pde: PdeSettings { x_min, x_max, space_nodes, time_steps, quadrature_order, variant, tolerance },
        defaults: e.defaults,
    })
}

/// [`parse_config_in`] relative to the current directory.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_in(text, Path::new("."))
}
