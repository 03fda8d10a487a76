use super::{prefers_stop, Method, MultiStopConfig, ValueStack};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::lattice::{GExpectation, Lattice, Surface, Triangle};
use crate::par::Execution;
use crate::rewards::RewardSurface;

/// Single-stopping value surface with its continuation values and stop
/// region.
#[derive(Debug, Clone, PartialEq)]
pub struct SnellEnvelope {
    pub values: Surface,
    pub continuation: Surface,
    pub region: Triangle<bool>,
}

/// Solver bound to a driver and lattice.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    ge: GExpectation<'a>,
}

impl<'a> Engine<'a> {
    pub fn new(driver: &'a Driver, lattice: &'a Lattice) -> Result<Self> {
        Ok(Engine { ge: GExpectation::new(driver, lattice)? })
    }

    pub fn with_execution(self, exec: Execution) -> Self {
        Engine { ge: self.ge.with_execution(exec) }
    }

    pub fn expectation(&self) -> &GExpectation<'a> {
        &self.ge
    }

    pub fn lattice(&self) -> &'a Lattice {
        self.ge.lattice()
    }

    pub fn driver(&self) -> &'a Driver {
        self.ge.driver()
    }

    fn check_inputs(&self, reward: &RewardSurface, cfg: &MultiStopConfig) -> Result<()> {
        let steps = self.lattice().steps();
        if reward.steps() != steps {
            return Err(Error::Shape(format!("reward has {} steps, lattice has {steps}", reward.steps())));
        }
        cfg.check_fits(steps)
    }

    /// `E_n[V(n + delta)]` for `n + delta <= N`, taken from the row of `V` at
    /// step `n + delta`.
    pub(crate) fn shifted_expectation(&self, v: &Surface, n: usize, delta: usize) -> Vec<f64> {
        let from = n + delta;
        if delta == 0 {
            return v.row(from).to_vec();
        }
        self.ge.rollback_span(from, v.row(from), delta)
    }

    /// Snell envelope of `reward`: `V(N) = W(N)`,
    /// `V(n) = max{W(n), E_n[V(n + 1)]}`.
    pub fn snell(&self, reward: &Surface) -> Result<SnellEnvelope> {
        let steps = self.lattice().steps();
        if reward.steps() != steps {
            return Err(Error::Shape(format!("reward has {} steps, lattice has {steps}", reward.steps())));
        }
        let mut values = Surface::zeros(steps);
        let mut continuation = Surface::zeros(steps);
        let mut region = Triangle::filled(steps, true);
        values.row_mut(steps).copy_from_slice(reward.row(steps));
        let mut cont = vec![0.0; steps];
        for n in (0..steps).rev() {
            cont.truncate(n + 1);
            self.ge.rollback_into(n, values.row(n + 1), &mut cont);
            let w = reward.row(n);
            let (vrow, rrow) = (values.row_mut(n), region.row_mut(n));
            for k in 0..=n {
                vrow[k] = w[k].max(cont[k]);
                rrow[k] = prefers_stop(w[k], cont[k]);
            }
            continuation.row_mut(n).copy_from_slice(&cont);
        }
        Ok(SnellEnvelope { values, continuation, region })
    }

    /// Joint backward recursion over time, all rights at each step.
    pub fn solve_direct(&self, reward: &RewardSurface, cfg: &MultiStopConfig) -> Result<ValueStack> {
        self.check_inputs(reward, cfg)?;
        let steps = self.lattice().steps();
        let (rights, delta) = (cfg.rights(), cfg.delta_steps());
        let mut values = vec![Surface::zeros(steps); rights];
        let mut rewards = vec![Surface::zeros(steps); rights];
        let mut continuation = vec![Surface::zeros(steps); rights];
        let mut regions = vec![Triangle::filled(steps, true); rights];
        let mut cont = vec![0.0; steps + 1];

        for n in (0..=steps).rev() {
            let x = reward.row(n);
            for j in 0..rights {
                cont.truncate(n + 1);
                if n == steps {
                    cont.fill(0.0);
                } else {
                    self.ge.rollback_into(n, values[j].row(n + 1), &mut cont);
                }
                // E_n[Z_{j-1}(n + delta)], with Z_0 = 0 and zero past the horizon.
                let carried = if j == 0 || n + delta > steps {
                    None
                } else {
                    Some(self.shifted_expectation(&values[j - 1], n, delta))
                };
                for k in 0..=n {
                    let immediate = x[k] + carried.as_ref().map_or(0.0, |c| c[k]);
                    rewards[j].set(n, k, immediate);
                    continuation[j].set(n, k, cont[k]);
                    values[j].set(n, k, immediate.max(cont[k]));
                    regions[j].set(n, k, prefers_stop(immediate, cont[k]));
                }
            }
        }
        Ok(ValueStack { method: Method::Direct, config: *cfg, values, rewards, continuation, regions })
    }

    /// One single-stopping problem per right on the `j`-exercise reward.
    pub fn solve_auxiliary(&self, reward: &RewardSurface, cfg: &MultiStopConfig) -> Result<ValueStack> {
        self.check_inputs(reward, cfg)?;
        let steps = self.lattice().steps();
        let (rights, delta) = (cfg.rights(), cfg.delta_steps());
        let mut values = Vec::with_capacity(rights);
        let mut rewards = Vec::with_capacity(rights);
        let mut continuation = Vec::with_capacity(rights);
        let mut regions = Vec::with_capacity(rights);
        // Each shifted expectation is an independent multi-step rollback, so
        // the outer loop over target steps carries the parallelism.
        let inner = Engine { ge: self.ge.with_execution(Execution::Sequential) };

        for j in 0..rights {
            let aux = if j == 0 {
                reward.surface().clone()
            } else {
                let prev: &Surface = &values[j - 1];
                let reach = (steps + 1).saturating_sub(delta);
                let carried = self.ge.execution().map(reach, |n| inner.shifted_expectation(prev, n, delta));
                Surface::from_fn(steps, |n, k| {
                    let c = carried.get(n).map_or(0.0, |row| row[k]);
                    reward.at(n, k) + c
                })
            };
            let env = self.snell(&aux)?;
            values.push(env.values);
            continuation.push(env.continuation);
            regions.push(env.region);
            rewards.push(aux);
        }
        Ok(ValueStack { method: Method::Auxiliary, config: *cfg, values, rewards, continuation, regions })
    }
}

pub fn solve_multiple_direct(
    d: &Driver,
    lat: &Lattice,
    reward: &RewardSurface,
    cfg: &MultiStopConfig,
) -> Result<ValueStack> {
    Engine::new(d, lat)?.solve_direct(reward, cfg)
}

pub fn solve_multiple_auxiliary(
    d: &Driver,
    lat: &Lattice,
    reward: &RewardSurface,
    cfg: &MultiStopConfig,
) -> Result<ValueStack> {
    Engine::new(d, lat)?.solve_auxiliary(reward, cfg)
}

/// Single-stopping value surface and stop region of `reward`.
pub fn snell_envelope(d: &Driver, lat: &Lattice, reward: &RewardSurface) -> Result<(Surface, Triangle<bool>)> {
    let env = Engine::new(d, lat)?.snell(reward.surface())?;
    Ok((env.values, env.region))
}
