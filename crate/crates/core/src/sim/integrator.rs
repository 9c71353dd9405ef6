use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derivative_into, ChainParams, ChainState, MotorCommand, PendulumState, StateRate};

pub const DEFAULT_DT: f64 = 1e-4;

/// Fixed-step classical Runge-Kutta settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT }
    }
}

impl IntegratorConfig {
    /// Number of physics steps per sampling period; errors unless `ts / dt` is an integer.
    pub fn substeps(&self, ts: f64) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.dt > ts * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds the sampling period {ts}",
                self.dt
            )));
        }
        let ratio = ts / self.dt;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling period {ts} is not an integer multiple of dt = {}",
                self.dt
            )));
        }
        Ok(m as usize)
    }
}

/// Motor angles and speeds as a function of time within one step.
pub trait Drive {
    fn command(&self, t: f64) -> MotorCommand;
}

impl Drive for MotorCommand {
    fn command(&self, _t: f64) -> MotorCommand {
        *self
    }
}

impl<F: Fn(f64) -> MotorCommand> Drive for F {
    fn command(&self, t: f64) -> MotorCommand {
        self(t)
    }
}

/// RK4 stepper with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<StateRate>; 4],
    stage: Vec<PendulumState>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        let z = vec![StateRate::default(); n];
        Self { k: [z.clone(), z.clone(), z.clone(), z], stage: vec![PendulumState::default(); n] }
    }

    /// Advances `cs` in place by `dt`, evaluating the drive at the stage times.
    pub fn advance(
        &mut self,
        params: &ChainParams,
        cs: &mut ChainState,
        drive: &impl Drive,
        dt: f64,
    ) -> Result<()> {
        let n = cs.states.len();
        if self.stage.len() != n {
            *self = Self::new(n);
        }
        let t0 = cs.time;
        let half = 0.5 * dt;
        let [k1, k2, k3, k4] = &mut self.k;

        derivative_into(params, &cs.states, &drive.command(t0), k1);
        fill_stage(&mut self.stage, &cs.states, k1, half);
        derivative_into(params, &self.stage, &drive.command(t0 + half), k2);
        fill_stage(&mut self.stage, &cs.states, k2, half);
        derivative_into(params, &self.stage, &drive.command(t0 + half), k3);
        fill_stage(&mut self.stage, &cs.states, k3, dt);
        derivative_into(params, &self.stage, &drive.command(t0 + dt), k4);

        let w = dt / 6.0;
        for (i, s) in cs.states.iter_mut().enumerate() {
            s.angle += w * (k1[i].angle + 2.0 * k2[i].angle + 2.0 * k3[i].angle + k4[i].angle);
            s.velocity +=
                w * (k1[i].velocity + 2.0 * k2[i].velocity + 2.0 * k3[i].velocity + k4[i].velocity);
        }
        cs.time = t0 + dt;
        if let Some(i) = cs.states.iter().position(|s| !s.is_finite()) {
            return Err(Error::Divergence { time: cs.time, index: i + 1 });
        }
        Ok(())
    }
}

fn fill_stage(stage: &mut [PendulumState], base: &[PendulumState], rate: &[StateRate], h: f64) {
    for ((s, b), r) in stage.iter_mut().zip(base).zip(rate) {
        s.angle = b.angle + h * r.angle;
        s.velocity = b.velocity + h * r.velocity;
    }
}

/// One classical RK4 step of the chain.
///
/// Fails with [`Error::Divergence`] naming the first (1-based) pendulum whose
/// state became non-finite.
pub fn step(
    params: &ChainParams,
    cs: &ChainState,
    drive: &impl Drive,
    dt: f64,
) -> Result<ChainState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    cs.check(params)?;
    let mut next = cs.clone();
    Rk4::new(cs.len()).advance(params, &mut next, drive, dt)?;
    Ok(next)
}
