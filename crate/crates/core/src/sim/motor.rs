use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prescribed motor trajectory: angle and angular speed as functions of time.
pub trait Signal: Send + Sync {
    fn sample(&self, t: f64) -> (f64, f64);
}

impl<F: Fn(f64) -> (f64, f64) + Send + Sync> Signal for F {
    fn sample(&self, t: f64) -> (f64, f64) {
        self(t)
    }
}

/// What a controller asks motor 1 to do until the next sampling instant.
#[derive(Clone)]
pub enum Demand {
    /// Go to this angle and hold it (zero-order hold).
    Position(f64),
    /// Follow a prescribed trajectory exactly.
    Follow(Arc<dyn Signal>),
}

impl std::fmt::Debug for Demand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Demand::Position(p) => f.debug_tuple("Position").field(p).finish(),
            Demand::Follow(_) => f.write_str("Follow(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MotorModel {
    /// The stepper reaches every position set-point instantly.
    #[default]
    IdealPosition,
    /// Slews toward the set-point with bounded speed and acceleration.
    RateLimited { max_speed: f64, max_accel: f64 },
}

impl MotorModel {
    pub fn validate(&self) -> Result<()> {
        if let MotorModel::RateLimited { max_speed, max_accel } = *self {
            if !(max_speed > 0.0 && max_accel > 0.0) {
                return Err(Error::InvalidParameter(
                    "rate-limited motor needs positive max_speed and max_accel".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Motor 1 actuator state inside a simulation.
#[derive(Debug, Clone)]
pub(crate) struct Actuator {
    model: MotorModel,
    sample_period: f64,
    demand: Demand,
    /// Angle and speed at the start of the current physics step.
    position: f64,
    speed: f64,
    step_start: f64,
    setpoint: f64,
}

impl Actuator {
    pub(crate) fn new(model: MotorModel, sample_period: f64, initial: f64) -> Self {
        Self {
            model,
            sample_period,
            demand: Demand::Position(initial),
            position: initial,
            speed: 0.0,
            step_start: 0.0,
            setpoint: initial,
        }
    }

    /// Applies a new demand at a sampling instant.
    pub(crate) fn set_demand(&mut self, t: f64, demand: Demand) {
        let (current, current_speed) = self.sample(t);
        let previous = match self.demand {
            Demand::Follow(_) => current,
            Demand::Position(_) => self.setpoint,
        };
        match (&demand, self.model) {
            (Demand::Position(p), MotorModel::IdealPosition) => {
                // Jump to the set-point; the backward difference stands in for the speed.
                self.speed = (p - previous) / self.sample_period;
                self.position = *p;
                self.setpoint = *p;
            }
            (Demand::Position(p), MotorModel::RateLimited { .. }) => {
                self.position = current;
                self.speed = current_speed;
                self.setpoint = *p;
            }
            (Demand::Follow(sig), _) => {
                let (p, v) = sig.sample(t);
                self.position = p;
                self.speed = v;
                self.setpoint = p;
            }
        }
        self.step_start = t;
        self.demand = demand;
    }

    /// Prepares the motion over the physics step `[t, t + dt)`.
    pub(crate) fn begin_step(&mut self, t: f64, dt: f64) {
        match (&self.demand, self.model) {
            (Demand::Position(_), MotorModel::IdealPosition) => {}
            (Demand::Follow(_), _) => {}
            (Demand::Position(target), MotorModel::RateLimited { max_speed, max_accel }) => {
                // Advance to the step start using the previous step's speed.
                self.position += self.speed * (t - self.step_start);
                let err = target - self.position;
                let brake = (2.0 * max_accel * err.abs()).sqrt();
                let wanted = err.signum() * max_speed.min(brake).min(err.abs() / dt);
                let dv = (wanted - self.speed).clamp(-max_accel * dt, max_accel * dt);
                self.speed += dv;
            }
        }
        self.step_start = t;
    }

    /// Motor angle and speed at time `t` inside the current step.
    pub(crate) fn sample(&self, t: f64) -> (f64, f64) {
        match (&self.demand, self.model) {
            (Demand::Follow(sig), _) => sig.sample(t),
            (Demand::Position(_), MotorModel::IdealPosition) => (self.position, self.speed),
            (Demand::Position(_), MotorModel::RateLimited { .. }) => {
                (self.position + self.speed * (t - self.step_start), self.speed)
            }
        }
    }
}
