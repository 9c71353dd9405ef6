use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PULSES_PER_REV: u32 = 4096;
pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.03;
/// Highest read-out rate of the encoder shield.
pub const MAX_READOUT_HZ: f64 = 500.0;

/// Encoder resolution, sampling period and feedback latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(default = "default_ppr")]
    pub pulses_per_rev: u32,
    /// Sampling (and control) period Ts in seconds.
    #[serde(default = "default_ts")]
    pub sample_period: f64,
    /// Delay t_d between taking a sample and the controller seeing it.
    /// Defaults to one sampling period.
    #[serde(default)]
    pub latency: Option<f64>,
}

fn default_ppr() -> u32 {
    DEFAULT_PULSES_PER_REV
}

fn default_ts() -> f64 {
    DEFAULT_SAMPLE_PERIOD
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { pulses_per_rev: DEFAULT_PULSES_PER_REV, sample_period: DEFAULT_SAMPLE_PERIOD, latency: None }
    }
}

impl SensorConfig {
    pub fn latency(&self) -> f64 {
        self.latency.unwrap_or(self.sample_period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses_per_rev == 0 {
            return Err(Error::InvalidParameter("pulses_per_rev must be > 0".into()));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample period must be > 0, got {}",
                self.sample_period
            )));
        }
        let td = self.latency();
        if !(td >= 0.0 && td.is_finite()) {
            return Err(Error::InvalidParameter(format!("latency must be >= 0, got {td}")));
        }
        Ok(())
    }

    /// Whether the sampling rate is within what the real encoder read-out achieves.
    pub fn within_hardware_rate(&self) -> bool {
        1.0 / self.sample_period <= MAX_READOUT_HZ * (1.0 + 1e-12)
    }
}

/// Rounds an angle to the nearest encoder count.
pub fn quantize(angle: f64, pulses_per_rev: u32) -> f64 {
    let q = 2.0 * PI / f64::from(pulses_per_rev);
    (angle / q).round() * q
}

/// Encoder snapshot as seen by a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    /// When the sample was taken (not when it was delivered).
    pub timestamp: f64,
    pub angles: Vec<f64>,
    /// Backward-difference velocity estimates; zero for the first frame.
    pub velocities: Vec<f64>,
}

/// Frames delivered to the controller so far, oldest first.
#[derive(Debug, Clone, Default)]
pub struct FrameHistory {
    frames: Vec<MeasurementFrame>,
}

impl FrameHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: MeasurementFrame) {
        debug_assert!(self.frames.last().is_none_or(|f| f.timestamp < frame.timestamp));
        self.frames.push(frame);
    }

    pub fn latest(&self) -> Option<&MeasurementFrame> {
        self.frames.last()
    }

    pub fn frames(&self) -> &[MeasurementFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Angle of pendulum `index` (0-based) at `time`, linearly interpolated
    /// between the two bracketing frames. `None` outside the recorded span.
    pub fn angle_at(&self, index: usize, time: f64) -> Option<f64> {
        let first = self.frames.first()?;
        let last = self.frames.last()?;
        let eps = 1e-9;
        if time < first.timestamp - eps || time > last.timestamp + eps {
            return None;
        }
        let pos = self.frames.partition_point(|f| f.timestamp <= time + eps);
        let hi = pos.min(self.frames.len() - 1);
        let lo = pos.saturating_sub(1);
        let (a, b) = (&self.frames[lo], &self.frames[hi]);
        let ya = *a.angles.get(index)?;
        let yb = *b.angles.get(index)?;
        if (time - a.timestamp).abs() <= eps || lo == hi {
            return Some(ya);
        }
        let w = (time - a.timestamp) / (b.timestamp - a.timestamp);
        Some(ya + w * (yb - ya))
    }
}
