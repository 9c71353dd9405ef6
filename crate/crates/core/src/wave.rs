//! Non-collocated oscillation cancellation.
//!
//! Motor 1 launches a wave that meets the disturbance coming from motor 2 at
//! the target pendulum `i*`. The naive law mirrors pendulum `2i*`; the
//! compensated law looks further down the chain to make up for the feedback
//! delay, and an extremum seeking loop can tune its gain online.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainParams, ChainState, MotorCommand};
use crate::sim::{Controller, Demand, FrameHistory, Rk4};

/// Parameters of the compensated wave law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveControlConfig {
    /// Target pendulum, 1-based.
    pub i_star: usize,
    /// Index advance.
    #[serde(default)]
    pub delta: usize,
    /// Fractional delay in seconds.
    #[serde(default)]
    pub t_tilde: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    /// Feedback delay the law compensates for.
    #[serde(default)]
    pub t_d: f64,
}

fn one() -> f64 {
    1.0
}

impl WaveControlConfig {
    pub fn naive(i_star: usize) -> Self {
        Self { i_star, delta: 0, t_tilde: 0.0, lambda: 1.0, t_d: 0.0 }
    }

    /// 1-based index of the pendulum whose angle is mirrored.
    pub fn source(&self) -> usize {
        2 * self.i_star + self.delta
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.i_star == 0 {
            return Err(Error::InvalidParameter("i_star is 1-based and must be >= 1".into()));
        }
        if self.source() > n {
            return Err(Error::Infeasible(format!(
                "2*i_star + delta = {} exceeds the chain length {n}",
                self.source()
            )));
        }
        if !(self.t_tilde >= 0.0 && self.t_tilde.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_tilde must be >= 0, got {}", self.t_tilde)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.t_d >= 0.0 && self.t_d.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_d must be >= 0, got {}", self.t_d)));
        }
        Ok(())
    }
}

/// Mirror of pendulum `2i*` from the newest delivered frame.
pub fn naive_wave_law(frames: &FrameHistory, i_star: usize) -> Result<f64> {
    let frame = frames
        .latest()
        .ok_or_else(|| Error::Data("no measurement delivered yet".into()))?;
    let j = 2 * i_star;
    if i_star == 0 || j > frame.angles.len() {
        return Err(Error::Infeasible(format!(
            "pendulum 2*i_star = {j} is not in a chain of {}",
            frame.angles.len()
        )));
    }
    Ok(-frame.angles[j - 1])
}

/// `-λ·φ_{2i*+Δ}(t − t_d − t̃)`, or `None` while the history is too short.
pub fn compensated_wave_law(frames: &FrameHistory, cfg: &WaveControlConfig, t: f64) -> Result<Option<f64>> {
    let n = frames.latest().map_or(0, |f| f.angles.len());
    if n > 0 && cfg.source() > n {
        return Err(Error::Infeasible(format!(
            "pendulum {} is not in a chain of {n}",
            cfg.source()
        )));
    }
    if cfg.lambda == 0.0 {
        return Ok(Some(0.0));
    }
    let at = t - cfg.t_d - cfg.t_tilde;
    Ok(frames.angle_at(cfg.source() - 1, at).map(|phi| -cfg.lambda * phi))
}

/// Smallest index advance whose travel time covers `t_d`.
///
/// `link_times[p]` is the travel time from pendulum `p + 1` to `p + 2`
/// (1-based). Returns `(delta, t_tilde)`.
pub fn select_delay_params(link_times: &[f64], i_star: usize, t_d: f64, n: usize) -> Result<(usize, f64)> {
    if !(t_d >= 0.0 && t_d.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_d must be >= 0, got {t_d}")));
    }
    if let Some(bad) = link_times.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("travel times must be positive, got {bad}")));
    }
    let start = 2 * i_star;
    if i_star == 0 || start > n {
        return Err(Error::Infeasible(format!("2*i_star = {start} exceeds the chain length {n}")));
    }
    let mut cumulative = 0.0;
    let mut delta = 0;
    loop {
        if cumulative >= t_d {
            return Ok((delta, cumulative - t_d));
        }
        // next link: pendulum start+delta -> start+delta+1
        let p = start + delta;
        if p + 1 > n || p > link_times.len() {
            return Err(Error::Infeasible(format!(
                "delay {t_d} s exceeds the wave travel time {cumulative} s left between pendulum {start} and the chain end"
            )));
        }
        cumulative += link_times[p - 1];
        delta += 1;
    }
}

/// Mean absolute value of the window.
pub fn performance_index(window: &[f64]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    window.iter().map(|x| x.abs()).sum::<f64>() / window.len() as f64
}

/// Perturbation-based extremum seeking on a single gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscConfig {
    /// Averaging window W in samples.
    pub window: usize,
    /// Integrator gain K_E.
    pub gain: f64,
    /// Dither frequency in Hz.
    pub dither_freq: f64,
    pub dither_amplitude: f64,
    /// High-pass cut-off in Hz.
    pub hpf_cutoff: f64,
    pub sample_period: f64,
    pub lambda_max: f64,
    /// Phase shift of the demodulating sine relative to the dither (rad).
    /// Set it near the plant phase lag at the dither frequency.
    pub demod_phase: f64,
}

impl Default for EscConfig {
    fn default() -> Self {
        Self {
            window: 20,
            gain: 8.0,
            dither_freq: 0.5,
            dither_amplitude: 0.01,
            hpf_cutoff: 0.1,
            sample_period: 0.03,
            lambda_max: 3.0,
            demod_phase: 0.0,
        }
    }
}

impl EscConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gain", self.gain),
            ("dither_freq", self.dither_freq),
            ("dither_amplitude", self.dither_amplitude),
            ("hpf_cutoff", self.hpf_cutoff),
            ("sample_period", self.sample_period),
            ("lambda_max", self.lambda_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("esc {name} must be > 0, got {v}")));
            }
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("esc window must be >= 1".into()));
        }
        if !self.demod_phase.is_finite() {
            return Err(Error::InvalidParameter("esc demod_phase must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscState {
    pub lambda_hat: f64,
    pub integrator: f64,
    /// Last input and output of the high-pass filter.
    pub hpf_in: Option<f64>,
    pub hpf_out: f64,
    /// Demodulated signal of the last step.
    pub xi: f64,
    pub window: VecDeque<f64>,
}

impl EscState {
    pub fn new(lambda0: f64) -> Self {
        Self { lambda_hat: lambda0, integrator: lambda0, hpf_in: None, hpf_out: 0.0, xi: 0.0, window: VecDeque::new() }
    }

    /// Adds a sample of `|φ_{i*}|` and returns the windowed index.
    pub fn push_sample(&mut self, cfg: &EscConfig, value: f64) -> f64 {
        self.window.push_back(value.abs());
        while self.window.len() > cfg.window {
            self.window.pop_front();
        }
        performance_index(self.window.make_contiguous())
    }
}

/// One update of the extremum seeking loop; returns the new gain.
pub fn esc_step(cfg: &EscConfig, state: &mut EscState, index: f64, t: f64) -> f64 {
    // bilinear first-order high-pass
    let c = 2.0 / cfg.sample_period;
    let wc = 2.0 * PI * cfg.hpf_cutoff;
    let prev = state.hpf_in.unwrap_or(index);
    state.hpf_out = (c * (index - prev) + (c - wc) * state.hpf_out) / (c + wc);
    state.hpf_in = Some(index);

    let phase = 2.0 * PI * cfg.dither_freq * t;
    state.xi = state.hpf_out * (phase - cfg.demod_phase).sin();
    state.integrator -= cfg.gain * state.xi * cfg.sample_period;
    state.lambda_hat = (state.integrator + cfg.dither_amplitude * phase.sin()).clamp(0.0, cfg.lambda_max);
    state.lambda_hat
}

/// Settings of the pulse experiment behind [`estimate_travel_times`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseConfig {
    pub amplitude: f64,
    pub width: f64,
    pub dt: f64,
    pub duration: Option<f64>,
    /// A peak counts once it reaches this fraction of the previous pendulum's peak.
    pub threshold: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self { amplitude: 0.2, width: 0.03, dt: 1e-4, duration: None, threshold: 0.3 }
    }
}

/// First-peak arrival time at every pendulum after a short kick of motor 1.
pub fn pulse_arrivals(params: &ChainParams, pulse: &PulseConfig) -> Result<Vec<f64>> {
    params.validate()?;
    let n = params.n;
    let duration = pulse.duration.unwrap_or(0.5 + 0.15 * n as f64);
    let steps = (duration / pulse.dt).round() as usize;
    let mut cs = ChainState::at_rest(n);
    let mut rk = Rk4::new(n);
    let mut trace = vec![Vec::with_capacity(steps); n];
    for _ in 0..steps {
        let kick = if cs.time < pulse.width - 1e-12 { pulse.amplitude } else { 0.0 };
        let cmd = MotorCommand { phi_m1: kick, ..Default::default() };
        rk.advance(params, &mut cs, &cmd, pulse.dt)?;
        for (tr, s) in trace.iter_mut().zip(&cs.states) {
            tr.push(s.angle);
        }
    }

    let mut arrivals = Vec::with_capacity(n);
    let mut reference = trace[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (i, tr) in trace.iter().enumerate() {
        let thr = pulse.threshold * reference;
        let peak = (1..tr.len().saturating_sub(1))
            .find(|&q| tr[q] >= thr && tr[q] >= tr[q - 1] && tr[q] >= tr[q + 1] && tr[q] > 0.0)
            .ok_or_else(|| Error::Estimation(format!("no wave front detected at pendulum {}", i + 1)))?;
        arrivals.push((peak + 1) as f64 * pulse.dt);
        reference = tr[peak];
    }
    if arrivals.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Estimation(format!("arrival times are not increasing: {arrivals:?}")));
    }
    Ok(arrivals)
}

/// Per-link wave travel times; entry `p` is the link from pendulum `p + 1` to `p + 2`.
pub fn estimate_travel_times(params: &ChainParams) -> Result<Vec<f64>> {
    estimate_travel_times_with(params, &PulseConfig::default())
}

pub fn estimate_travel_times_with(params: &ChainParams, pulse: &PulseConfig) -> Result<Vec<f64>> {
    let arrivals = pulse_arrivals(params, pulse)?;
    Ok(arrivals.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Which law drives motor 1.
#[derive(Debug, Clone, PartialEq)]
pub enum WaveLaw {
    Naive { i_star: usize },
    Compensated(WaveControlConfig),
    Adaptive(WaveControlConfig, EscConfig),
}

/// Wave controller for use in the experiment loop.
#[derive(Debug, Clone)]
pub struct WaveController {
    law: WaveLaw,
    last: f64,
    esc: Option<EscState>,
    index: f64,
}

impl WaveController {
    pub fn new(law: WaveLaw, n: usize) -> Result<Self> {
        let esc = match &law {
            WaveLaw::Naive { i_star } => {
                WaveControlConfig::naive(*i_star).validate(n)?;
                None
            }
            WaveLaw::Compensated(cfg) => {
                cfg.validate(n)?;
                None
            }
            WaveLaw::Adaptive(cfg, esc) => {
                cfg.validate(n)?;
                esc.validate()?;
                Some(EscState::new(cfg.lambda))
            }
        };
        Ok(Self { law, last: 0.0, esc, index: 0.0 })
    }

    pub fn lambda(&self) -> f64 {
        match (&self.law, &self.esc) {
            (_, Some(s)) => s.lambda_hat,
            (WaveLaw::Compensated(c), None) => c.lambda,
            _ => 1.0,
        }
    }
}

impl Controller for WaveController {
    fn update(&mut self, t: f64, frames: &FrameHistory) -> Result<Demand> {
        let cmd = match &self.law {
            WaveLaw::Naive { i_star } => {
                if frames.is_empty() {
                    None
                } else {
                    Some(naive_wave_law(frames, *i_star)?)
                }
            }
            WaveLaw::Compensated(cfg) => compensated_wave_law(frames, cfg, t)?,
            WaveLaw::Adaptive(cfg, esc_cfg) => {
                let state = self.esc.as_mut().expect("adaptive law carries esc state");
                if let Some(f) = frames.latest() {
                    self.index = state.push_sample(esc_cfg, f.angles[cfg.i_star - 1]);
                    esc_step(esc_cfg, state, self.index, t);
                }
                let live = WaveControlConfig { lambda: state.lambda_hat, ..*cfg };
                compensated_wave_law(frames, &live, t)?
            }
        };
        if let Some(c) = cmd {
            self.last = c;
        }
        Ok(Demand::Position(self.last))
    }

    fn diagnostic_names(&self) -> Vec<String> {
        let mut names = vec!["lambda".to_string()];
        if self.esc.is_some() {
            names.extend(["esc_I", "esc_y", "esc_xi"].map(String::from));
        }
        names
    }

    fn diagnostics(&self) -> Vec<f64> {
        let mut v = vec![self.lambda()];
        if let Some(s) = &self.esc {
            v.extend([self.index, s.hpf_out, s.xi]);
        }
        v
    }
}
