//! Low-oscillatory rotation by replaying a near-synchronizing reference.
//!
//! The reference is the free motion of a single undamped pendulum. Motor 1
//! tracks it open loop; if every pendulum followed it exactly the coupling
//! springs would stay relaxed.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainParams, ChainState, MotorCommand, PendulumState};
use crate::sim::{Controller, Demand, FrameHistory, Signal, TrajectoryLog};

/// Virtual leader sampled uniformly from `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub sample_period: f64,
    pub samples: Vec<PendulumState>,
}

impl ReferenceTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.sample_period
    }

    /// Linear interpolation of angle and speed.
    pub fn at(&self, t: f64) -> Result<PendulumState> {
        let end = self.duration();
        let eps = 1e-9 * self.sample_period;
        if !(t >= -eps && t <= end + eps) {
            return Err(Error::Extrapolation { t, end });
        }
        Ok(self.interpolate(t.clamp(0.0, end)))
    }

    fn interpolate(&self, t: f64) -> PendulumState {
        let x = t / self.sample_period;
        let last = self.samples.len() - 1;
        let i = (x.floor() as usize).min(last);
        let w = x - i as f64;
        if i == last || w <= 1e-12 {
            return self.samples[i];
        }
        let (a, b) = (self.samples[i], self.samples[i + 1]);
        PendulumState::new(a.angle + w * (b.angle - a.angle), a.velocity + w * (b.velocity - a.velocity))
    }

    /// Average speed over the whole trajectory.
    pub fn mean_speed(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) if self.samples.len() > 1 => (b.angle - a.angle) / self.duration(),
            _ => 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,phi0,omega0")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(w, "{:.10e},{:.10e},{:.10e}", k as f64 * self.sample_period, s.angle, s.velocity)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty reference csv".into()))?
            .map_err(|e| Error::Data(e.to_string()))?;
        if header.replace(' ', "") != "t,phi0,omega0" {
            return Err(Error::Data(format!("unexpected reference header: {header}")));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Data(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(e.to_string()))?;
            if v.len() != 3 {
                return Err(Error::Data(format!("expected 3 fields: {line}")));
            }
            times.push(v[0]);
            samples.push(PendulumState::new(v[1], v[2]));
        }
        if samples.len() < 2 {
            return Err(Error::Data("reference needs at least two samples".into()));
        }
        let sample_period = times[1] - times[0];
        let uniform = times
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - k as f64 * sample_period).abs() <= 1e-6 * sample_period.max(1.0));
        if !(sample_period > 0.0) || !uniform {
            return Err(Error::Data("reference must be sampled uniformly from t = 0".into()));
        }
        Ok(Self { sample_period, samples })
    }
}

impl Signal for ReferenceTrajectory {
    fn sample(&self, t: f64) -> (f64, f64) {
        let s = self.interpolate(t.clamp(0.0, self.duration()));
        (s.angle, s.velocity)
    }
}

/// Target mean speed and horizon of a synchronization task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncGoalSpec {
    pub omega_ref: f64,
    pub t_f: f64,
}

impl SyncGoalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.omega_ref == 0.0 || !self.omega_ref.is_finite() {
            return Err(Error::InvalidParameter("omega_ref must be finite and nonzero".into()));
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_f must be > 0, got {}", self.t_f)));
        }
        Ok(())
    }
}

/// Energy of a single pendulum measured from the hanging rest position.
fn pendulum_energy(params: &ChainParams, s: PendulumState) -> f64 {
    let mgl = params.mass * params.gravity * params.length;
    0.5 * params.inertia * s.velocity * s.velocity + mgl * (1.0 - s.angle.cos())
}

/// Whether a single pendulum started at `s` rotates instead of swinging.
pub fn above_separatrix(params: &ChainParams, s: PendulumState) -> bool {
    pendulum_energy(params, s) > 2.0 * params.mass * params.gravity * params.length
}

fn check_rotation(params: &ChainParams, init: PendulumState) -> Result<()> {
    if !above_separatrix(params, init) {
        return Err(Error::Infeasible(format!(
            "initial state ({}, {}) lies inside the separatrix; the pendulum would not rotate",
            init.angle, init.velocity
        )));
    }
    Ok(())
}

/// Free undamped pendulum from `init`, sampled every `ts` up to `t_f`.
pub fn generate_sync_reference(
    params: &ChainParams,
    init: PendulumState,
    t_f: f64,
    ts: f64,
) -> Result<ReferenceTrajectory> {
    generate_sync_reference_with(params, init, t_f, ts, crate::sim::integrator::DEFAULT_DT)
}

pub fn generate_sync_reference_with(
    params: &ChainParams,
    init: PendulumState,
    t_f: f64,
    ts: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    params.validate()?;
    if !(t_f > 0.0 && ts > 0.0 && t_f.is_finite()) {
        return Err(Error::InvalidParameter(format!("need t_f > 0 and Ts > 0, got {t_f}, {ts}")));
    }
    check_rotation(params, init)?;
    let substeps = crate::sim::IntegratorConfig { dt }.substeps(ts)?;
    let h = ts / substeps as f64;
    let w2 = params.gravity_ratio();
    let f = |s: PendulumState| (s.velocity, -w2 * s.angle.sin());

    let count = (t_f / ts).ceil() as usize;
    let mut samples = Vec::with_capacity(count + 1);
    let mut s = init;
    samples.push(s);
    for _ in 0..count {
        for _ in 0..substeps {
            let k1 = f(s);
            let k2 = f(PendulumState::new(s.angle + 0.5 * h * k1.0, s.velocity + 0.5 * h * k1.1));
            let k3 = f(PendulumState::new(s.angle + 0.5 * h * k2.0, s.velocity + 0.5 * h * k2.1));
            let k4 = f(PendulumState::new(s.angle + h * k3.0, s.velocity + h * k3.1));
            s.angle += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            s.velocity += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        samples.push(s);
    }
    Ok(ReferenceTrajectory { sample_period: ts, samples })
}

/// Mean speed of the undamped rotation through `init`, from the period integral.
pub fn rotation_mean_speed(params: &ChainParams, init: PendulumState) -> Result<f64> {
    check_rotation(params, init)?;
    let w2 = params.gravity_ratio();
    // v(θ)² = e − 2w²(1 − cos θ) along the orbit
    let e = init.velocity * init.velocity + 2.0 * w2 * (1.0 - init.angle.cos());
    // Midpoint rule on a smooth periodic integrand converges geometrically.
    let m = 4096;
    let h = 2.0 * PI / m as f64;
    let period: f64 = (0..m)
        .map(|j| {
            let th = (j as f64 + 0.5) * h;
            h / (e - 2.0 * w2 * (1.0 - th.cos())).sqrt()
        })
        .sum();
    Ok(init.velocity.signum() * 2.0 * PI / period)
}

/// Initial speed at `angle` whose undamped rotation averages `omega_ref`.
pub fn initial_speed_for(params: &ChainParams, angle: f64, omega_ref: f64) -> Result<f64> {
    if omega_ref == 0.0 || !omega_ref.is_finite() {
        return Err(Error::InvalidParameter("omega_ref must be finite and nonzero".into()));
    }
    let w2 = params.gravity_ratio();
    // speed at `angle` on the separatrix
    let sep = (2.0 * w2 * (1.0 + angle.cos())).sqrt();
    let target = omega_ref.abs();
    let mut offset = 1e-9 * (1.0 + sep);
    while !above_separatrix(params, PendulumState::new(angle, sep + offset)) {
        offset *= 2.0;
    }
    let mut lo = sep + offset;
    let mut hi = (sep + target).max(2.0 * target) + 1.0;
    let speed = |v: f64| rotation_mean_speed(params, PendulumState::new(angle, v));
    while speed(hi)? < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if speed(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(omega_ref.signum() * 0.5 * (lo + hi))
}

/// `x_0(t) = [ω t, ω]`.
pub fn constant_speed_reference(omega_ref: f64, t_f: f64, ts: f64) -> Result<ReferenceTrajectory> {
    if !(t_f > 0.0 && ts > 0.0 && t_f.is_finite()) {
        return Err(Error::InvalidParameter(format!("need t_f > 0 and Ts > 0, got {t_f}, {ts}")));
    }
    let count = (t_f / ts).ceil() as usize;
    let samples = (0..=count).map(|k| PendulumState::new(omega_ref * k as f64 * ts, omega_ref)).collect();
    Ok(ReferenceTrajectory { sample_period: ts, samples })
}

/// Motor 1 tracks the reference; motor 2 stays at rest.
pub fn reference_to_motor_command(reference: &ReferenceTrajectory, t: f64) -> Result<MotorCommand> {
    let s = reference.at(t)?;
    Ok(MotorCommand { phi_m1: s.angle, omega_m1: s.velocity, phi_m2: 0.0, omega_m2: 0.0 })
}

/// Chain state with every pendulum on the reference at `t = 0`.
pub fn initial_on_reference(n: usize, reference: &ReferenceTrajectory) -> ChainState {
    ChainState::uniform(n, reference.samples[0])
}

/// `Σ_{i>j} ∫ |v_i − v_j| dt` by the trapezoidal rule.
pub fn desync_integral(times: &[f64], speeds: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..speeds.len() {
        for j in 0..i {
            let gap = |k: usize| (speeds[i][k] - speeds[j][k]).abs();
            for k in 1..times.len() {
                total += 0.5 * (times[k] - times[k - 1]) * (gap(k) + gap(k - 1));
            }
        }
    }
    total
}

/// Desynchronization of the logged chain over `[0, t_f]`.
pub fn desync_criterion(log: &TrajectoryLog, t_f: f64) -> Result<f64> {
    let end = log.rows.last().map_or(0.0, |r| r.t);
    if end + 1e-9 < t_f {
        return Err(Error::Data(format!("log ends at {end} s, before t_f = {t_f} s")));
    }
    let keep = log.rows.iter().take_while(|r| r.t <= t_f + 1e-9).count();
    let times: Vec<f64> = log.rows[..keep].iter().map(|r| r.t).collect();
    let speeds: Vec<Vec<f64>> =
        (0..log.n).map(|i| log.rows[..keep].iter().map(|r| r.states[i].velocity).collect()).collect();
    Ok(desync_integral(&times, &speeds))
}

/// Time-averaged speed of each pendulum over `[t0, t1]`.
pub fn mean_speeds(log: &TrajectoryLog, t0: f64, t1: f64) -> Result<Vec<f64>> {
    let eps = 1e-9;
    let a = log.rows.iter().position(|r| r.t >= t0 - eps);
    let b = log.rows.iter().rposition(|r| r.t <= t1 + eps);
    match (a, b) {
        (Some(a), Some(b)) if b > a => {
            let (ra, rb) = (&log.rows[a], &log.rows[b]);
            let span = rb.t - ra.t;
            Ok(ra.states.iter().zip(&rb.states).map(|(x, y)| (y.angle - x.angle) / span).collect())
        }
        _ => Err(Error::Data(format!("window [{t0}, {t1}] does not cover two log rows"))),
    }
}

/// Motor 1 replays a stored trajectory.
#[derive(Debug, Clone)]
pub struct ReplayController {
    reference: Arc<ReferenceTrajectory>,
}

impl ReplayController {
    pub fn new(reference: ReferenceTrajectory) -> Self {
        Self { reference: Arc::new(reference) }
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }
}

impl Controller for ReplayController {
    fn update(&mut self, t: f64, _frames: &FrameHistory) -> Result<Demand> {
        if t > self.reference.duration() + 1e-9 {
            return Err(Error::Extrapolation { t, end: self.reference.duration() });
        }
        Ok(Demand::Follow(self.reference.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separatrix_gate() {
        let p = ChainParams::identified(5);
        assert!(generate_sync_reference(&p, PendulumState::new(PI, 3.0), 1.0, 0.03).is_ok());
        for bad in [PendulumState::new(PI, 0.0), PendulumState::new(0.0, 1e-3)] {
            assert!(matches!(generate_sync_reference(&p, bad, 1.0, 0.03), Err(Error::Infeasible(_))));
        }
    }

    #[test]
    fn constant_reference_examples() {
        let r = constant_speed_reference(8.2, 2.0, 0.03).unwrap();
        assert!((r.at(1.0).unwrap().angle - 8.2).abs() < 1e-12);
        for w in r.samples.windows(2) {
            assert!((w[1].angle - w[0].angle - 8.2 * 0.03).abs() < 1e-12);
        }
        let still = constant_speed_reference(0.0, 1.0, 0.03).unwrap();
        assert!(still.samples.iter().all(|s| s.angle == 0.0));
    }

    #[test]
    fn motor_command_interpolates() {
        let r = ReferenceTrajectory {
            sample_period: 0.1,
            samples: vec![PendulumState::new(0.0, 1.0), PendulumState::new(1.0, 3.0)],
        };
        let c = reference_to_motor_command(&r, 0.1).unwrap();
        assert_eq!((c.phi_m1, c.omega_m1, c.phi_m2, c.omega_m2), (1.0, 3.0, 0.0, 0.0));
        let c = reference_to_motor_command(&r, 0.025).unwrap();
        assert!((c.phi_m1 - 0.25).abs() < 1e-12 && (c.omega_m1 - 1.5).abs() < 1e-12);
        assert!(matches!(reference_to_motor_command(&r, 0.2), Err(Error::Extrapolation { .. })));
        assert!(reference_to_motor_command(&r, -0.1).is_err());
    }

    #[test]
    fn desync_examples() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let same = vec![vec![2.0; 101]; 3];
        assert_eq!(desync_integral(&times, &same), 0.0);
        let gap = vec![vec![2.0; 101], vec![2.5; 101]];
        assert!((desync_integral(&times, &gap) - 0.5 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_hits_target_speed() {
        let p = ChainParams::identified(5);
        let v = initial_speed_for(&p, PI, 8.2).unwrap();
        let w = rotation_mean_speed(&p, PendulumState::new(PI, v)).unwrap();
        assert!((w - 8.2).abs() < 1e-9);
        assert!(initial_speed_for(&p, PI, 0.0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let p = ChainParams::identified(5);
        let r = generate_sync_reference(&p, PendulumState::new(PI, 3.0), 0.3, 0.03).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = ReferenceTrajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples.len(), r.samples.len());
        for (a, b) in back.samples.iter().zip(&r.samples) {
            assert!((a.angle - b.angle).abs() < 1e-9 && (a.velocity - b.velocity).abs() < 1e-8);
        }
    }
}
