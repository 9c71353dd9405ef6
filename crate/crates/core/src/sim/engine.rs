//! Sampled-data experiment loop.
//!
//! Physics advances at `dt`; every sampling period `Ts` the encoders are read,
//! frames older than the latency are handed to the controller, and its demand
//! for motor 1 is held until the next instant. Motor 2 follows an optional
//! prescribed disturbance trajectory.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ChainParams, ChainState, MotorCommand, PendulumState};
use crate::sim::integrator::{IntegratorConfig, Rk4};
use crate::sim::motor::{Actuator, Demand, MotorModel, Signal};
use crate::sim::sensor::{quantize, FrameHistory, MeasurementFrame, SensorConfig};

/// Feedback law evaluated once per sampling period.
pub trait Controller {
    /// `frames` holds only what has been delivered by time `t`.
    fn update(&mut self, t: f64, frames: &FrameHistory) -> Result<Demand>;

    /// Names of extra log columns this controller reports.
    fn diagnostic_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Values matching [`Controller::diagnostic_names`], read after each update.
    fn diagnostics(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Keeps motor 1 frozen at angle zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullController;

impl Controller for NullController {
    fn update(&mut self, _t: f64, _frames: &FrameHistory) -> Result<Demand> {
        Ok(Demand::Position(0.0))
    }
}

/// Open-loop drive of motor 1 along a prescribed trajectory.
#[derive(Clone)]
pub struct OpenLoop(pub Arc<dyn Signal>);

impl Controller for OpenLoop {
    fn update(&mut self, _t: f64, _frames: &FrameHistory) -> Result<Demand> {
        Ok(Demand::Follow(self.0.clone()))
    }
}

/// Everything the engine needs to run one experiment.
#[derive(Clone)]
pub struct Experiment {
    pub params: ChainParams,
    pub integrator: IntegratorConfig,
    pub sensor: SensorConfig,
    pub motor: MotorModel,
    pub duration: f64,
    pub initial: ChainState,
    /// Trajectory of motor 2; frozen at zero when absent.
    pub disturbance: Option<Arc<dyn Signal>>,
    /// Round encoder readings to whole counts.
    pub quantize: bool,
}

impl Experiment {
    pub fn new(params: ChainParams, duration: f64) -> Self {
        Self {
            params,
            integrator: IntegratorConfig::default(),
            sensor: SensorConfig::default(),
            motor: MotorModel::default(),
            duration,
            initial: ChainState::at_rest(params.n),
            disturbance: None,
            quantize: true,
        }
    }

    pub fn validate(&self) -> Result<usize> {
        self.params.validate()?;
        self.sensor.validate()?;
        self.motor.validate()?;
        self.initial.check(&self.params)?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        self.integrator.substeps(self.sensor.sample_period)
    }

    fn motor2(&self, t: f64) -> (f64, f64) {
        match &self.disturbance {
            Some(sig) if self.params.boundary.motor2_attached() => sig.sample(t),
            _ => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub states: Vec<PendulumState>,
    pub phi_m1: f64,
    pub omega_m1: f64,
    pub phi_m2: f64,
    pub omega_m2: f64,
    /// Encoder reading taken at `t`.
    pub measured: Vec<f64>,
    pub extra: Vec<f64>,
}

/// One row per sampling instant, including `t = 0` and the final time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub n: usize,
    pub sample_period: f64,
    pub extra_columns: Vec<String>,
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// True angle trace of pendulum `i` (0-based).
    pub fn angles(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.states[i].angle).collect()
    }

    pub fn velocities(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.states[i].velocity).collect()
    }

    pub fn measured(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.measured[i]).collect()
    }

    pub fn extra(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.extra_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.extra[j]).collect())
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.n;
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("phi_{i}")));
        h.extend((1..=n).map(|i| format!("omega_{i}")));
        h.push("phi_m1".into());
        h.push("phi_m2".into());
        h.extend((1..=n).map(|i| format!("meas_{i}")));
        h.extend(self.extra_columns.iter().cloned());
        h
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        let mut line = String::new();
        for r in &self.rows {
            line.clear();
            push_num(&mut line, r.t);
            for s in &r.states {
                push_num(&mut line, s.angle);
            }
            for s in &r.states {
                push_num(&mut line, s.velocity);
            }
            push_num(&mut line, r.phi_m1);
            push_num(&mut line, r.phi_m2);
            for &m in &r.measured {
                push_num(&mut line, m);
            }
            for &x in &r.extra {
                push_num(&mut line, x);
            }
            writeln!(w, "{}", &line[1..])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Parses a log written by [`TrajectoryLog::write_csv`].
    ///
    /// Motor speeds are not part of the file; they are rebuilt from the
    /// motor angles by a five-point central difference.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty csv".into()))?
            .map_err(|e| Error::Data(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let n = cols.iter().filter(|c| c.starts_with("phi_") && !c.starts_with("phi_m")).count();
        let expected_prefix = TrajectoryLog { n, ..Default::default() }.header();
        if n == 0 || cols.len() < expected_prefix.len() || cols[..expected_prefix.len()] != expected_prefix[..] {
            return Err(Error::Data(format!("unexpected csv header: {header}")));
        }
        let extra_columns: Vec<String> =
            cols[expected_prefix.len()..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Data(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Data(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    cols.len(),
                    vals.len()
                )));
            }
            let states = (0..n).map(|i| PendulumState::new(vals[1 + i], vals[1 + n + i])).collect();
            rows.push(LogRow {
                t: vals[0],
                states,
                phi_m1: vals[1 + 2 * n],
                omega_m1: 0.0,
                phi_m2: vals[2 + 2 * n],
                omega_m2: 0.0,
                measured: vals[3 + 2 * n..3 + 3 * n].to_vec(),
                extra: vals[3 + 3 * n..].to_vec(),
            });
        }
        if rows.len() < 2 {
            return Err(Error::Data("csv needs at least two rows".into()));
        }
        let sample_period = rows[1].t - rows[0].t;
        let m1: Vec<f64> = rows.iter().map(|r| r.phi_m1).collect();
        let m2: Vec<f64> = rows.iter().map(|r| r.phi_m2).collect();
        let (v1, v2) = (differentiate(&m1, sample_period), differentiate(&m2, sample_period));
        for (row, (a, b)) in rows.iter_mut().zip(v1.into_iter().zip(v2)) {
            row.omega_m1 = a;
            row.omega_m2 = b;
        }
        Ok(Self { n, sample_period, extra_columns, rows })
    }
}

fn push_num(line: &mut String, x: f64) {
    use std::fmt::Write as _;
    line.push(',');
    let _ = write!(line, "{x:.10e}");
}

/// Five-point central difference, falling back to lower order at the edges.
pub fn differentiate(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (y[i - 2] - 8.0 * y[i - 1] + 8.0 * y[i + 1] - y[i + 2]) / (12.0 * h)
            } else if i >= 1 && i + 1 < n {
                (y[i + 1] - y[i - 1]) / (2.0 * h)
            } else if i + 1 < n {
                (y[i + 1] - y[i]) / h
            } else if i >= 1 {
                (y[i] - y[i - 1]) / h
            } else {
                0.0
            }
        })
        .collect()
}

/// Runs an experiment to completion.
pub fn run_simulation(exp: &Experiment, controller: &mut dyn Controller) -> Result<TrajectoryLog> {
    let substeps = exp.validate()?;
    let params = &exp.params;
    let ts = exp.sensor.sample_period;
    let dt = ts / substeps as f64;
    let latency = exp.sensor.latency();
    let samples = (exp.duration / ts).round() as usize;
    let ppr = exp.sensor.pulses_per_rev;

    let mut cs = exp.initial.clone();
    let mut rk = Rk4::new(params.n);
    let mut actuator = Actuator::new(exp.motor, ts, 0.0);
    let mut pending: VecDeque<MeasurementFrame> = VecDeque::new();
    let mut history = FrameHistory::new();
    let mut previous: Option<Vec<f64>> = None;

    let extra_columns = controller.diagnostic_names();
    let mut log = TrajectoryLog {
        n: params.n,
        sample_period: ts,
        extra_columns,
        rows: Vec::with_capacity(samples + 1),
    };

    for k in 0..=samples {
        let t = k as f64 * ts;
        cs.time = t;

        let measured: Vec<f64> = cs
            .angles()
            .map(|a| if exp.quantize { quantize(a, ppr) } else { a })
            .collect();
        let velocities = match &previous {
            Some(prev) => measured.iter().zip(prev).map(|(a, b)| (a - b) / ts).collect(),
            None => vec![0.0; params.n],
        };
        previous = Some(measured.clone());
        pending.push_back(MeasurementFrame { timestamp: t, angles: measured.clone(), velocities });
        while pending.front().is_some_and(|f| f.timestamp + latency <= t + 1e-9) {
            history.push(pending.pop_front().expect("front checked"));
        }

        let demand = controller.update(t, &history)?;
        actuator.set_demand(t, demand);
        let (phi_m1, omega_m1) = actuator.sample(t);
        let (phi_m2, omega_m2) = exp.motor2(t);
        log.rows.push(LogRow {
            t,
            states: cs.states.clone(),
            phi_m1,
            omega_m1,
            phi_m2,
            omega_m2,
            measured,
            extra: controller.diagnostics(),
        });
        if k == samples {
            break;
        }

        for j in 0..substeps {
            let t0 = t + j as f64 * dt;
            cs.time = t0;
            actuator.begin_step(t0, dt);
            let drive = |tau: f64| {
                let (phi_m1, omega_m1) = actuator.sample(tau);
                let (phi_m2, omega_m2) = exp.motor2(tau);
                MotorCommand { phi_m1, omega_m1, phi_m2, omega_m2 }
            };
            rk.advance(params, &mut cs, &drive, dt)?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Boundary;

    /// Records the newest frame timestamp seen at each instant.
    struct Probe {
        seen: Vec<(f64, Option<f64>)>,
    }

    impl Controller for Probe {
        fn update(&mut self, t: f64, frames: &FrameHistory) -> Result<Demand> {
            self.seen.push((t, frames.latest().map(|f| f.timestamp)));
            Ok(Demand::Position(0.0))
        }
    }

    #[test]
    fn null_controller_from_rest_stays_at_rest() {
        let exp = Experiment::new(ChainParams::identified(4), 1.0);
        let log = run_simulation(&exp, &mut NullController).unwrap();
        assert_eq!(log.rows.len(), 34);
        for r in &log.rows {
            assert!(r.states.iter().all(|s| s.angle == 0.0 && s.velocity == 0.0));
            assert_eq!(r.phi_m1, 0.0);
            assert!(r.measured.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn latency_bookkeeping() {
        let mut exp = Experiment::new(ChainParams::identified(3), 0.3);
        exp.sensor.latency = Some(0.06);
        let mut probe = Probe { seen: Vec::new() };
        run_simulation(&exp, &mut probe).unwrap();
        for (t, seen) in probe.seen {
            match seen {
                Some(ts) => {
                    assert!((t - 0.06 - ts).abs() < 1e-9, "at {t} saw {ts}");
                }
                None => assert!(t < 0.06 - 1e-9),
            }
        }
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let mut exp = Experiment::new(ChainParams::identified(2).with_boundary(Boundary::Both), 0.09);
        exp.initial.states[0].angle = 0.2;
        let log = run_simulation(&exp, &mut NullController).unwrap();
        let text = log.to_csv_string();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "t,phi_1,phi_2,omega_1,omega_2,phi_m1,phi_m2,meas_1,meas_2");
        let back = TrajectoryLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.n, 2);
        assert_eq!(back.rows.len(), log.rows.len());
        for (a, b) in back.rows.iter().zip(&log.rows) {
            assert!((a.states[0].angle - b.states[0].angle).abs() <= 1e-10 * b.states[0].angle.abs().max(1e-300));
        }
        // Eleven significant digits in every field.
        let row = text.lines().nth(2).unwrap();
        assert!(row.split(',').all(|f| f.contains('e')));
    }

    #[test]
    fn five_point_derivative_of_sine() {
        let h = 0.01;
        let y: Vec<f64> = (0..200).map(|i| (3.0 * i as f64 * h).sin()).collect();
        let d = differentiate(&y, h);
        for i in 2..198 {
            let exact = 3.0 * (3.0 * i as f64 * h).cos();
            assert!((d[i] - exact).abs() < 1e-6);
        }
    }
}
