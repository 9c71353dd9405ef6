//! Grey-box identification of the spring and damping constants.
//!
//! Candidates are scored by simulating the chain from each dataset's initial
//! state with the recorded motor inputs and summing the squared angle errors
//! at the sampling instants.

pub mod simplex;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainParams, ChainState, MotorCommand};
use crate::sim::{Rk4, Signal, TrajectoryLog};
use simplex::{minimize, SimplexOptions};

/// `a sin(ω t)`.
pub fn excitation(a: f64, omega: f64, t: f64) -> f64 {
    a * (omega * t).sin()
}

/// `−(2a/π) asin(sin(ω t))`: triangle wave of amplitude `a` and period `2π/ω`.
pub fn triangle_disturbance(a: f64, omega: f64, t: f64) -> f64 {
    -(2.0 * a / PI) * (omega * t).sin().asin()
}

/// Sine trajectory for a motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sine {
    pub amplitude: f64,
    pub omega: f64,
}

impl Signal for Sine {
    fn sample(&self, t: f64) -> (f64, f64) {
        (excitation(self.amplitude, self.omega, t), self.amplitude * self.omega * (self.omega * t).cos())
    }
}

/// Triangle trajectory for a motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triangle {
    pub amplitude: f64,
    pub omega: f64,
}

impl Signal for Triangle {
    fn sample(&self, t: f64) -> (f64, f64) {
        let slope = -(2.0 * self.amplitude / PI) * self.omega * (self.omega * t).cos().signum();
        (triangle_disturbance(self.amplitude, self.omega, t), slope)
    }
}

/// Recorded motor inputs and measured angles at the sampling instants.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_period: f64,
    pub n: usize,
    pub initial: ChainState,
    pub inputs: Vec<MotorCommand>,
    /// `outputs[k][i]`: angle of pendulum `i` at sample `k`.
    pub outputs: Vec<Vec<f64>>,
}

impl Dataset {
    /// Uses the encoder readings of a log as the measurement.
    pub fn from_log(log: &TrajectoryLog) -> Result<Self> {
        let first = log.rows.first().ok_or_else(|| Error::Data("empty log".into()))?;
        let ds = Self {
            sample_period: log.sample_period,
            n: log.n,
            initial: ChainState { time: 0.0, states: first.states.clone() },
            inputs: log
                .rows
                .iter()
                .map(|r| MotorCommand { phi_m1: r.phi_m1, omega_m1: r.omega_m1, phi_m2: r.phi_m2, omega_m2: r.omega_m2 })
                .collect(),
            outputs: log.rows.iter().map(|r| r.measured.clone()).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_log(&TrajectoryLog::read_csv(std::io::BufReader::new(file))?)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0) {
            return Err(Error::Data(format!("sample period must be > 0, got {}", self.sample_period)));
        }
        if self.inputs.len() != self.outputs.len() || self.inputs.len() < 2 {
            return Err(Error::Data(format!(
                "need matching input/output traces of length >= 2, got {} and {}",
                self.inputs.len(),
                self.outputs.len()
            )));
        }
        if self.initial.len() != self.n || self.outputs.iter().any(|o| o.len() != self.n) {
            return Err(Error::Data(format!("every sample must carry {} angles", self.n)));
        }
        Ok(())
    }

    /// Measured trace of pendulum `i`.
    pub fn trace(&self, i: usize) -> Vec<f64> {
        self.outputs.iter().map(|o| o[i]).collect()
    }
}

/// Cubic Hermite interpolation of one motor between two samples.
fn hermite(p0: f64, v0: f64, p1: f64, v1: f64, h: f64, s: f64) -> (f64, f64) {
    let (s2, s3) = (s * s, s * s * s);
    let p = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
        + (s3 - 2.0 * s2 + s) * h * v0
        + (-2.0 * s3 + 3.0 * s2) * p1
        + (s3 - s2) * h * v1;
    let d = (6.0 * s2 - 6.0 * s) * p0
        + (3.0 * s2 - 4.0 * s + 1.0) * h * v0
        + (-6.0 * s2 + 6.0 * s) * p1
        + (3.0 * s2 - 2.0 * s) * h * v1;
    (p, d / h)
}

/// Simulated angles at the dataset's sampling instants.
pub fn simulate_dataset(params: &ChainParams, data: &Dataset, dt: f64) -> Result<Vec<Vec<f64>>> {
    let ts = data.sample_period;
    let substeps = crate::sim::IntegratorConfig { dt }.substeps(ts)?;
    let h = ts / substeps as f64;
    let mut cs = data.initial.clone();
    cs.time = 0.0;
    let mut rk = Rk4::new(data.n);
    let mut out = Vec::with_capacity(data.len());
    out.push(cs.angles().collect::<Vec<_>>());
    for k in 0..data.len() - 1 {
        let (a, b) = (data.inputs[k], data.inputs[k + 1]);
        let t0 = k as f64 * ts;
        let drive = |tau: f64| {
            let s = ((tau - t0) / ts).clamp(0.0, 1.0);
            let (phi_m1, omega_m1) = hermite(a.phi_m1, a.omega_m1, b.phi_m1, b.omega_m1, ts, s);
            let (phi_m2, omega_m2) = hermite(a.phi_m2, a.omega_m2, b.phi_m2, b.omega_m2, ts, s);
            MotorCommand { phi_m1, omega_m1, phi_m2, omega_m2 }
        };
        for j in 0..substeps {
            cs.time = t0 + j as f64 * h;
            rk.advance(params, &mut cs, &drive, h)?;
        }
        out.push(cs.angles().collect());
    }
    Ok(out)
}

/// Range-normalized RMS error of one signal.
pub fn nrmse(simulated: &[f64], measured: &[f64]) -> Result<f64> {
    if simulated.len() != measured.len() || measured.is_empty() {
        return Err(Error::Data(format!(
            "traces differ in length or are empty ({} vs {})",
            simulated.len(),
            measured.len()
        )));
    }
    let hi = measured.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = measured.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Normalization("measured trace is constant".into()));
    }
    let mse = simulated.iter().zip(measured).map(|(s, m)| (s - m) * (s - m)).sum::<f64>() / measured.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Per-pendulum NRMSE over all datasets, and their mean.
pub fn chain_nrmse(simulated: &[Vec<Vec<f64>>], data: &[Dataset]) -> Result<(Vec<f64>, f64)> {
    let n = data.first().map_or(0, |d| d.n);
    let mut per = Vec::with_capacity(n);
    for i in 0..n {
        let sim: Vec<f64> = simulated.iter().flat_map(|s| s.iter().map(move |row| row[i])).collect();
        let meas: Vec<f64> = data.iter().flat_map(|d| d.outputs.iter().map(move |row| row[i])).collect();
        per.push(nrmse(&sim, &meas)?);
    }
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((per, mean))
}

/// A parameter the fit may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamName {
    K,
    B,
    Gamma,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::K => "k",
            ParamName::B => "b",
            ParamName::Gamma => "gamma",
        }
    }

    fn get(self, p: &ChainParams) -> f64 {
        match self {
            ParamName::K => p.stiffness,
            ParamName::B => p.relative_damping,
            ParamName::Gamma => p.absolute_damping,
        }
    }

    fn set(self, p: &mut ChainParams, v: f64) {
        match self {
            ParamName::K => p.stiffness = v,
            ParamName::B => p.relative_damping = v,
            ParamName::Gamma => p.absolute_damping = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub name: ParamName,
    pub guess: f64,
    pub lower: f64,
    pub upper: f64,
}

fn default_starts() -> usize {
    3
}
fn default_budget() -> usize {
    2000
}
fn default_jitter() -> f64 {
    0.3
}
fn default_fit_dt() -> f64 {
    1e-3
}

/// What to fit, from where, and how hard to try.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// Known constants; the free entries are overwritten during the fit.
    pub params: ChainParams,
    pub free: Vec<FreeParam>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Total objective evaluations across all starts.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Half-width of the uniform start perturbation in log space.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Integration step of the candidate simulations.
    #[serde(default = "default_fit_dt")]
    pub dt: f64,
}

impl FitSpec {
    /// Fit of `k`, `b` and `gamma` around the datasheet stiffness.
    pub fn standard(params: ChainParams) -> Self {
        Self {
            params,
            free: vec![
                FreeParam { name: ParamName::K, guess: params.nominal_stiffness, lower: 0.005, upper: 0.5 },
                FreeParam { name: ParamName::B, guess: 1e-3, lower: 1e-5, upper: 0.1 },
                FreeParam { name: ParamName::Gamma, guess: 1e-4, lower: 1e-6, upper: 1e-2 },
            ],
            starts: default_starts(),
            budget: default_budget(),
            seed: 0,
            jitter: default_jitter(),
            dt: default_fit_dt(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::InvalidParameter("no free parameters".into()));
        }
        for (i, f) in self.free.iter().enumerate() {
            if self.free[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidParameter(format!("{} listed twice", f.name.as_str())));
            }
            if !(f.lower > 0.0 && f.lower < f.upper && f.upper.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{} needs 0 < lower < upper, got [{}, {}]",
                    f.name.as_str(),
                    f.lower,
                    f.upper
                )));
            }
            if !(f.guess >= f.lower && f.guess <= f.upper) {
                return Err(Error::InvalidParameter(format!(
                    "{} guess {} lies outside [{}, {}]",
                    f.name.as_str(),
                    f.guess,
                    f.lower,
                    f.upper
                )));
            }
        }
        if self.starts == 0 || self.budget < self.starts * (self.free.len() + 2) {
            return Err(Error::InvalidParameter("starts must be >= 1 and the budget must cover them".into()));
        }
        if !(self.jitter >= 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidParameter("jitter must be >= 0 and dt > 0".into()));
        }
        Ok(())
    }

    /// Parameters with the free entries set to `values`.
    pub fn apply(&self, values: &[f64]) -> ChainParams {
        let mut p = self.params;
        for (f, &v) in self.free.iter().zip(values) {
            f.name.set(&mut p, v);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub params: ChainParams,
    pub objective: f64,
    pub nrmse_per_pendulum: Vec<f64>,
    pub nrmse_mean: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Which start produced the result (0 is the unperturbed guess).
    pub best_start: usize,
    pub note: String,
}

impl FitResult {
    /// `key: value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            let _ = writeln!(s, "{n}: {v:.6e}");
        }
        let _ = writeln!(s, "objective: {:.6e}", self.objective);
        let per: Vec<String> = self.nrmse_per_pendulum.iter().map(|x| format!("{x:.4}")).collect();
        let _ = writeln!(s, "nrmse_per_pendulum: {}", per.join(" "));
        let _ = writeln!(s, "nrmse_mean: {:.4}", self.nrmse_mean);
        let _ = writeln!(s, "nrmse_normalization: peak-to-peak range of the measured trace");
        let _ = writeln!(s, "evaluations: {}", self.evaluations);
        let _ = writeln!(s, "converged: {}", self.converged);
        let _ = writeln!(s, "best_start: {}", self.best_start);
        if !self.note.is_empty() {
            let _ = writeln!(s, "note: {}", self.note);
        }
        s
    }

    pub fn csv_header(&self) -> String {
        let mut cols = self.names.clone();
        cols.extend(["objective", "nrmse_mean", "evaluations", "converged"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.values.iter().map(|v| format!("{v:.10e}")).collect();
        cols.push(format!("{:.10e}", self.objective));
        cols.push(format!("{:.10e}", self.nrmse_mean));
        cols.push(self.evaluations.to_string());
        cols.push(self.converged.to_string());
        cols.join(",")
    }
}

/// Sum of squared angle errors over all datasets.
pub fn objective(params: &ChainParams, data: &[Dataset], dt: f64) -> f64 {
    let mut total = 0.0;
    for d in data {
        match simulate_dataset(params, d, dt) {
            Ok(sim) => {
                for (s, m) in sim.iter().zip(&d.outputs) {
                    total += s.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            }
            Err(_) => return f64::INFINITY,
        }
    }
    total
}

/// Multi-start bounded simplex fit.
pub fn fit(data: &[Dataset], spec: &FitSpec) -> Result<FitResult> {
    spec.validate()?;
    spec.params.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no datasets".into()));
    }
    for d in data {
        d.validate()?;
        if d.n != spec.params.n {
            return Err(Error::Data(format!("dataset has N = {}, fit expects {}", d.n, spec.params.n)));
        }
    }

    // The search runs on log-parameters so the box spans decades evenly.
    let lower: Vec<f64> = spec.free.iter().map(|f| f.lower.ln()).collect();
    let upper: Vec<f64> = spec.free.iter().map(|f| f.upper.ln()).collect();
    let guess: Vec<f64> = spec.free.iter().map(|f| f.guess.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let starts: Vec<Vec<f64>> = (0..spec.starts)
        .map(|s| {
            guess
                .iter()
                .zip(lower.iter().zip(&upper))
                .map(|(&g, (&lo, &hi))| {
                    let shift = if s == 0 || spec.jitter == 0.0 { 0.0 } else { rng.random_range(-spec.jitter..=spec.jitter) };
                    (g + shift).clamp(lo, hi)
                })
                .collect()
        })
        .collect();

    let cost = |u: &[f64]| {
        let values: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        objective(&spec.apply(&values), data, spec.dt)
    };

    let f_guess = cost(&guess);
    let flat = spec.free.iter().enumerate().all(|(i, _)| {
        let mut u = guess.clone();
        u[i] += 0.1f64.ln_1p();
        let f = cost(&u);
        (f - f_guess).abs() <= 1e-12 * (1.0 + f_guess.abs())
    });

    let opts = SimplexOptions { max_evals: spec.budget / spec.starts, f_tol: 1e-10, x_tol: 1e-6, initial_step: 0.05 };
    let runs: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .iter()
            .map(|x0| scope.spawn(|| minimize(cost, x0, &lower, &upper, &opts)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit worker panicked")).collect()
    });
    let evaluations = runs.iter().map(|r| r.evals).sum::<usize>() + 1 + spec.free.len();
    let (best_start, best) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f))
        .expect("at least one start");

    let values: Vec<f64> = best.x.iter().map(|x| x.exp()).collect();
    let params = spec.apply(&values);
    let sims = data.iter().map(|d| simulate_dataset(&params, d, spec.dt)).collect::<Result<Vec<_>>>()?;
    let (per, mean) = chain_nrmse(&sims, data)?;

    let at_bound: Vec<&str> = spec
        .free
        .iter()
        .zip(&best.x)
        .zip(lower.iter().zip(&upper))
        .filter(|((_, &x), (&lo, &hi))| x <= lo + 1e-9 || x >= hi - 1e-9)
        .map(|((f, _), _)| f.name.as_str())
        .collect();
    let mut note = String::new();
    if flat {
        note.push_str("objective does not respond to the parameters; data are not informative");
    }
    if !at_bound.is_empty() {
        if !note.is_empty() {
            note.push_str("; ");
        }
        note.push_str(&format!("stopped on a bound: {}", at_bound.join(", ")));
    }

    Ok(FitResult {
        names: spec.free.iter().map(|f| f.name.as_str().to_string()).collect(),
        values,
        params,
        objective: best.f,
        nrmse_per_pendulum: per,
        nrmse_mean: mean,
        evaluations,
        converged: best.converged && !flat,
        best_start,
        note,
    })
}

/// Current values of the free parameters in `params`.
pub fn free_values(spec: &FitSpec, params: &ChainParams) -> Vec<f64> {
    spec.free.iter().map(|f| f.name.get(params)).collect()
}
