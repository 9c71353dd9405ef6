//! Experiment descriptions read from TOML and the runner behind the CLI.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{Sine, Triangle};
use crate::model::{ChainParams, ChainState, PendulumState};
use crate::sim::{
    run_simulation, Controller, Demand, Experiment, FrameHistory, IntegratorConfig, MotorModel, NullController,
    OpenLoop, SensorConfig, Signal, TrajectoryLog,
};
use crate::sync::{
    constant_speed_reference, desync_criterion, generate_sync_reference, initial_speed_for, mean_speeds,
    ReferenceTrajectory, ReplayController,
};
use crate::wave::{estimate_travel_times, select_delay_params, EscConfig, WaveControlConfig, WaveController, WaveLaw};

/// Trajectory of motor 2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    None,
    Triangle { amplitude: f64, omega: f64 },
    Sine { amplitude: f64, omega: f64 },
}

/// Chain state at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Rest,
    /// Every pendulum on the reference of the first replay stage.
    OnReference,
    Uniform { angle: f64, velocity: f64 },
}

/// Wave law settings; `delta` and `t_tilde` are derived from the pulse
/// travel times when left out, and `t_d` defaults to the sensor latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    pub i_star: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub esc: Option<EscConfig>,
}

fn one() -> f64 {
    1.0
}

fn pi() -> f64 {
    PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// Motor 1 frozen at zero.
    None,
    /// Open-loop `a sin(ω t)` on motor 1.
    Excitation { amplitude: f64, omega: f64 },
    NaiveWave { i_star: usize },
    CompensatedWave(WaveSpec),
    CompensatedWaveEsc(WaveSpec),
    /// Replay of the undamped single-pendulum rotation. Give either the
    /// initial speed or the mean speed to aim for.
    SyncReplay {
        #[serde(default = "pi")]
        initial_angle: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_speed: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega_ref: Option<f64>,
    },
    ConstantSpeed { omega_ref: f64 },
}

impl ControllerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::None => "none",
            ControllerSpec::Excitation { .. } => "excitation",
            ControllerSpec::NaiveWave { .. } => "naive-wave",
            ControllerSpec::CompensatedWave(_) => "compensated-wave",
            ControllerSpec::CompensatedWaveEsc(_) => "compensated-wave-esc",
            ControllerSpec::SyncReplay { .. } => "sync-replay",
            ControllerSpec::ConstantSpeed { .. } => "constant-speed",
        }
    }

    fn target(&self) -> Option<usize> {
        match self {
            ControllerSpec::NaiveWave { i_star } => Some(*i_star),
            ControllerSpec::CompensatedWave(w) | ControllerSpec::CompensatedWaveEsc(w) => Some(w.i_star),
            _ => None,
        }
    }

    fn is_replay(&self) -> bool {
        matches!(self, ControllerSpec::SyncReplay { .. } | ControllerSpec::ConstantSpeed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub start: f64,
    pub controller: ControllerSpec,
}

fn five() -> f64 {
    5.0
}

/// What the run summary measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySpec {
    /// Pendulum whose amplitude is reported (1-based); defaults to the wave target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Trailing part of each stage used for the steady amplitude (s).
    #[serde(default = "five")]
    pub settle_window: f64,
    /// Trailing part of the run used for the mean speeds (s).
    #[serde(default = "five")]
    pub speed_window: f64,
    /// Upper limit of the desynchronization integral; the whole run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desync_horizon: Option<f64>,
}

impl Default for SummarySpec {
    fn default() -> Self {
        Self { target: None, settle_window: 5.0, speed_window: 5.0, desync_horizon: None }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    #[serde(default = "yes")]
    pub quantize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub params: ChainParams,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub motor: MotorModel,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub summary: SummarySpec,
    #[serde(default, rename = "stage")]
    pub stages: Vec<Stage>,
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = toml::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::InvalidParameter(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidParameter("name must not be empty".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        self.params.validate()?;
        self.sensor.validate()?;
        self.motor.validate()?;
        self.integrator.substeps(self.sensor.sample_period)?;
        for (i, st) in self.stages.iter().enumerate() {
            if !(st.start >= 0.0 && st.start <= self.duration) {
                return Err(Error::InvalidParameter(format!(
                    "stage {} starts at {} s, outside [0, {}]",
                    i + 1,
                    st.start,
                    self.duration
                )));
            }
            if i > 0 && st.start <= self.stages[i - 1].start {
                return Err(Error::InvalidParameter(format!(
                    "stage start times must increase strictly (stage {} at {} s follows {} s)",
                    i + 1,
                    st.start,
                    self.stages[i - 1].start
                )));
            }
            self.validate_controller(&st.controller).map_err(|e| match e {
                Error::Infeasible(m) => Error::Infeasible(format!("stage {}: {m}", i + 1)),
                other => Error::InvalidParameter(format!("stage {}: {other}", i + 1)),
            })?;
        }
        if let DisturbanceSpec::Triangle { amplitude, omega } | DisturbanceSpec::Sine { amplitude, omega } =
            self.disturbance
        {
            if !(amplitude.is_finite() && omega.is_finite()) {
                return Err(Error::InvalidParameter("disturbance values must be finite".into()));
            }
        }
        if self.initial == InitialSpec::OnReference && !self.stages.iter().any(|s| s.controller.is_replay()) {
            return Err(Error::InvalidParameter("initial = on-reference needs a sync-replay or constant-speed stage".into()));
        }
        if let Some(t) = self.summary.target {
            if t == 0 || t > self.params.n {
                return Err(Error::InvalidParameter(format!("summary target {t} is not a pendulum")));
            }
        }
        if !(self.summary.settle_window > 0.0 && self.summary.speed_window > 0.0) {
            return Err(Error::InvalidParameter("summary windows must be > 0".into()));
        }
        Ok(())
    }

    fn validate_controller(&self, c: &ControllerSpec) -> Result<()> {
        let n = self.params.n;
        match c {
            ControllerSpec::None => Ok(()),
            ControllerSpec::Excitation { amplitude, omega } => {
                if amplitude.is_finite() && omega.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("excitation values must be finite".into()))
                }
            }
            ControllerSpec::NaiveWave { i_star } => WaveControlConfig::naive(*i_star).validate(n),
            ControllerSpec::CompensatedWave(w) | ControllerSpec::CompensatedWaveEsc(w) => {
                if matches!(c, ControllerSpec::CompensatedWave(_)) && w.esc.is_some() {
                    return Err(Error::InvalidParameter("esc settings need kind = \"compensated-wave-esc\"".into()));
                }
                if w.delta.is_some() != w.t_tilde.is_some() {
                    return Err(Error::InvalidParameter("give both delta and t_tilde, or neither".into()));
                }
                let cfg = WaveControlConfig {
                    i_star: w.i_star,
                    delta: w.delta.unwrap_or(0),
                    t_tilde: w.t_tilde.unwrap_or(0.0),
                    lambda: w.lambda,
                    t_d: w.t_d.unwrap_or(0.0),
                };
                cfg.validate(n)?;
                if let Some(esc) = &w.esc {
                    esc.validate()?;
                }
                Ok(())
            }
            ControllerSpec::SyncReplay { initial_angle, initial_speed, omega_ref } => {
                if initial_speed.is_some() && omega_ref.is_some() {
                    return Err(Error::InvalidParameter("give initial_speed or omega_ref, not both".into()));
                }
                if !initial_angle.is_finite() || omega_ref.is_some_and(|w| w == 0.0 || !w.is_finite()) {
                    return Err(Error::InvalidParameter("sync-replay values must be finite, omega_ref nonzero".into()));
                }
                Ok(())
            }
            ControllerSpec::ConstantSpeed { omega_ref } => {
                if omega_ref.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("omega_ref must be finite".into()))
                }
            }
        }
    }

    /// Pendulum whose amplitude the summary reports.
    pub fn target(&self) -> Option<usize> {
        self.summary.target.or_else(|| self.stages.iter().find_map(|s| s.controller.target()))
    }

    fn disturbance_signal(&self) -> Option<Arc<dyn Signal>> {
        match self.disturbance {
            DisturbanceSpec::None => None,
            DisturbanceSpec::Triangle { amplitude, omega } => Some(Arc::new(Triangle { amplitude, omega })),
            DisturbanceSpec::Sine { amplitude, omega } => Some(Arc::new(Sine { amplitude, omega })),
        }
    }
}

/// Values filled in while building controllers, reported with the config echo.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub latency: f64,
    /// Per stage: the fully resolved wave settings, if any.
    pub wave: Vec<Option<WaveControlConfig>>,
    /// Per stage: initial state and mean speed of a replayed reference.
    pub reference: Vec<Option<(f64, f64, f64)>>,
    pub travel_times: Option<Vec<f64>>,
}

/// Switches between controllers at the stage start times.
pub struct StagedController {
    stages: Vec<(f64, Box<dyn Controller>)>,
    columns: Vec<String>,
    active: Option<usize>,
}

impl StagedController {
    pub fn new(stages: Vec<(f64, Box<dyn Controller>)>) -> Self {
        let mut columns = vec!["stage".to_string()];
        for (_, c) in &stages {
            for name in c.diagnostic_names() {
                if !columns.contains(&name) {
                    columns.push(name);
                }
            }
        }
        Self { stages, columns, active: None }
    }
}

impl Controller for StagedController {
    fn update(&mut self, t: f64, frames: &FrameHistory) -> Result<Demand> {
        self.active = self.stages.iter().rposition(|(start, _)| *start <= t + 1e-9);
        match self.active {
            Some(i) => self.stages[i].1.update(t, frames),
            None => Ok(Demand::Position(0.0)),
        }
    }

    fn diagnostic_names(&self) -> Vec<String> {
        self.columns.clone()
    }

    fn diagnostics(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.columns.len()];
        if let Some(i) = self.active {
            out[0] = (i + 1) as f64;
            let c = &self.stages[i].1;
            for (name, v) in c.diagnostic_names().iter().zip(c.diagnostics()) {
                if let Some(j) = self.columns.iter().position(|x| x == name) {
                    out[j] = v;
                }
            }
        }
        out
    }
}

fn build_reference(s: &Scenario, c: &ControllerSpec) -> Result<Option<ReferenceTrajectory>> {
    let ts = s.sensor.sample_period;
    let horizon = s.duration + ts;
    match *c {
        ControllerSpec::SyncReplay { initial_angle, initial_speed, omega_ref } => {
            let speed = match (initial_speed, omega_ref) {
                (Some(v), _) => v,
                (None, Some(w)) => initial_speed_for(&s.params, initial_angle, w)?,
                (None, None) => 3.0,
            };
            let r = generate_sync_reference(&s.params, PendulumState::new(initial_angle, speed), horizon, ts)?;
            Ok(Some(r))
        }
        ControllerSpec::ConstantSpeed { omega_ref } => Ok(Some(constant_speed_reference(omega_ref, horizon, ts)?)),
        _ => Ok(None),
    }
}

/// Builds the experiment and its staged controller.
pub fn build(s: &Scenario) -> Result<(Experiment, StagedController, Resolved)> {
    s.validate()?;
    let latency = s.sensor.latency();
    let mut resolved = Resolved { latency, ..Default::default() };
    let mut travel: Option<Vec<f64>> = None;
    let mut stages: Vec<(f64, Box<dyn Controller>)> = Vec::new();
    let mut first_reference: Option<ReferenceTrajectory> = None;

    for st in &s.stages {
        let mut wave_cfg = None;
        let mut ref_info = None;
        let ctrl: Box<dyn Controller> = match st.controller {
            ControllerSpec::None => Box::new(NullController),
            ControllerSpec::Excitation { amplitude, omega } => Box::new(OpenLoop(Arc::new(Sine { amplitude, omega }))),
            ControllerSpec::NaiveWave { i_star } => Box::new(WaveController::new(WaveLaw::Naive { i_star }, s.params.n)?),
            ControllerSpec::CompensatedWave(w) | ControllerSpec::CompensatedWaveEsc(w) => {
                let t_d = w.t_d.unwrap_or(latency);
                let (delta, t_tilde) = match (w.delta, w.t_tilde) {
                    (Some(d), Some(tt)) => (d, tt),
                    _ => {
                        if travel.is_none() {
                            travel = Some(estimate_travel_times(&s.params)?);
                        }
                        select_delay_params(travel.as_deref().expect("just set"), w.i_star, t_d, s.params.n)?
                    }
                };
                let cfg = WaveControlConfig { i_star: w.i_star, delta, t_tilde, lambda: w.lambda, t_d };
                wave_cfg = Some(cfg);
                let law = if matches!(st.controller, ControllerSpec::CompensatedWaveEsc(_)) {
                    let esc = EscConfig { sample_period: s.sensor.sample_period, ..w.esc.unwrap_or_default() };
                    WaveLaw::Adaptive(cfg, esc)
                } else {
                    WaveLaw::Compensated(cfg)
                };
                Box::new(WaveController::new(law, s.params.n)?)
            }
            ControllerSpec::SyncReplay { .. } | ControllerSpec::ConstantSpeed { .. } => {
                let r = build_reference(s, &st.controller)?.expect("replay stages have a reference");
                let x0 = r.samples[0];
                ref_info = Some((x0.angle, x0.velocity, r.mean_speed()));
                if first_reference.is_none() {
                    first_reference = Some(r.clone());
                }
                Box::new(ReplayController::new(r))
            }
        };
        resolved.wave.push(wave_cfg);
        resolved.reference.push(ref_info);
        stages.push((st.start, ctrl));
    }
    resolved.travel_times = travel;

    let n = s.params.n;
    let initial = match s.initial {
        InitialSpec::Rest => ChainState::at_rest(n),
        InitialSpec::Uniform { angle, velocity } => ChainState::uniform(n, PendulumState::new(angle, velocity)),
        InitialSpec::OnReference => {
            let r = first_reference.as_ref().ok_or_else(|| Error::InvalidParameter("no reference to start on".into()))?;
            crate::sync::initial_on_reference(n, r)
        }
    };
    let exp = Experiment {
        params: s.params,
        integrator: s.integrator,
        sensor: s.sensor,
        motor: s.motor,
        duration: s.duration,
        initial,
        disturbance: s.disturbance_signal(),
        quantize: s.quantize,
    };
    Ok((exp, StagedController::new(stages), resolved))
}

/// Effective configuration with every default spelled out.
pub fn effective_config(s: &Scenario, resolved: &Resolved) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# effective configuration of scenario '{}'", s.name);
    let _ = writeln!(out, "# feedback latency t_d = {} s", resolved.latency);
    for (i, w) in resolved.wave.iter().enumerate() {
        if let Some(w) = w {
            let _ = writeln!(
                out,
                "# stage {}: mirrors pendulum {} (delta = {}, t_tilde = {:.6} s, t_d = {} s)",
                i + 1,
                w.source(),
                w.delta,
                w.t_tilde,
                w.t_d
            );
        }
    }
    for (i, r) in resolved.reference.iter().enumerate() {
        if let Some((a, v, m)) = r {
            let _ = writeln!(out, "# stage {}: reference starts at ({a:.6}, {v:.6}), mean speed {m:.6} rad/s", i + 1);
        }
    }
    out.push_str(&s.to_toml());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub controller: String,
    /// Largest `|φ_target|` over the stage (rad).
    pub max_abs: Option<f64>,
    /// Largest `|φ_target|` over the trailing settle window (rad).
    pub steady_max_abs: Option<f64>,
    pub steady_max_abs_deg: Option<f64>,
    /// Gain at the end of the stage, when the controller has one.
    pub final_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub n: usize,
    pub duration: f64,
    pub target: Option<usize>,
    pub stages: Vec<StageSummary>,
    pub desync_criterion: Option<f64>,
    pub desync_horizon: Option<f64>,
    pub mean_speeds: Option<Vec<f64>>,
    pub nrmse: Option<f64>,
    pub wall_clock_s: f64,
    pub csv: Option<String>,
}

/// Stage rows of a log, including a leading uncontrolled stretch.
fn stage_bounds(s: &Scenario) -> Vec<(usize, f64, f64, String)> {
    let mut out = Vec::new();
    let first = s.stages.first().map_or(s.duration, |st| st.start);
    if first > 0.0 || s.stages.is_empty() {
        out.push((0, 0.0, first, "none".to_string()));
    }
    for (i, st) in s.stages.iter().enumerate() {
        let end = s.stages.get(i + 1).map_or(s.duration, |n| n.start);
        out.push((i + 1, st.start, end, st.controller.label().to_string()));
    }
    out
}

pub fn summarize(s: &Scenario, log: &TrajectoryLog, wall_clock_s: f64, csv: Option<String>) -> Result<RunSummary> {
    let target = s.target();
    let lambda = log.extra("lambda");
    let mut stages = Vec::new();
    for (index, start, end, controller) in stage_bounds(s) {
        let eps = 1e-9;
        // The stage's own rows; the last stage includes the final instant.
        let in_stage = |t: f64| t >= start - eps && (t < end - eps || (end >= s.duration - eps && t <= end + eps));
        let rows: Vec<usize> = (0..log.rows.len()).filter(|&k| in_stage(log.rows[k].t)).collect();
        let (max_abs, steady) = match target {
            Some(i) if !rows.is_empty() => {
                let amp = |k: usize| log.rows[k].states[i - 1].angle.abs();
                let all = rows.iter().map(|&k| amp(k)).fold(0.0, f64::max);
                let from = end - s.summary.settle_window;
                let steady = rows.iter().filter(|&&k| log.rows[k].t >= from - eps).map(|&k| amp(k)).fold(0.0, f64::max);
                (Some(all), Some(steady))
            }
            _ => (None, None),
        };
        let final_lambda = match (&lambda, rows.last()) {
            (Some(l), Some(&k)) if l[k] != 0.0 => Some(l[k]),
            _ => None,
        };
        stages.push(StageSummary {
            index,
            start,
            end,
            controller,
            max_abs,
            steady_max_abs: steady,
            steady_max_abs_deg: steady.map(f64::to_degrees),
            final_lambda,
        });
    }

    let rotating = s.stages.iter().any(|st| st.controller.is_replay());
    let horizon = s.summary.desync_horizon.map(|h| h.min(s.duration)).unwrap_or(s.duration);
    let desync = if rotating { Some(desync_criterion(log, horizon)?) } else { None };
    let speeds = if rotating {
        Some(mean_speeds(log, (s.duration - s.summary.speed_window).max(0.0), s.duration)?)
    } else {
        None
    };
    Ok(RunSummary {
        name: s.name.clone(),
        n: s.params.n,
        duration: s.duration,
        target,
        stages,
        desync_criterion: desync,
        desync_horizon: rotating.then_some(horizon),
        mean_speeds: speeds,
        nrmse: None,
        wall_clock_s,
        csv,
    })
}

/// Runs a scenario and returns its log and summary.
pub fn run(s: &Scenario) -> Result<(TrajectoryLog, RunSummary)> {
    let clock = Instant::now();
    let (exp, mut ctrl, _) = build(s)?;
    let log = run_simulation(&exp, &mut ctrl)?;
    let summary = summarize(s, &log, clock.elapsed().as_secs_f64(), None)?;
    Ok((log, summary))
}

/// Files written by [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub effective: PathBuf,
    pub run: RunSummary,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Runs a scenario and writes `<name>.csv`, `<name>.summary.json` and
/// `<name>.effective.toml` into `out_dir`.
pub fn run_to_dir(s: &Scenario, out_dir: &Path) -> Result<RunOutput> {
    let clock = Instant::now();
    let (exp, mut ctrl, resolved) = build(s)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let stem = s.output.clone().unwrap_or_else(|| format!("{}.csv", s.name));
    let csv = out_dir.join(&stem);
    let base = csv.with_extension("");
    let effective = base.with_extension("effective.toml");
    std::fs::write(&effective, effective_config(s, &resolved)).map_err(|e| io_err(&effective, e))?;

    let log = run_simulation(&exp, &mut ctrl)?;
    let file = std::fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
    log.write_csv(std::io::BufWriter::new(file)).map_err(|e| io_err(&csv, e))?;
    let summary = summarize(s, &log, clock.elapsed().as_secs_f64(), Some(csv.display().to_string()))?;
    let summary_path = base.with_extension("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json).map_err(|e| io_err(&summary_path, e))?;
    Ok(RunOutput { csv, summary: summary_path, effective, run: summary })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Aligned comparison table of one or more run summaries.
pub fn report(summaries: &[RunSummary]) -> String {
    let mut rows: Vec<Vec<String>> = vec![[
        "run", "stage", "start_s", "controller", "steady_max_deg", "reduction_%", "lambda", "desync", "desync_reduction_%",
        "mean_speed",
    ]
    .map(String::from)
    .to_vec()];
    let worst = summaries.iter().filter_map(|s| s.desync_criterion).fold(f64::NEG_INFINITY, f64::max);
    for s in summaries {
        let baseline = s.stages.first().and_then(|st| st.steady_max_abs);
        let desync_red = s.desync_criterion.filter(|_| worst > 0.0).map(|c| 100.0 * (1.0 - c / worst));
        let mean_speed = s.mean_speeds.as_ref().map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64);
        for (j, st) in s.stages.iter().enumerate() {
            let red = match (baseline, st.steady_max_abs) {
                (Some(b), Some(v)) if b > 0.0 => Some(100.0 * (1.0 - v / b)),
                _ => None,
            };
            let first = j == 0;
            rows.push(vec![
                s.name.clone(),
                st.index.to_string(),
                format!("{:.2}", st.start),
                st.controller.clone(),
                fmt_opt(st.steady_max_abs_deg, 2),
                fmt_opt(red, 1),
                fmt_opt(st.final_lambda, 3),
                if first { fmt_opt(s.desync_criterion, 3) } else { String::new() },
                if first { fmt_opt(desync_red, 1) } else { String::new() },
                if first { fmt_opt(mean_speed, 3) } else { String::new() },
            ]);
        }
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::InvalidSize(_) | Error::StateLength { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::Infeasible(_) | Error::Extrapolation { .. } => 4,
        _ => 1,
    }
}

/// Reads summaries written by [`run_to_dir`].
pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Scenario files (`*.scenario`) in a directory, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    files.sort();
    Ok(files)
}
