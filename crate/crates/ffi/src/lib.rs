//! C interface to the pendulum-chain simulator.
//!
//! Every function returns an [`FkStatus`]; on failure the message is kept per
//! thread and can be copied out with [`fk_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fkchain::model::{build_laplacian, error_dynamics_jacobian, total_energy};
use fkchain::scenario::{load_scenario, run_to_dir};
use fkchain::sim::Rk4;
use fkchain::wave::{esc_step, EscConfig, EscState};
use fkchain::{Boundary, ChainParams, ChainState, Error, MotorCommand, PendulumState};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Diverged = 3,
    Infeasible = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

pub const FK_BOUNDARY_BOTH: u32 = 0;
pub const FK_BOUNDARY_MOTOR1_ONLY: u32 = 1;
pub const FK_BOUNDARY_FREE: u32 = 2;

/// Physical constants; `boundary` is one of the `FK_BOUNDARY_*` values.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkParams {
    pub n: usize,
    pub inertia: f64,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub k: f64,
    pub b: f64,
    pub gamma: f64,
    pub boundary: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FkMotorCommand {
    pub phi_m1: f64,
    pub omega_m1: f64,
    pub phi_m2: f64,
    pub omega_m2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkEscConfig {
    pub window: usize,
    pub gain: f64,
    pub dither_freq: f64,
    pub dither_amplitude: f64,
    pub hpf_cutoff: f64,
    pub sample_period: f64,
    pub lambda_max: f64,
    pub demod_phase: f64,
}

/// Opaque simulation handle.
pub struct FkChain {
    params: ChainParams,
    state: ChainState,
    rk: Rk4,
}

/// Opaque extremum seeking loop.
pub struct FkEsc {
    cfg: EscConfig,
    state: EscState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> FkStatus {
    match e {
        Error::Divergence { .. } => FkStatus::Diverged,
        Error::Infeasible(_) | Error::Extrapolation { .. } => FkStatus::Infeasible,
        Error::Data(_) => FkStatus::Io,
        _ => FkStatus::InvalidArgument,
    }
}

fn fail(status: FkStatus, msg: impl Into<String>) -> FkStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), (FkStatus, String)>) -> FkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FkStatus::Ok
        }
        Ok(Err((s, msg))) => fail(s, msg),
        Err(_) => fail(FkStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> (FkStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (FkStatus, String) {
    (FkStatus::NullPointer, format!("{name} is null"))
}

fn to_params(p: &FkParams) -> Result<ChainParams, (FkStatus, String)> {
    let boundary = match p.boundary {
        FK_BOUNDARY_BOTH => Boundary::Both,
        FK_BOUNDARY_MOTOR1_ONLY => Boundary::Motor1Only,
        FK_BOUNDARY_FREE => Boundary::Free,
        other => return Err((FkStatus::InvalidArgument, format!("unknown boundary {other}"))),
    };
    let params = ChainParams {
        n: p.n,
        inertia: p.inertia,
        mass: p.mass,
        length: p.length,
        gravity: p.gravity,
        stiffness: p.k,
        relative_damping: p.b,
        absolute_damping: p.gamma,
        boundary,
        ..ChainParams::identified(p.n)
    };
    params.validate().map_err(lift)?;
    Ok(params)
}

/// Writes the identified laboratory parameters for a chain of `n` pendulums.
#[no_mangle]
pub unsafe extern "C" fn fk_params_identified(n: usize, out: *mut FkParams) -> FkStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let p = ChainParams::identified(n);
        *out = FkParams {
            n,
            inertia: p.inertia,
            mass: p.mass,
            length: p.length,
            gravity: p.gravity,
            k: p.stiffness,
            b: p.relative_damping,
            gamma: p.absolute_damping,
            boundary: FK_BOUNDARY_BOTH,
        };
        Ok(())
    })
}

/// Creates a chain at rest. Release it with [`fk_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn fk_chain_new(params: *const FkParams, out: *mut *mut FkChain) -> FkStatus {
    guard(|| {
        let p = unsafe { params.as_ref() }.ok_or_else(|| null("params"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let params = to_params(p)?;
        let chain = FkChain { params, state: ChainState::at_rest(params.n), rk: Rk4::new(params.n) };
        *out = Box::into_raw(Box::new(chain));
        Ok(())
    })
}

/// Releases a chain; null is accepted.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_free(chain: *mut FkChain) {
    if !chain.is_null() {
        drop(unsafe { Box::from_raw(chain) });
    }
}

/// Sets time, angles and velocities; both arrays hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_set_state(
    chain: *mut FkChain,
    time: f64,
    angles: *const f64,
    velocities: *const f64,
    n: usize,
) -> FkStatus {
    guard(|| {
        let c = unsafe { chain.as_mut() }.ok_or_else(|| null("chain"))?;
        if angles.is_null() || velocities.is_null() {
            return Err(null("angles/velocities"));
        }
        if n != c.params.n {
            return Err((FkStatus::InvalidArgument, format!("expected {} values, got {n}", c.params.n)));
        }
        let (a, v) = unsafe { (std::slice::from_raw_parts(angles, n), std::slice::from_raw_parts(velocities, n)) };
        let state = ChainState { time, states: a.iter().zip(v).map(|(&x, &y)| PendulumState::new(x, y)).collect() };
        state.check(&c.params).map_err(lift)?;
        if state.states.iter().any(|s| !s.is_finite()) || !time.is_finite() {
            return Err((FkStatus::InvalidArgument, "state must be finite".into()));
        }
        c.state = state;
        Ok(())
    })
}

/// Copies the current state; `time` may be null.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_get_state(
    chain: *const FkChain,
    time: *mut f64,
    angles: *mut f64,
    velocities: *mut f64,
    n: usize,
) -> FkStatus {
    guard(|| {
        let c = unsafe { chain.as_ref() }.ok_or_else(|| null("chain"))?;
        if angles.is_null() || velocities.is_null() {
            return Err(null("angles/velocities"));
        }
        if n < c.params.n {
            return Err((FkStatus::BufferTooSmall, format!("need room for {} values", c.params.n)));
        }
        let (a, v) =
            unsafe { (std::slice::from_raw_parts_mut(angles, n), std::slice::from_raw_parts_mut(velocities, n)) };
        for (i, s) in c.state.states.iter().enumerate() {
            a[i] = s.angle;
            v[i] = s.velocity;
        }
        if let Some(t) = unsafe { time.as_mut() } {
            *t = c.state.time;
        }
        Ok(())
    })
}

/// Advances `steps` RK4 steps of size `dt` with the motors held at `cmd`.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_step(
    chain: *mut FkChain,
    cmd: *const FkMotorCommand,
    dt: f64,
    steps: usize,
) -> FkStatus {
    guard(|| {
        let c = unsafe { chain.as_mut() }.ok_or_else(|| null("chain"))?;
        let m = unsafe { cmd.as_ref() }.ok_or_else(|| null("cmd"))?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err((FkStatus::InvalidArgument, format!("dt must be > 0, got {dt}")));
        }
        let cmd = MotorCommand { phi_m1: m.phi_m1, omega_m1: m.omega_m1, phi_m2: m.phi_m2, omega_m2: m.omega_m2 };
        for _ in 0..steps {
            c.rk.advance(&c.params, &mut c.state, &cmd, dt).map_err(lift)?;
        }
        Ok(())
    })
}

/// Total mechanical energy of the chain (J).
#[no_mangle]
pub unsafe extern "C" fn fk_chain_energy(chain: *const FkChain, out: *mut f64) -> FkStatus {
    guard(|| {
        let c = unsafe { chain.as_ref() }.ok_or_else(|| null("chain"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = total_energy(&c.params, &c.state);
        Ok(())
    })
}

/// Path-graph Laplacian of size `n`, row-major into `out` (`len >= n*n`).
#[no_mangle]
pub unsafe extern "C" fn fk_laplacian(n: usize, out: *mut f64, len: usize) -> FkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let l = build_laplacian(n).map_err(lift)?;
        if len < n * n {
            return Err((FkStatus::BufferTooSmall, format!("need {} values", n * n)));
        }
        let buf = unsafe { std::slice::from_raw_parts_mut(out, n * n) };
        for i in 0..n {
            for j in 0..n {
                buf[i * n + j] = l[(i, j)];
            }
        }
        Ok(())
    })
}

/// Largest real part among the eigenvalues of the synchronization error dynamics.
#[no_mangle]
pub unsafe extern "C" fn fk_jacobian_max_real_part(params: *const FkParams, out: *mut f64) -> FkStatus {
    guard(|| {
        let p = unsafe { params.as_ref() }.ok_or_else(|| null("params"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = error_dynamics_jacobian(&to_params(p)?).map_err(lift)?.max_real_part();
        Ok(())
    })
}

/// Default extremum seeking settings.
#[no_mangle]
pub unsafe extern "C" fn fk_esc_default_config(out: *mut FkEscConfig) -> FkStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let c = EscConfig::default();
        *out = FkEscConfig {
            window: c.window,
            gain: c.gain,
            dither_freq: c.dither_freq,
            dither_amplitude: c.dither_amplitude,
            hpf_cutoff: c.hpf_cutoff,
            sample_period: c.sample_period,
            lambda_max: c.lambda_max,
            demod_phase: c.demod_phase,
        };
        Ok(())
    })
}

/// Creates an extremum seeking loop starting at gain `lambda0`.
#[no_mangle]
pub unsafe extern "C" fn fk_esc_new(cfg: *const FkEscConfig, lambda0: f64, out: *mut *mut FkEsc) -> FkStatus {
    guard(|| {
        let c = unsafe { cfg.as_ref() }.ok_or_else(|| null("cfg"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let cfg = EscConfig {
            window: c.window,
            gain: c.gain,
            dither_freq: c.dither_freq,
            dither_amplitude: c.dither_amplitude,
            hpf_cutoff: c.hpf_cutoff,
            sample_period: c.sample_period,
            lambda_max: c.lambda_max,
            demod_phase: c.demod_phase,
        };
        cfg.validate().map_err(lift)?;
        *out = Box::into_raw(Box::new(FkEsc { cfg, state: EscState::new(lambda0) }));
        Ok(())
    })
}

/// Feeds one value of the performance index and returns the new gain.
#[no_mangle]
pub unsafe extern "C" fn fk_esc_step(esc: *mut FkEsc, index: f64, t: f64, lambda: *mut f64) -> FkStatus {
    guard(|| {
        let e = unsafe { esc.as_mut() }.ok_or_else(|| null("esc"))?;
        let out = unsafe { lambda.as_mut() }.ok_or_else(|| null("lambda"))?;
        *out = esc_step(&e.cfg, &mut e.state, index, t);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fk_esc_free(esc: *mut FkEsc) {
    if !esc.is_null() {
        drop(unsafe { Box::from_raw(esc) });
    }
}

/// Runs a scenario file and writes its CSV and summary into `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn fk_run_scenario(path: *const c_char, out_dir: *const c_char) -> FkStatus {
    guard(|| {
        if path.is_null() || out_dir.is_null() {
            return Err(null("path/out_dir"));
        }
        let (p, o) = unsafe { (CStr::from_ptr(path), CStr::from_ptr(out_dir)) };
        let (p, o) = match (p.to_str(), o.to_str()) {
            (Ok(p), Ok(o)) => (p, o),
            _ => return Err((FkStatus::InvalidArgument, "paths must be UTF-8".into())),
        };
        let s = load_scenario(Path::new(p)).map_err(lift)?;
        run_to_dir(&s, Path::new(o)).map_err(lift)?;
        Ok(())
    })
}

/// Copies the calling thread's last error message (NUL-terminated, possibly
/// truncated) into `buf` and returns the full message length in bytes.
#[no_mangle]
pub unsafe extern "C" fn fk_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}
