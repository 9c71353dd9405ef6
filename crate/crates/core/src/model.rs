//! Physical model of the torsionally coupled pendulum chain.
//!
//! Each pendulum feels gravity, viscous bearing friction (`gamma`) and the
//! spring/damper links to its nearest neighbours (`k`, `b`). The two boundary
//! pendulums are additionally linked to stepper motors that act as position
//! controlled virtual pendulums. Angles are stored unwrapped.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which ends of the chain are linked to a motor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Motor 1 drives pendulum 1 and motor 2 drives pendulum N.
    #[default]
    Both,
    /// Only motor 1 is attached; pendulum N is a free end.
    Motor1Only,
    /// No motor springs; the chain evolves without external torque.
    Free,
}

impl Boundary {
    pub fn motor1_attached(self) -> bool {
        !matches!(self, Boundary::Free)
    }

    pub fn motor2_attached(self) -> bool {
        matches!(self, Boundary::Both)
    }
}

/// Physical constants of a homogeneous chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainParams {
    pub n: usize,
    /// Moment of inertia J (kg m^2).
    pub inertia: f64,
    /// Pendulum mass m (kg).
    pub mass: f64,
    /// Rod length l (m).
    pub length: f64,
    pub gravity: f64,
    /// Torsional spring constant k (torque per radian).
    #[serde(rename = "k")]
    pub stiffness: f64,
    /// Relative (inter-pendulum) dissipation b.
    #[serde(rename = "b")]
    pub relative_damping: f64,
    /// Absolute (bearing) dissipation gamma.
    #[serde(rename = "gamma")]
    pub absolute_damping: f64,
    /// Datasheet spring constant, informational only.
    #[serde(rename = "k_nominal")]
    pub nominal_stiffness: f64,
    pub boundary: Boundary,
}

pub const DEFAULT_GRAVITY: f64 = 9.81;

impl ChainParams {
    /// Parameters of the laboratory chain with identified spring and damping.
    pub fn identified(n: usize) -> Self {
        Self {
            n,
            inertia: 3.82e-4,
            mass: 0.017,
            length: 0.15,
            gravity: DEFAULT_GRAVITY,
            stiffness: 0.065,
            relative_damping: 1.70e-3,
            absolute_damping: 3.75e-4,
            nominal_stiffness: 0.054,
            boundary: Boundary::Both,
        }
    }

    /// Builds parameters with `J = m l^2` (massless rod).
    pub fn from_mass_length(
        n: usize,
        mass: f64,
        length: f64,
        stiffness: f64,
        relative_damping: f64,
        absolute_damping: f64,
    ) -> Self {
        Self {
            n,
            inertia: mass * length * length,
            mass,
            length,
            stiffness,
            relative_damping,
            absolute_damping,
            ..Self::identified(n)
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSize(format!("chain needs N >= 2, got {}", self.n)));
        }
        let positive = [
            ("inertia", self.inertia),
            ("mass", self.mass),
            ("length", self.length),
            ("gravity", self.gravity),
            ("k", self.stiffness),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("b", self.relative_damping), ("gamma", self.absolute_damping)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Gravity stiffness over inertia, `m g l / J` (rad/s^2).
    pub fn gravity_ratio(&self) -> f64 {
        self.mass * self.gravity * self.length / self.inertia
    }

    /// Small-oscillation angular frequency of one uncoupled pendulum.
    pub fn natural_frequency(&self) -> f64 {
        self.gravity_ratio().sqrt()
    }
}

impl Default for ChainParams {
    fn default() -> Self {
        Self::identified(20)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PendulumState {
    pub angle: f64,
    pub velocity: f64,
}

impl PendulumState {
    pub const fn new(angle: f64, velocity: f64) -> Self {
        Self { angle, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.angle.is_finite() && self.velocity.is_finite()
    }
}

/// Time derivative of a [`PendulumState`]: (angular velocity, angular acceleration).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateRate {
    pub angle: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainState {
    pub time: f64,
    pub states: Vec<PendulumState>,
}

impl ChainState {
    pub fn at_rest(n: usize) -> Self {
        Self { time: 0.0, states: vec![PendulumState::default(); n] }
    }

    pub fn uniform(n: usize, state: PendulumState) -> Self {
        Self { time: 0.0, states: vec![state; n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.angle)
    }

    pub fn velocities(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.velocity)
    }

    pub fn check(&self, params: &ChainParams) -> Result<()> {
        if self.states.len() != params.n {
            return Err(Error::StateLength { expected: params.n, got: self.states.len() });
        }
        Ok(())
    }

    /// Stacked vector `[phi_1, omega_1, ..., phi_N, omega_N]`.
    pub fn to_stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.states.len(),
            self.states.iter().flat_map(|s| [s.angle, s.velocity]),
        )
    }
}

/// Angles and speeds of the two boundary motors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorCommand {
    pub phi_m1: f64,
    pub omega_m1: f64,
    pub phi_m2: f64,
    pub omega_m2: f64,
}

impl MotorCommand {
    /// Motors that exactly follow the boundary pendulums and exert no torque.
    pub fn tracking(cs: &ChainState) -> Self {
        let first = cs.states[0];
        let last = cs.states[cs.states.len() - 1];
        Self {
            phi_m1: first.angle,
            omega_m1: first.velocity,
            phi_m2: last.angle,
            omega_m2: last.velocity,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.phi_m1, self.omega_m1, self.phi_m2, self.omega_m2])
    }
}

/// Laplacian of the undirected path graph on `n` nodes.
pub fn build_laplacian(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("Laplacian needs n >= 2, got {n}")));
    }
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        l[(i, i)] += 1.0;
        l[(i + 1, i + 1)] += 1.0;
        l[(i, i + 1)] = -1.0;
        l[(i + 1, i)] = -1.0;
    }
    Ok(l)
}

/// Uncoupled single-pendulum dynamics: `[omega, -(mgl/J) sin(phi) - (gamma/J) omega]`.
pub fn drift(params: &ChainParams, s: PendulumState) -> StateRate {
    StateRate {
        angle: s.velocity,
        velocity: -params.gravity_ratio() * s.angle.sin()
            - params.absolute_damping / params.inertia * s.velocity,
    }
}

#[inline]
fn link_torque(params: &ChainParams, from: PendulumState, to: PendulumState) -> f64 {
    params.stiffness * (from.angle - to.angle)
        + params.relative_damping * (from.velocity - to.velocity)
}

/// Coupling accelerations `-(1/J) sum_j l_ij K x_j` over the path Laplacian.
pub fn coupling_accels(params: &ChainParams, cs: &ChainState) -> Vec<f64> {
    let mut out = vec![0.0; cs.states.len()];
    coupling_into(params, &cs.states, &mut out);
    out
}

fn coupling_into(params: &ChainParams, states: &[PendulumState], out: &mut [f64]) {
    let n = states.len();
    let (k, b, j) = (params.stiffness, params.relative_damping, params.inertia);
    for i in 0..n {
        // Row i of L: degree on the diagonal, -1 to each neighbour.
        let mut deg = 0.0;
        let mut acc_phi = 0.0;
        let mut acc_omega = 0.0;
        if i > 0 {
            deg += 1.0;
            acc_phi += states[i - 1].angle;
            acc_omega += states[i - 1].velocity;
        }
        if i + 1 < n {
            deg += 1.0;
            acc_phi += states[i + 1].angle;
            acc_omega += states[i + 1].velocity;
        }
        let lx_phi = deg * states[i].angle - acc_phi;
        let lx_omega = deg * states[i].velocity - acc_omega;
        out[i] = -(k * lx_phi + b * lx_omega) / j;
    }
}

/// Accelerations of pendulums 1 and N due to the motor springs.
///
/// Returns zero for pendulum N when motor 2 is not attached.
pub fn boundary_accels(params: &ChainParams, cs: &ChainState, cmd: &MotorCommand) -> (f64, f64) {
    let first = cs.states[0];
    let last = cs.states[cs.states.len() - 1];
    let a1 = if params.boundary.motor1_attached() {
        let m1 = PendulumState::new(cmd.phi_m1, cmd.omega_m1);
        link_torque(params, m1, first) / params.inertia
    } else {
        0.0
    };
    let an = if params.boundary.motor2_attached() {
        let m2 = PendulumState::new(cmd.phi_m2, cmd.omega_m2);
        link_torque(params, m2, last) / params.inertia
    } else {
        0.0
    };
    (a1, an)
}

/// Full chain vector field written into `out` (no allocation).
pub fn derivative_into(
    params: &ChainParams,
    states: &[PendulumState],
    cmd: &MotorCommand,
    out: &mut [StateRate],
) {
    let n = states.len();
    let (k, b, j) = (params.stiffness, params.relative_damping, params.inertia);
    let w2 = params.gravity_ratio();
    let gj = params.absolute_damping / j;
    for i in 0..n {
        let s = states[i];
        let mut torque = 0.0;
        if i > 0 {
            torque += k * (states[i - 1].angle - s.angle) + b * (states[i - 1].velocity - s.velocity);
        }
        if i + 1 < n {
            torque += k * (states[i + 1].angle - s.angle) + b * (states[i + 1].velocity - s.velocity);
        }
        if i == 0 && params.boundary.motor1_attached() {
            torque += k * (cmd.phi_m1 - s.angle) + b * (cmd.omega_m1 - s.velocity);
        }
        if i == n - 1 && params.boundary.motor2_attached() {
            torque += k * (cmd.phi_m2 - s.angle) + b * (cmd.omega_m2 - s.velocity);
        }
        out[i] = StateRate {
            angle: s.velocity,
            velocity: -w2 * s.angle.sin() - gj * s.velocity + torque / j,
        };
    }
}

/// Time derivative of the chain state under the given motor command.
pub fn chain_derivative(params: &ChainParams, cs: &ChainState, cmd: &MotorCommand) -> Vec<StateRate> {
    let mut out = vec![StateRate::default(); cs.states.len()];
    derivative_into(params, &cs.states, cmd, &mut out);
    out
}

/// Diagonal boundary matrix `D = diag(d_M1 + d_M2)` for the attached motors.
pub fn boundary_matrix(params: &ChainParams) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(params.n, params.n);
    if params.boundary.motor1_attached() {
        d[(0, 0)] = 1.0;
    }
    if params.boundary.motor2_attached() {
        d[(params.n - 1, params.n - 1)] += 1.0;
    }
    d
}

/// Matrices of the stacked form `x' = F(x) - A x + B u`.
///
/// `A = (1/J) (L + D) ⊗ (B K)` is 2N×2N and `B = (1/J) [d_M1, d_M2] ⊗ (B K)` is 2N×4.
pub fn stacked_matrices(params: &ChainParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = params.n;
    let l = build_laplacian(n)?;
    let d = boundary_matrix(params);
    let bk = coupling_block(params);
    let a = (&l + &d).kronecker(&bk) / params.inertia;
    let mut dm = DMatrix::zeros(n, 2);
    if params.boundary.motor1_attached() {
        dm[(0, 0)] = 1.0;
    }
    if params.boundary.motor2_attached() {
        dm[(n - 1, 1)] = 1.0;
    }
    let b = dm.kronecker(&bk) / params.inertia;
    Ok((a, b))
}

/// `B K` with `B = [0, 1]^T`, `K = [k, b]`.
fn coupling_block(params: &ChainParams) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, params.stiffness, params.relative_damping])
}

/// Mechanical energy: kinetic, gravitational and inter-pendulum spring terms.
///
/// Motor springs are not included.
pub fn total_energy(params: &ChainParams, cs: &ChainState) -> f64 {
    let mgl = params.mass * params.gravity * params.length;
    let own: f64 = cs
        .states
        .iter()
        .map(|s| 0.5 * params.inertia * s.velocity * s.velocity + mgl * (1.0 - s.angle.cos()))
        .sum();
    let springs: f64 = cs
        .states
        .windows(2)
        .map(|w| {
            let d = w[1].angle - w[0].angle;
            0.5 * params.stiffness * d * d
        })
        .sum();
    own + springs
}

/// Linearization of the synchronization error dynamics about the origin.
#[derive(Debug, Clone)]
pub struct ErrorJacobian {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
}

impl ErrorJacobian {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.max_real_part() < 0.0
    }
}

/// `I_N ⊗ [[0, 1], [-mgl/J, -gamma/J]] - (1/J)(L + D) ⊗ (B K)` and its spectrum.
pub fn error_dynamics_jacobian(params: &ChainParams) -> Result<ErrorJacobian> {
    params.validate()?;
    let n = params.n;
    let own = DMatrix::from_row_slice(
        2,
        2,
        &[0.0, 1.0, -params.gravity_ratio(), -params.absolute_damping / params.inertia],
    );
    let (a, _) = stacked_matrices(params)?;
    let matrix = DMatrix::<f64>::identity(n, n).kronecker(&own) - a;
    let eigenvalues = matrix.clone().complex_eigenvalues().iter().copied().collect();
    Ok(ErrorJacobian { matrix, eigenvalues })
}
