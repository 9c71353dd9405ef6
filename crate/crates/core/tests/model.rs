use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fkchain::model::*;
use fkchain::sim::Rk4;
use fkchain::{Boundary, ChainParams, ChainState, MotorCommand, PendulumState};

fn random_state(rng: &mut impl Rng, n: usize) -> ChainState {
    let states = (0..n)
        .map(|_| PendulumState::new(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI), rng.random_range(-10.0..10.0)))
        .collect();
    ChainState { time: 0.0, states }
}

fn random_cmd(rng: &mut impl Rng) -> MotorCommand {
    MotorCommand {
        phi_m1: rng.random_range(-3.0..3.0),
        omega_m1: rng.random_range(-10.0..10.0),
        phi_m2: rng.random_range(-3.0..3.0),
        omega_m2: rng.random_range(-10.0..10.0),
    }
}

/// Per-pendulum scalar equations written out link by link.
fn scalar_oracle(p: &ChainParams, cs: &ChainState, u: &MotorCommand) -> Vec<(f64, f64)> {
    let n = cs.states.len();
    let x = &cs.states;
    let spring = |a: PendulumState, b: PendulumState| p.stiffness * (a.angle - b.angle) + p.relative_damping * (a.velocity - b.velocity);
    (0..n)
        .map(|i| {
            let mut m = 0.0;
            if i > 0 {
                m += spring(x[i - 1], x[i]);
            }
            if i + 1 < n {
                m += spring(x[i + 1], x[i]);
            }
            if i == 0 && p.boundary.motor1_attached() {
                m += spring(PendulumState::new(u.phi_m1, u.omega_m1), x[0]);
            }
            if i == n - 1 && p.boundary.motor2_attached() {
                m += spring(PendulumState::new(u.phi_m2, u.omega_m2), x[n - 1]);
            }
            let acc = (-p.mass * p.gravity * p.length * x[i].angle.sin() - p.absolute_damping * x[i].velocity + m) / p.inertia;
            (x[i].velocity, acc)
        })
        .collect()
}

#[test]
fn stacked_form_matches_scalar_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for n in [2, 5, 20] {
        for boundary in [Boundary::Both, Boundary::Motor1Only, Boundary::Free] {
            let p = ChainParams::identified(n).with_boundary(boundary);
            let (a, b) = stacked_matrices(&p).unwrap();
            for _ in 0..1000 {
                let cs = random_state(&mut rng, n);
                let u = random_cmd(&mut rng);
                let x = cs.to_stacked();
                let mut f = DVector::zeros(2 * n);
                for (i, s) in cs.states.iter().enumerate() {
                    let d = drift(&p, *s);
                    f[2 * i] = d.angle;
                    f[2 * i + 1] = d.velocity;
                }
                let stacked = f - &a * &x + &b * u.to_vector();
                let oracle = scalar_oracle(&p, &cs, &u);
                let direct = chain_derivative(&p, &cs, &u);
                for i in 0..n {
                    worst = worst.max((stacked[2 * i] - oracle[i].0).abs());
                    worst = worst.max((stacked[2 * i + 1] - oracle[i].1).abs());
                    worst = worst.max((direct[i].velocity - oracle[i].1).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn energy_of_inverted_pendulum() {
    let p = ChainParams::identified(2);
    let cs = ChainState { time: 0.0, states: vec![PendulumState::new(std::f64::consts::PI, 0.0), PendulumState::new(0.0, 0.0)] };
    // hand value: 2 m g l plus one stretched link
    let expected = 2.0 * 0.017 * 9.81 * 0.15 + 0.5 * p.stiffness * std::f64::consts::PI.powi(2);
    assert_relative_eq!(total_energy(&p, &cs), expected, max_relative = 1e-14);
    assert_eq!(total_energy(&p, &ChainState::at_rest(4)), 0.0);
}

#[test]
fn energy_is_conserved_without_dissipation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = ChainParams { relative_damping: 0.0, absolute_damping: 0.0, ..ChainParams::identified(5) }.with_boundary(Boundary::Free);
    let mut cs = ChainState {
        time: 0.0,
        states: (0..5).map(|_| PendulumState::new(rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0))).collect(),
    };
    let e0 = total_energy(&p, &cs);
    let mut rk = Rk4::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        rk.advance(&p, &mut cs, &MotorCommand::default(), 1e-4).unwrap();
        worst = worst.max((total_energy(&p, &cs) - e0).abs() / e0);
    }
    assert!(worst < 1e-6, "relative drift {worst:e}");
}

#[test]
fn energy_rate_vanishes_with_tracking_motors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ChainParams { relative_damping: 0.0, absolute_damping: 0.0, ..ChainParams::identified(6) };
    for _ in 0..200 {
        let cs = random_state(&mut rng, 6);
        let d = chain_derivative(&p, &cs, &MotorCommand::tracking(&cs));
        // dE/dt = sum J w w' + mgl sin(phi) w + k (phi_{i+1} - phi_i)(w_{i+1} - w_i)
        let mgl = p.mass * p.gravity * p.length;
        let mut rate: f64 = cs.states.iter().zip(&d).map(|(s, r)| p.inertia * s.velocity * r.velocity + mgl * s.angle.sin() * s.velocity).sum();
        for w in cs.states.windows(2) {
            rate += p.stiffness * (w[1].angle - w[0].angle) * (w[1].velocity - w[0].velocity);
        }
        assert!(rate.abs() < 1e-12, "{rate:e}");
    }
}

#[test]
fn small_oscillation_frequency() {
    // in-phase motion of a free pair never stretches the link: one uncoupled pendulum
    let p = ChainParams { relative_damping: 0.0, absolute_damping: 0.0, ..ChainParams::identified(2) }.with_boundary(Boundary::Free);
    let mut cs = ChainState::uniform(2, PendulumState::new(0.01, 0.0));
    let mut rk = Rk4::new(2);
    let dt = 1e-4;
    let mut crossings = Vec::new();
    let mut prev = cs.states[0].angle;
    for _ in 0..100_000 {
        rk.advance(&p, &mut cs, &MotorCommand::default(), dt).unwrap();
        let a = cs.states[0].angle;
        if prev.signum() != a.signum() && a != 0.0 {
            crossings.push(cs.time - dt * a / (a - prev));
        }
        prev = a;
    }
    let half_periods = (crossings.len() - 1) as f64;
    let omega = std::f64::consts::PI * half_periods / (crossings.last().unwrap() - crossings[0]);
    let expected = (9.81f64 / 0.15).sqrt();
    assert!((omega / expected - 1.0).abs() < 0.01, "{omega} vs {expected}");
}

#[test]
fn jacobian_matches_finite_differences() {
    for boundary in [Boundary::Both, Boundary::Motor1Only] {
        let p = ChainParams::identified(5).with_boundary(boundary);
        let jac = error_dynamics_jacobian(&p).unwrap();
        let h = 1e-6;
        let base = ChainState::at_rest(5);
        for col in 0..10 {
            let mut plus = base.clone();
            let mut minus = base.clone();
            let (i, which) = (col / 2, col % 2);
            if which == 0 {
                plus.states[i].angle += h;
                minus.states[i].angle -= h;
            } else {
                plus.states[i].velocity += h;
                minus.states[i].velocity -= h;
            }
            let fp = chain_derivative(&p, &plus, &MotorCommand::default());
            let fm = chain_derivative(&p, &minus, &MotorCommand::default());
            for r in 0..5 {
                let d_angle = (fp[r].angle - fm[r].angle) / (2.0 * h);
                let d_vel = (fp[r].velocity - fm[r].velocity) / (2.0 * h);
                assert!((jac.matrix[(2 * r, col)] - d_angle).abs() < 1e-6);
                assert!((jac.matrix[(2 * r + 1, col)] - d_vel).abs() < 1e-4 * (1.0 + d_vel.abs()));
            }
        }
    }
}

#[test]
fn identified_chain_is_locally_stable() {
    for n in [5, 20] {
        let jac = error_dynamics_jacobian(&ChainParams::identified(n)).unwrap();
        assert!(jac.is_hurwitz(), "N={n}: {}", jac.max_real_part());
    }
}

#[test]
fn undamped_uncoupled_limit_is_oscillator() {
    let p = ChainParams { stiffness: 1e-12, relative_damping: 0.0, absolute_damping: 0.0, ..ChainParams::identified(2) }
        .with_boundary(Boundary::Free);
    let jac = error_dynamics_jacobian(&p).unwrap();
    let w = p.natural_frequency();
    for z in &jac.eigenvalues {
        assert!(z.re.abs() < 1e-6);
        assert!((z.im.abs() - w).abs() < 1e-6, "{z}");
    }
}

fn arb_chain() -> impl Strategy<Value = (Vec<(f64, f64)>, [f64; 4])> {
    (2usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec((-3.2f64..3.2, -10.0f64..10.0), n),
            [-3.0f64..3.0, -10.0f64..10.0, -3.0f64..3.0, -10.0f64..10.0],
        )
    })
}

fn chain_of(v: &[(f64, f64)]) -> ChainState {
    ChainState { time: 0.0, states: v.iter().map(|&(a, w)| PendulumState::new(a, w)).collect() }
}

proptest! {
    #[test]
    fn coupling_equals_pairwise_sum((states, _) in arb_chain()) {
        let cs = chain_of(&states);
        let p = ChainParams::identified(cs.len());
        let got = coupling_accels(&p, &cs);
        let n = cs.len();
        for i in 0..n {
            let mut want = 0.0;
            for j in 0..n {
                if i.abs_diff(j) == 1 {
                    want += p.stiffness * (cs.states[j].angle - cs.states[i].angle)
                        + p.relative_damping * (cs.states[j].velocity - cs.states[i].velocity);
                }
            }
            want /= p.inertia;
            prop_assert!((got[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn translation_leaves_coupling_unchanged((states, u) in arb_chain(), c in -10.0f64..10.0) {
        let cs = chain_of(&states);
        let p = ChainParams::identified(cs.len());
        let cmd = MotorCommand { phi_m1: u[0], omega_m1: u[1], phi_m2: u[2], omega_m2: u[3] };
        let mut shifted = cs.clone();
        for s in &mut shifted.states {
            s.angle += c;
        }
        let scmd = MotorCommand { phi_m1: u[0] + c, phi_m2: u[2] + c, ..cmd };
        let (a, b) = (coupling_accels(&p, &cs), coupling_accels(&p, &shifted));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
        let (b1, bn) = boundary_accels(&p, &cs, &cmd);
        let (s1, sn) = boundary_accels(&p, &shifted, &scmd);
        prop_assert!((b1 - s1).abs() <= 1e-9 * (1.0 + b1.abs()));
        prop_assert!((bn - sn).abs() <= 1e-9 * (1.0 + bn.abs()));
    }

    #[test]
    fn mirror_symmetry((states, u) in arb_chain()) {
        let cs = chain_of(&states);
        let p = ChainParams::identified(cs.len());
        let cmd = MotorCommand { phi_m1: u[0], omega_m1: u[1], phi_m2: u[2], omega_m2: u[3] };
        let mut rev = cs.clone();
        rev.states.reverse();
        let swapped = MotorCommand { phi_m1: u[2], omega_m1: u[3], phi_m2: u[0], omega_m2: u[1] };
        let mut d = chain_derivative(&p, &cs, &cmd);
        d.reverse();
        let r = chain_derivative(&p, &rev, &swapped);
        for (x, y) in d.iter().zip(&r) {
            prop_assert_eq!(x.angle, y.angle);
            prop_assert!((x.velocity - y.velocity).abs() <= 1e-12 * (1.0 + x.velocity.abs()));
        }
    }

    #[test]
    fn energy_is_nonnegative_and_2pi_shift_invariant((states, _) in arb_chain()) {
        let cs = chain_of(&states);
        let p = ChainParams::identified(cs.len());
        let e = total_energy(&p, &cs);
        prop_assert!(e >= 0.0);
        let mut shifted = cs.clone();
        for s in &mut shifted.states {
            s.angle += 2.0 * std::f64::consts::PI;
        }
        prop_assert!((total_energy(&p, &shifted) - e).abs() <= 1e-12 * (1.0 + e));
    }
}
