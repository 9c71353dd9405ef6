use std::sync::Arc;

use proptest::prelude::*;

use fkchain::ident::Triangle;
use fkchain::sim::*;
use fkchain::wave::*;
use fkchain::{ChainParams, Error};

fn frames(times: &[f64], angles: &[Vec<f64>]) -> FrameHistory {
    let mut h = FrameHistory::new();
    for (t, a) in times.iter().zip(angles) {
        h.push(MeasurementFrame { timestamp: *t, angles: a.clone(), velocities: vec![0.0; a.len()] });
    }
    h
}

fn steady_amplitude(log: &TrajectoryLog, i: usize, from: f64) -> f64 {
    log.rows.iter().filter(|r| r.t >= from).map(|r| r.states[i].angle.abs()).fold(0.0, f64::max)
}

#[test]
fn naive_law_halves_the_target_swing_without_latency() {
    let mut exp = Experiment::new(ChainParams::identified(20), 40.0);
    exp.quantize = false;
    exp.sensor.latency = Some(0.0);
    exp.disturbance = Some(Arc::new(Triangle { amplitude: 3.0, omega: 9.24 }));
    let off = run_simulation(&exp, &mut NullController).unwrap();
    let on = run_simulation(&exp, &mut WaveController::new(WaveLaw::Naive { i_star: 6 }, 20).unwrap()).unwrap();
    let (a_off, a_on) = (steady_amplitude(&off, 5, 25.0), steady_amplitude(&on, 5, 25.0));
    assert!(a_on < 0.5 * a_off, "{a_on} vs {a_off}");
}

#[test]
fn travel_times_regression() {
    let tt = estimate_travel_times(&ChainParams::identified(20)).unwrap();
    let frozen = [
        0.0684, 0.0602, 0.0565, 0.0543, 0.0527, 0.0516, 0.0507, 0.0499, 0.0493, 0.0489, 0.0484, 0.0480, 0.0477,
        0.0474, 0.0472, 0.0468, 0.0464, 0.0435, 0.0331,
    ];
    assert_eq!(tt.len(), 19);
    for (a, b) in tt.iter().zip(frozen) {
        assert!((a - b).abs() < 2e-4, "{tt:?}");
    }
}

#[test]
fn stiffer_springs_carry_waves_faster() {
    let p = ChainParams::identified(20);
    let base = estimate_travel_times(&p).unwrap();
    let stiff = estimate_travel_times(&ChainParams { stiffness: 2.0 * p.stiffness, ..p }).unwrap();
    for (a, b) in base.iter().zip(&stiff) {
        assert!(b < a);
    }
}

#[test]
fn delay_selection_examples() {
    let links = [0.05; 19];
    assert_eq!(select_delay_params(&links, 6, 0.0, 20).unwrap(), (0, 0.0));
    let (d, tt) = select_delay_params(&links, 6, 0.03, 20).unwrap();
    assert_eq!(d, 1);
    assert!((tt - 0.02).abs() < 1e-12);
    let (d, tt) = select_delay_params(&links, 6, 0.06, 20).unwrap();
    assert_eq!(d, 2);
    assert!((tt - 0.04).abs() < 1e-12);
    assert!(matches!(select_delay_params(&links, 6, 1.0, 20), Err(Error::Infeasible(_))));
    assert!(matches!(select_delay_params(&links, 11, 0.0, 20), Err(Error::Infeasible(_))));
}

#[test]
fn unreachable_target_is_infeasible() {
    let cfg = WaveControlConfig { delta: 2, ..WaveControlConfig::naive(10) };
    assert!(matches!(WaveController::new(WaveLaw::Compensated(cfg), 20), Err(Error::Infeasible(_))));
    assert!(matches!(WaveController::new(WaveLaw::Naive { i_star: 11 }, 20), Err(Error::Infeasible(_))));
}

#[test]
fn esc_finds_minimum_of_static_map() {
    let cfg = EscConfig { window: 1, ..EscConfig::default() };
    let mut s = EscState::new(1.0);
    let mut lambda = 1.0;
    let steps = (60.0 / cfg.sample_period) as usize;
    for k in 0..steps {
        lambda = esc_step(&cfg, &mut s, (lambda - 0.8f64).powi(2), k as f64 * cfg.sample_period);
    }
    assert!((lambda - 0.8).abs() <= 2.0 * cfg.dither_amplitude, "{lambda}");
}

proptest! {
    #[test]
    fn compensated_reduces_to_naive(
        n in 2usize..30,
        len in 1usize..20,
        seed in prop::collection::vec(-3.0f64..3.0, 600),
        i in 1usize..15,
    ) {
        let i_star = 1 + (i - 1) % (n / 2);
        let times: Vec<f64> = (0..len).map(|k| k as f64 * 0.03).collect();
        let angles: Vec<Vec<f64>> = (0..len).map(|k| (0..n).map(|j| seed[(k * n + j) % seed.len()]).collect()).collect();
        let h = frames(&times, &angles);
        let t = *times.last().unwrap();
        let comp = compensated_wave_law(&h, &WaveControlConfig::naive(i_star), t).unwrap().unwrap();
        prop_assert_eq!(comp, naive_wave_law(&h, i_star).unwrap());
    }

    #[test]
    fn lambda_stays_clamped(values in prop::collection::vec(0.0f64..5.0, 1..400), lambda0 in 0.0f64..3.0) {
        let cfg = EscConfig { gain: 200.0, ..EscConfig::default() };
        let mut s = EscState::new(lambda0);
        for (k, v) in values.iter().enumerate() {
            let idx = s.push_sample(&cfg, *v);
            prop_assert!(s.window.len() <= cfg.window);
            let l = esc_step(&cfg, &mut s, idx, k as f64 * cfg.sample_period);
            prop_assert!((0.0..=cfg.lambda_max).contains(&l));
        }
    }

    #[test]
    fn frozen_plant_does_not_move_integrator(level in 0.0f64..10.0, periods in 2usize..6) {
        let cfg = EscConfig::default();
        let mut s = EscState::new(1.0);
        // one dither period is 2 s = 200/3 samples; use 3 periods = 200 samples
        let samples_per_three = (3.0 / (cfg.dither_freq * cfg.sample_period)).round() as usize;
        for k in 0..periods * samples_per_three {
            esc_step(&cfg, &mut s, level, k as f64 * cfg.sample_period);
        }
        prop_assert!((s.integrator - 1.0).abs() < 1e-12);
    }
}
