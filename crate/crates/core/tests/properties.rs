//! Physical and numerical properties of the integrator and the parallel
//! engine, checked on randomized chains.

use proptest::prelude::*;

use oscbench::engine::{run_parallel, BarrierKind, BenchScenario, Layout};
use oscbench::modal::{analytic_solution, characteristic_frequencies, mode_ratios};
use oscbench::oscillator::{energy_drift, integrate, rk4_step, OscillatorSystem, PhaseState};

fn canonical() -> OscillatorSystem {
    OscillatorSystem::uniform(2, 0.002, 20250.0).unwrap()
}

fn state(x: &[f64], v: &[f64]) -> PhaseState {
    PhaseState::new(x.to_vec(), v.to_vec()).unwrap()
}

fn chain() -> impl Strategy<Value = (OscillatorSystem, PhaseState, PhaseState)> {
    (2usize..=4).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..10.0, n),
            prop::collection::vec(0.1f64..100.0, n),
            prop::collection::vec(-2.0f64..2.0, 2 * n),
            prop::collection::vec(-2.0f64..2.0, 2 * n),
        )
            .prop_map(move |(m, c, a, b)| {
                (
                    OscillatorSystem::chain(m, c).unwrap(),
                    state(&a[..n], &a[n..]),
                    state(&b[..n], &b[n..]),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // the model is linear, so one RK4 step is a linear map of the state
    #[test]
    fn rk4_step_is_linear((sys, a, b) in chain(), alpha in -3.0f64..3.0) {
        let dt = 1e-2;
        let n = sys.dof();
        let combo = state(
            &(0..n).map(|i| alpha * a.positions[i] + b.positions[i]).collect::<Vec<_>>(),
            &(0..n).map(|i| alpha * a.velocities[i] + b.velocities[i]).collect::<Vec<_>>(),
        );
        let sa = rk4_step(&sys, &a, dt).unwrap();
        let sb = rk4_step(&sys, &b, dt).unwrap();
        let sc = rk4_step(&sys, &combo, dt).unwrap();
        for i in 0..n {
            let x = alpha * sa.positions[i] + sb.positions[i];
            let v = alpha * sa.velocities[i] + sb.velocities[i];
            prop_assert!((sc.positions[i] - x).abs() < 1e-9 * (1.0 + x.abs()));
            prop_assert!((sc.velocities[i] - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn modal_coefficients_reproduce_initial_state(
        m in 1e-3f64..1.0, c in 1.0f64..1e5,
        x0 in prop::array::uniform2(-5.0f64..5.0),
        v0 in prop::array::uniform2(-5.0f64..5.0),
    ) {
        let sol = analytic_solution(m, c, x0, v0).unwrap();
        let s = sol.state(0.0);
        let scale = 1.0 + x0[0].abs().max(x0[1].abs());
        prop_assert!((s.positions[0] - x0[0]).abs() < 1e-12 * scale);
        prop_assert!((s.positions[1] - x0[1]).abs() < 1e-12 * scale);
        let vscale = 1.0 + v0[0].abs().max(v0[1].abs());
        prop_assert!((s.velocities[0] - v0[0]).abs() < 1e-11 * vscale);
        prop_assert!((s.velocities[1] - v0[1]).abs() < 1e-11 * vscale);
    }

    #[test]
    fn frequency_ratio_is_scale_free(m in 1e-4f64..10.0, c in 1e-2f64..1e6) {
        let (w1, w2) = characteristic_frequencies(m, c).unwrap();
        prop_assert!((w1 / w2 - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        let (r1, r2) = mode_ratios(m, c).unwrap();
        prop_assert!((r1 * r2 + 1.0).abs() < 1e-12);
    }
}

#[test]
fn time_reversal_returns_to_start() {
    let sys = canonical();
    let start = state(&[2.0, -3.0], &[0.0, 0.0]);
    let fwd = integrate(&sys, &start, 1e-6, 10_000, 10_000).unwrap();
    let end = fwd.last();
    let flipped = state(
        &end.positions,
        &end.velocities.iter().map(|v| -v).collect::<Vec<_>>(),
    );
    let back = integrate(&sys, &flipped, 1e-6, 10_000, 10_000).unwrap();
    let home = back.last();
    for i in 0..2 {
        assert!((home.positions[i] - start.positions[i]).abs() < 1e-6);
        assert!(home.velocities[i].abs() < 1e-2);
    }
}

#[test]
fn pure_mode_keeps_its_shape() {
    let sys = canonical();
    let (r1, r2) = mode_ratios(0.002, 20250.0).unwrap();
    for r in [r1, r2] {
        let traj = integrate(&sys, &state(&[1.0, r], &[0.0, 0.0]), 1e-6, 20_000, 10).unwrap();
        for s in &traj.samples {
            let x = &s.positions;
            assert!((x[1] - r * x[0]).abs() < 1e-9, "t={} ratio {r}", s.time);
        }
    }
}

#[test]
fn energy_drift_shrinks_with_step() {
    // for a linear oscillator RK4 damps amplitude by O((w dt)^6) per step,
    // so drift over a fixed horizon scales like dt^5
    let sys = canonical();
    let start = state(&[2.0, -3.0], &[0.0, 0.0]);
    let horizon = 0.02;
    let drift = |dt: f64| {
        let n = (horizon / dt).round() as u64;
        energy_drift(&sys, &integrate(&sys, &start, dt, n, 1).unwrap()).unwrap()
    };
    let coarse = drift(4e-5);
    let fine = drift(2e-5);
    let ratio = coarse / fine;
    assert!(ratio > 24.0 && ratio < 40.0, "{coarse:e}/{fine:e} = {ratio}");
}

#[test]
fn parallel_matches_sequential_for_any_worker_count() {
    let sys = OscillatorSystem::chain(vec![0.5, 1.5, 0.25, 2.0], vec![4.0, 1.0, 9.0, 2.5]).unwrap();
    let start = state(&[0.3, -0.1, 0.0, 0.2], &[0.0, 0.4, -0.3, 0.1]);
    let reference = integrate(&sys, &start, 5e-3, 400, 4).unwrap();
    for workers in [1, 2, 3, 5, 8] {
        for layout in [Layout::Padded, Layout::Packed] {
            for barrier in [BarrierKind::CountdownEvent, BarrierKind::Spin] {
                let mut sc = BenchScenario::parallel("p", 4, 5e-3, 400);
                sc.workers = workers;
                sc.stride = 4;
                sc.layout = layout;
                sc.barrier = barrier;
                let out = run_parallel(&sys, &start, &sc).unwrap();
                assert!(out.trajectory.bitwise_eq(&reference), "{workers} {layout:?} {barrier:?}");
            }
        }
    }
}
