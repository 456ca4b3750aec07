//! Named invariant checks over one configuration.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{
    self, affinity, barrier_stress, BarrierKind, BenchScenario, Layout, PinPlan, SharedPhase,
};
use crate::metrology;
use crate::modal::{analytic_for, analytic_solution, characteristic_frequencies, compare, mode_ratios};
use crate::oscillator::{energy_drift, integrate, OscillatorSystem, PhaseState};

use super::config::BenchConfig;

pub const FREQUENCY_RATIO: f64 = 2.618_033_988_749_895;
pub const CONVERGENCE_HORIZON: f64 = 0.01;
pub const CONVERGENCE_RANGE: (f64, f64) = (12.0, 20.0);
/// Largest `omega1 * dt` accepted by the convergence check.
pub const STABILITY_MARGIN: f64 = 0.5;
pub const ACCURACY_STEPS: u64 = 10_000;
pub const ACCURACY_TOL: f64 = 1e-6;
pub const ENERGY_DRIFT_TOL: f64 = 1e-6;
pub const BARRIER_GENERATIONS: u64 = 100_000;
pub const BARRIER_PARTIES: usize = 4;
pub const LAYOUT_TRIALS: usize = 1000;
pub const PIN_STEPS: u64 = 100_000;
pub const DETERMINISM_STEPS: u64 = 2_000;
pub const CLOCK_OVERHEAD_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    /// Informational; never fails the suite.
    Report,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
            Status::Report => "INFO",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyItem {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl VerifyItem {
    fn new(name: &'static str, ok: bool, detail: String) -> Self {
        Self {
            name,
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    fn with_status(name: &'static str, status: Status, detail: String) -> Self {
        Self { name, status, detail }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub items: Vec<VerifyItem>,
}

impl VerifyReport {
    /// No item failed; skipped and informational items do not count.
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.status != Status::Fail)
    }

    pub fn item(&self, name: &str) -> Option<&VerifyItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(f, "{:<4} {:<20} {}", i.status, i.name, i.detail)?;
        }
        Ok(())
    }
}

/// Max position error against the closed form after integrating to
/// `horizon` with steps `dt` and `2 dt`, sampled at common times.
pub fn convergence_errors(
    m: f64,
    c: f64,
    initial: &PhaseState,
    dt: f64,
    horizon: f64,
) -> Result<(f64, f64), crate::oscillator::ModelError> {
    let system = OscillatorSystem::uniform(2, m, c)?;
    let sol = analytic_for(&system, initial)?;
    let coarse_steps = ((horizon / (2.0 * dt)).round() as u64).max(1);
    let fine = integrate(&system, initial, dt, 2 * coarse_steps, 2)?;
    let coarse = integrate(&system, initial, 2.0 * dt, coarse_steps, 1)?;
    Ok((
        compare(&fine, &sol)?.max_abs_error,
        compare(&coarse, &sol)?.max_abs_error,
    ))
}

/// Allocates `trials` random shared layouts and counts invariant failures.
pub fn layout_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let nvars = rng.gen_range(2..=16);
        let line = 1usize << rng.gen_range(6..=8);
        let layout = if rng.gen_bool(0.5) { Layout::Padded } else { Layout::Packed };
        match SharedPhase::new(layout, nvars, line) {
            Ok(s) if s.layout_holds() => {}
            _ => failures += 1,
        }
    }
    failures
}

/// Scenario for determinism checks: one of the eight pin x layout x barrier
/// combinations, all equations on their own worker.
pub fn combination(dof: usize, dt: f64, nsteps: u64, pin: bool, layout: Layout, barrier: BarrierKind) -> BenchScenario {
    let mut sc = BenchScenario::parallel(
        format!(
            "{}-{}-{}",
            if pin { "pin" } else { "unpin" },
            layout.as_str(),
            barrier.as_str()
        ),
        dof,
        dt,
        nsteps,
    );
    if pin {
        sc.pin = PinPlan::PerCore {
            base: affinity::allowed_cores().first().copied().unwrap_or(0),
        };
    }
    sc.layout = layout;
    sc.barrier = barrier;
    sc
}

pub fn all_combinations(dof: usize, dt: f64, nsteps: u64) -> Vec<BenchScenario> {
    let mut v = Vec::with_capacity(8);
    for pin in [true, false] {
        for layout in [Layout::Padded, Layout::Packed] {
            for barrier in [BarrierKind::CountdownEvent, BarrierKind::Spin] {
                v.push(combination(dof, dt, nsteps, pin, layout, barrier));
            }
        }
    }
    v
}

pub fn verify(config: &BenchConfig) -> VerifyReport {
    let mut items = Vec::new();
    match config.system.equal_parameter_pair() {
        Some((m, c)) => modal_items(config, m, c, &mut items),
        None => items.push(VerifyItem::new(
            "configuration",
            false,
            "modal checks need an equal-parameter 2-DOF chain".into(),
        )),
    }
    items.push(determinism_item(config));
    items.push(barrier_item());
    items.push(layout_item());
    items.push(pinning_item(config));
    items.push(clock_item());
    VerifyReport { items }
}

fn modal_items(config: &BenchConfig, m: f64, c: f64, items: &mut Vec<VerifyItem>) {
    let (w1, w2) = characteristic_frequencies(m, c).expect("validated parameters");
    let residual = |w: f64| (m * m * w.powi(4) - 3.0 * m * c * w * w + c * c).abs() / (c * c);
    let (e1, e2) = (residual(w1), residual(w2));
    items.push(VerifyItem::new(
        "frequencies",
        e1 < 1e-9 && e2 < 1e-9 && w1 > w2,
        format!("omega1={w1:.6} omega2={w2:.6} rad/s, quartic residual {:.1e}", e1.max(e2)),
    ));
    let ratio = w1 / w2;
    items.push(VerifyItem::new(
        "frequency-ratio",
        ((ratio - FREQUENCY_RATIO) / FREQUENCY_RATIO).abs() < 1e-9,
        format!("omega1/omega2={ratio:.9}"),
    ));

    let (r1, r2) = mode_ratios(m, c).expect("validated parameters");
    let row_residual = [(w1, r1), (w2, r2)]
        .iter()
        .map(|&(w, r)| {
            let l2 = -w * w;
            ((m * l2 + 2.0 * c) - c * r).abs().max((-c + (m * l2 + c) * r).abs()) / c
        })
        .fold(0.0, f64::max);
    let product = (r1 * r2 + 1.0).abs();
    items.push(VerifyItem::new(
        "mode-ratios",
        row_residual < 1e-9 && product < 1e-12 && r1 < 0.0 && r2 > 0.0,
        format!("r1={r1:.6} r2={r2:.6}, row residual {row_residual:.1e}, |r1*r2+1|={product:.1e}"),
    ));

    let x0 = &config.initial;
    match analytic_for(&config.system, x0) {
        Ok(sol) => {
            let (x1, x2) = sol.positions(0.0);
            let (v1, v2) = sol.velocities(0.0);
            let scale = x0
                .positions
                .iter()
                .chain(&x0.velocities)
                .fold(1.0f64, |a, v| a.max(v.abs()));
            let res = [
                x1 - x0.positions[0],
                x2 - x0.positions[1],
                v1 - x0.velocities[0],
                v2 - x0.velocities[1],
            ]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
                / scale;
            items.push(VerifyItem::new(
                "modal-solution",
                res < 1e-12,
                format!(
                    "a1c={:.6} a1s={:.6} a2c={:.6} a2s={:.6}, residual {res:.1e}",
                    sol.a1c, sol.a1s, sol.a2c, sol.a2s
                ),
            ));
        }
        Err(e) => items.push(VerifyItem::new("modal-solution", false, e.to_string())),
    }

    let dt = config.dt;
    if w1 * dt > STABILITY_MARGIN {
        items.push(VerifyItem::new(
            "convergence-order",
            false,
            format!("dt too large for stability margin (omega1*dt={:.3} > {STABILITY_MARGIN})", w1 * dt),
        ));
    } else {
        match convergence_errors(m, c, x0, dt, CONVERGENCE_HORIZON) {
            Ok((fine, coarse)) => {
                let ratio = coarse / fine;
                items.push(VerifyItem::new(
                    "convergence-order",
                    (CONVERGENCE_RANGE.0..=CONVERGENCE_RANGE.1).contains(&ratio),
                    format!("err(2dt)/err(dt)={ratio:.3} ({coarse:.3e}/{fine:.3e})"),
                ));
            }
            Err(e) => items.push(VerifyItem::new("convergence-order", false, e.to_string())),
        }
    }

    match integrate(&config.system, x0, dt, ACCURACY_STEPS, 1) {
        Ok(traj) => {
            let err = analytic_for(&config.system, x0)
                .and_then(|sol| compare(&traj, &sol))
                .map(|r| r.max_abs_error)
                .unwrap_or(f64::INFINITY);
            items.push(VerifyItem::new(
                "accuracy",
                err < ACCURACY_TOL,
                format!("max|x_num-x_exact|={err:.3e} m over {ACCURACY_STEPS} steps"),
            ));
            let drift = energy_drift(&config.system, &traj).unwrap_or(f64::INFINITY);
            items.push(VerifyItem::new(
                "energy-drift",
                drift < ENERGY_DRIFT_TOL,
                format!("max|E-E0|/E0={drift:.3e}"),
            ));
        }
        Err(e) => {
            items.push(VerifyItem::new("accuracy", false, e.to_string()));
            items.push(VerifyItem::new("energy-drift", false, e.to_string()));
        }
    }

    items.push(mode_purity_item(m, c, dt, r2));
}

fn mode_purity_item(m: f64, c: f64, dt: f64, r2: f64) -> VerifyItem {
    let sol = analytic_solution(m, c, [1.0, r2], [0.0, 0.0]).expect("validated parameters");
    let period = sol.slow_period();
    let exact = (0..=1000)
        .map(|i| {
            let (x1, x2) = sol.positions(period * i as f64 / 100.0);
            (x2 - r2 * x1).abs()
        })
        .fold(0.0, f64::max);
    let system = OscillatorSystem::uniform(2, m, c).expect("validated parameters");
    let st = PhaseState::new(vec![1.0, r2], vec![0.0, 0.0]).expect("finite");
    let steps = ((period / dt).ceil() as u64).max(1);
    let numeric = integrate(&system, &st, dt, steps, 1)
        .map(|t| {
            t.samples
                .iter()
                .map(|s| (s.positions[1] - r2 * s.positions[0]).abs())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    VerifyItem::new(
        "mode-purity",
        exact < 1e-9 && numeric < 1e-4,
        format!("analytic {exact:.1e}, rk4 over one slow period {numeric:.1e}"),
    )
}

fn determinism_item(config: &BenchConfig) -> VerifyItem {
    let nsteps = config.nsteps.min(DETERMINISM_STEPS);
    let reference = match integrate(&config.system, &config.initial, config.dt, nsteps, 1) {
        Ok(t) => t,
        Err(e) => return VerifyItem::new("determinism", false, e.to_string()),
    };
    let mut mismatches = Vec::new();
    for sc in all_combinations(config.system.dof(), config.dt, nsteps) {
        match engine::run_parallel(&config.system, &config.initial, &sc) {
            Ok(out) if out.trajectory.bitwise_eq(&reference) && out.owner_violations == 0 => {}
            Ok(_) => mismatches.push(sc.name),
            Err(e) => mismatches.push(format!("{} ({e})", sc.name)),
        }
    }
    VerifyItem::new(
        "determinism",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("8 scenario combinations bitwise equal to sequential over {nsteps} steps")
        } else {
            format!("mismatch: {}", mismatches.join(", "))
        },
    )
}

fn barrier_item() -> VerifyItem {
    let mut detail = Vec::new();
    let mut ok = true;
    for kind in [BarrierKind::CountdownEvent, BarrierKind::Spin] {
        match barrier_stress(kind, BARRIER_PARTIES, BARRIER_GENERATIONS) {
            Ok(r) => {
                ok &= r.violations == 0;
                detail.push(format!("{}: {} violations in {:.2}s", kind.as_str(), r.violations, r.elapsed));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("{}: {e}", kind.as_str()));
            }
        }
    }
    VerifyItem::new("barrier-stress", ok, detail.join("; "))
}

fn layout_item() -> VerifyItem {
    let failures = layout_failures(LAYOUT_TRIALS, 0x5eed);
    VerifyItem::new(
        "layout",
        failures == 0,
        format!("{failures} invariant failures in {LAYOUT_TRIALS} allocations"),
    )
}

fn pinning_item(config: &BenchConfig) -> VerifyItem {
    if !affinity::pinning_supported() || metrology::current_core_id().is_none() {
        return VerifyItem::with_status("pinning", Status::Skipped, "pinning or core-id sampling unavailable".into());
    }
    let cores = affinity::available_cores();
    let workers = config.system.equations().min(cores);
    let mut sc = combination(config.system.dof(), config.dt, PIN_STEPS, true, Layout::Padded, BarrierKind::CountdownEvent);
    sc.workers = workers;
    match engine::run_parallel(&config.system, &config.initial, &sc) {
        Ok(out) => {
            let samples: u64 = out.migration.per_worker.iter().map(|w| w.samples).min().unwrap_or(0);
            let migrations = out.migration.total();
            VerifyItem::new(
                "pinning",
                out.all_pinned() && migrations == 0,
                format!("{workers} pinned workers on {cores} cores, {migrations} migrations, >= {samples} samples each"),
            )
        }
        Err(e) => VerifyItem::new("pinning", false, e.to_string()),
    }
}

fn clock_item() -> VerifyItem {
    let overhead = metrology::calibrate_overhead(100_000);
    VerifyItem::new(
        "clock-overhead",
        overhead < CLOCK_OVERHEAD_LIMIT,
        format!("median now() pair cost {overhead:.3e} s"),
    )
}
