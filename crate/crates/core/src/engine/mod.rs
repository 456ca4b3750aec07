//! Thread-per-equation RK4 execution.
//!
//! Each worker owns a round-robin share of the `2s` first-order equations.
//! Per step, for each of the four RK4 stages, a worker snapshots the shared
//! stage input, evaluates its own equations, publishes the results into the
//! stage's [`SharedPhase`], and waits at the [`StageBarrier`]. A fifth phase
//! combines the stages for owned equations and publishes the new state.
//!
//! Workers only ever compute owned components with the same kernels as
//! [`crate::oscillator::integrate`], so a run reproduces the sequential
//! trajectory bit for bit.

pub mod affinity;
pub mod barrier;
pub mod shared;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use crate::metrology::{self, current_core_id, LatencyStats};
use crate::oscillator::{
    check_run, combine_component, stage_vector, step_time, ModelError, OscillatorSystem,
    PhaseState, Rk4Scratch, StepSizes, Trajectory,
};

pub use affinity::{Priority, PriorityOutcome};
pub use barrier::{BarrierKind, StageBarrier};
pub use shared::{Layout, SharedPhase, DEFAULT_LINE_SIZE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("line size must be a power of two of at least 8 bytes, got {0}")]
    InvalidLineSize(usize),
    #[error("shared state needs at least 2 variables, got {0}")]
    TooFewVariables(usize),
    #[error("index {index} out of range for {len} cells")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("a barrier needs at least one party")]
    NoParties,
    #[error("barrier wait exceeded {0:?}")]
    BarrierTimeout(Duration),
    #[error("core {core} is not available ({available} usable cores)")]
    InvalidCore { core: usize, available: usize },
    #[error("thread pinning is not supported on this platform")]
    PinUnsupported,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("worker {0} panicked")]
    WorkerPanicked(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Executor {
    /// Single-threaded reference stepper on the calling thread.
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinPlan {
    None,
    /// Worker `i` runs on the `i`-th allowed core counted from `base`,
    /// wrapping when there are more workers than cores.
    PerCore { base: usize },
}

impl PinPlan {
    pub fn as_str(self) -> &'static str {
        match self {
            PinPlan::None => "none",
            PinPlan::PerCore { .. } => "per-core",
        }
    }
}

/// One execution plan of the benchmark matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchScenario {
    pub name: String,
    pub executor: Executor,
    pub workers: usize,
    pub pin: PinPlan,
    pub priority: Priority,
    pub layout: Layout,
    pub barrier: BarrierKind,
    pub dt: f64,
    pub nsteps: u64,
    pub stride: u64,
    /// Leading steps excluded from latency statistics.
    pub warmup: u64,
    pub sample_core_every: u64,
    pub line_size: usize,
    pub watchdog: Option<Duration>,
}

impl BenchScenario {
    /// Parallel plan with default knobs for a chain of `dof` masses.
    pub fn parallel(name: impl Into<String>, dof: usize, dt: f64, nsteps: u64) -> Self {
        Self {
            name: name.into(),
            executor: Executor::Parallel,
            workers: 2 * dof,
            pin: PinPlan::None,
            priority: Priority::Normal,
            layout: Layout::Padded,
            barrier: BarrierKind::CountdownEvent,
            dt,
            nsteps,
            stride: 1,
            warmup: 0,
            sample_core_every: 1,
            line_size: DEFAULT_LINE_SIZE,
            watchdog: None,
        }
    }

    pub fn sequential(name: impl Into<String>, dt: f64, nsteps: u64) -> Self {
        Self {
            executor: Executor::Sequential,
            workers: 1,
            ..Self::parallel(name, 1, dt, nsteps)
        }
    }

    pub fn validate(&self, equations: usize) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidScenario(format!("{}: {msg}", self.name)));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.executor == Executor::Parallel && self.workers > equations {
            return bad(format!(
                "{} workers exceed the {equations} equations",
                self.workers
            ));
        }
        if self.nsteps <= self.warmup {
            return bad(format!(
                "nsteps ({}) must exceed warmup ({})",
                self.nsteps, self.warmup
            ));
        }
        if self.stride == 0 || self.sample_core_every == 0 {
            return bad("stride and sample_core_every must be at least 1".into());
        }
        shared::validate_line_size(self.line_size)
    }
}

/// Core-id sampling summary for one worker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkerMigration {
    pub samples: u64,
    pub migrations: u64,
    pub cores_seen: BTreeSet<usize>,
}

impl WorkerMigration {
    fn observe(&mut self, core: usize, last: &mut Option<usize>) {
        self.samples += 1;
        if matches!(*last, Some(prev) if prev != core) {
            self.migrations += 1;
        }
        self.cores_seen.insert(core);
        *last = Some(core);
    }

    /// Fraction of samples that moved to a different core.
    pub fn migration_rate(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.migrations as f64 / self.samples as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationReport {
    pub per_worker: Vec<WorkerMigration>,
    /// Whether the platform reports the executing core.
    pub supported: bool,
}

impl MigrationReport {
    pub fn total(&self) -> u64 {
        self.per_worker.iter().map(|w| w.migrations).sum()
    }
}

/// Timing of one post-warmup step as seen by one worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub step: u64,
    pub latency: f64,
    pub core: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReport {
    pub worker: usize,
    pub equations: Vec<usize>,
    pub samples: Vec<StepSample>,
    /// Whole-step wall time, barriers included.
    pub step_stats: Option<LatencyStats>,
    /// Time of the first stage's snapshot/evaluate/publish span, barriers
    /// excluded. Raw, with timer cost included.
    pub compute_stats: Option<LatencyStats>,
    pub pinned_core: Option<usize>,
    pub pin_error: Option<EngineError>,
    pub priority: PriorityOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub workers: Vec<WorkerReport>,
    pub migration: MigrationReport,
    /// Foreign writes detected by the debug ownership check.
    pub owner_violations: u64,
}

impl RunOutput {
    /// True when every worker asked to pin was pinned.
    pub fn all_pinned(&self) -> bool {
        self.workers.iter().all(|w| w.pinned_core.is_some())
    }

    /// Step latencies of all workers pooled together.
    pub fn pooled_latencies(&self) -> Vec<f64> {
        self.workers
            .iter()
            .flat_map(|w| w.samples.iter().map(|s| s.latency))
            .collect()
    }
}

/// Equations owned by each worker under round-robin assignment.
pub fn assign_equations(equations: usize, workers: usize) -> Vec<Vec<usize>> {
    let mut owned = vec![Vec::new(); workers];
    for eq in 0..equations {
        owned[eq % workers].push(eq);
    }
    owned
}

fn core_for(plan: PinPlan, worker: usize) -> Option<Result<usize, EngineError>> {
    let PinPlan::PerCore { base } = plan else {
        return None;
    };
    let allowed = affinity::allowed_cores();
    if allowed.is_empty() {
        return Some(Err(EngineError::PinUnsupported));
    }
    Some(match allowed.iter().position(|&c| c == base) {
        Some(start) => Ok(allowed[(start + worker) % allowed.len()]),
        None => Err(EngineError::InvalidCore {
            core: base,
            available: allowed.len(),
        }),
    })
}

/// Pins and prioritizes the calling thread per the scenario.
fn prepare_thread(scenario: &BenchScenario, worker: usize) -> (Option<usize>, Option<EngineError>, PriorityOutcome) {
    let (pinned, err) = match core_for(scenario.pin, worker) {
        None => (None, None),
        Some(Ok(core)) => match affinity::pin_to_core(core) {
            Ok(()) => (Some(core), None),
            Err(e) => (None, Some(e)),
        },
        Some(Err(e)) => (None, Some(e)),
    };
    let priority = affinity::set_priority(scenario.priority);
    (pinned, err, priority)
}

/// Per-worker timing and core sampling state.
struct Recorder {
    warmup: u64,
    sample_every: u64,
    samples: Vec<StepSample>,
    compute: Vec<f64>,
    migration: WorkerMigration,
    last_core: Option<usize>,
}

impl Recorder {
    fn new(scenario: &BenchScenario) -> Self {
        let kept = (scenario.nsteps - scenario.warmup) as usize;
        Self {
            warmup: scenario.warmup,
            sample_every: scenario.sample_core_every,
            samples: Vec::with_capacity(kept),
            compute: Vec::with_capacity(kept),
            migration: WorkerMigration::default(),
            last_core: None,
        }
    }

    #[inline]
    fn finish_step(&mut self, step: u64, latency: f64, compute: Option<f64>) {
        let core = if step.is_multiple_of(self.sample_every) {
            let core = current_core_id();
            if let Some(c) = core {
                self.migration.observe(c, &mut self.last_core);
            }
            core
        } else {
            None
        };
        if step > self.warmup {
            self.samples.push(StepSample { step, latency, core });
            if let Some(c) = compute {
                self.compute.push(c);
            }
        }
    }
}

fn summarize(samples: &[f64]) -> Option<LatencyStats> {
    metrology::stats(samples).ok()
}

/// Runs the single-threaded reference on the calling thread, timing each
/// step. The trajectory equals [`crate::oscillator::integrate`].
pub fn run_sequential(
    system: &OscillatorSystem,
    state0: &PhaseState,
    scenario: &BenchScenario,
) -> Result<RunOutput, EngineError> {
    check_run(system, state0, scenario.dt, scenario.nsteps, scenario.stride)?;
    scenario.validate(system.equations())?;
    let mut out = None;
    // a scoped thread keeps pinning and priority changes off the caller
    std::thread::scope(|scope| {
        out = Some(
            scope
                .spawn(|| sequential_body(system, state0, scenario))
                .join()
                .map_err(|_| EngineError::WorkerPanicked(0))
                .and_then(|r| r),
        );
    });
    out.expect("scope ran")
}

fn sequential_body(
    system: &OscillatorSystem,
    state0: &PhaseState,
    scenario: &BenchScenario,
) -> Result<RunOutput, EngineError> {
    let (pinned_core, pin_error, priority) = prepare_thread(scenario, 0);
    let mut rec = Recorder::new(scenario);
    let mut y = state0.to_vector();
    let mut scratch = Rk4Scratch::new(y.len());
    let h = StepSizes::new(scenario.dt);
    let mut samples = vec![state0.clone()];
    for n in 1..=scenario.nsteps {
        let t0 = metrology::now();
        scratch.step(system, &mut y, h);
        let latency = metrology::elapsed(t0, metrology::now());
        if !y.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteState { step: Some(n) }.into());
        }
        if n % scenario.stride == 0 {
            samples.push(PhaseState::from_vector(&y, step_time(state0.time, n, scenario.dt)));
        }
        rec.finish_step(n, latency, None);
    }
    let supported = rec.last_core.is_some();
    Ok(RunOutput {
        trajectory: Trajectory {
            samples,
            dt: scenario.dt,
            stride: scenario.stride,
        },
        migration: MigrationReport {
            per_worker: vec![rec.migration.clone()],
            supported,
        },
        workers: vec![WorkerReport {
            worker: 0,
            equations: (0..system.equations()).collect(),
            step_stats: summarize(&rec.samples.iter().map(|s| s.latency).collect::<Vec<_>>()),
            compute_stats: None,
            samples: rec.samples,
            pinned_core,
            pin_error,
            priority,
        }],
        owner_violations: 0,
    })
}

/// Shared state of one parallel run.
struct Board {
    state: SharedPhase,
    stages: [SharedPhase; 4],
    barrier: StageBarrier,
    abort: AtomicBool,
    failed_step: AtomicU64,
}

struct WorkerResult {
    report: WorkerReport,
    migration: WorkerMigration,
    trajectory: Option<Vec<PhaseState>>,
}

/// Executes one integration with one thread per worker.
pub fn run_parallel(
    system: &OscillatorSystem,
    state0: &PhaseState,
    scenario: &BenchScenario,
) -> Result<RunOutput, EngineError> {
    if scenario.executor == Executor::Sequential {
        return run_sequential(system, state0, scenario);
    }
    check_run(system, state0, scenario.dt, scenario.nsteps, scenario.stride)?;
    let n = system.equations();
    scenario.validate(n)?;
    let owned = assign_equations(n, scenario.workers);
    let mut owners = vec![0; n];
    for (w, eqs) in owned.iter().enumerate() {
        for &eq in eqs {
            owners[eq] = w;
        }
    }
    let make = || -> Result<SharedPhase, EngineError> {
        let mut s = SharedPhase::new(scenario.layout, n, scenario.line_size)?;
        s.set_owners(owners.clone());
        Ok(s)
    };
    let state = make()?;
    for (j, v) in state0.to_vector().into_iter().enumerate() {
        state.publish(j, v)?;
    }
    let mut barrier = StageBarrier::new(scenario.barrier, scenario.workers)?;
    if let Some(limit) = scenario.watchdog {
        barrier = barrier.with_watchdog(limit);
    }
    let board = Board {
        state,
        stages: [make()?, make()?, make()?, make()?],
        barrier,
        abort: AtomicBool::new(false),
        failed_step: AtomicU64::new(0),
    };

    let results: Vec<Result<WorkerResult, EngineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = owned
            .iter()
            .enumerate()
            .map(|(w, eqs)| {
                let board = &board;
                scope.spawn(move || worker_body(w, eqs, system, state0, scenario, board))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(w, h)| h.join().map_err(|_| EngineError::WorkerPanicked(w)).and_then(|r| r))
            .collect()
    });

    if board.abort.load(Ordering::Acquire) {
        let step = board.failed_step.load(Ordering::Acquire);
        if step > 0 {
            return Err(ModelError::NonFiniteState { step: Some(step) }.into());
        }
    }
    let mut workers = Vec::with_capacity(results.len());
    let mut per_worker = Vec::with_capacity(results.len());
    let mut samples = None;
    for r in results {
        let r = r?;
        if r.trajectory.is_some() {
            samples = r.trajectory;
        }
        per_worker.push(r.migration);
        workers.push(r.report);
    }
    let supported = per_worker.iter().any(|m| m.samples > 0);
    let owner_violations = board.state.owner_violations()
        + board.stages.iter().map(|s| s.owner_violations()).sum::<u64>();
    Ok(RunOutput {
        trajectory: Trajectory {
            samples: samples.expect("worker 0 records the trajectory"),
            dt: scenario.dt,
            stride: scenario.stride,
        },
        workers,
        migration: MigrationReport {
            per_worker,
            supported,
        },
        owner_violations,
    })
}

fn worker_body(
    w: usize,
    own: &[usize],
    system: &OscillatorSystem,
    state0: &PhaseState,
    scenario: &BenchScenario,
    board: &Board,
) -> Result<WorkerResult, EngineError> {
    let (pinned_core, pin_error, priority) = prepare_thread(scenario, w);
    let n = system.equations();
    let h = StepSizes::new(scenario.dt);
    let mut rec = Recorder::new(scenario);
    let mut y = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut traj = (w == 0).then(|| vec![state0.clone()]);
    let wait = |board: &Board| -> Result<(), EngineError> {
        board.barrier.wait().map(|_| ()).inspect_err(|_| {
            board.abort.store(true, Ordering::Release);
        })
    };

    for step in 1..=scenario.nsteps {
        let t_step = metrology::now();

        board.state.snapshot_into(&mut y);
        for &j in own {
            k[0][j] = system.rate(j, &y);
            board.stages[0].publish_as(w, j, k[0][j]);
        }
        let compute = metrology::elapsed(t_step, metrology::now());
        wait(board)?;

        for (s, h_stage) in [(1, h.half), (2, h.half), (3, h.full)] {
            board.stages[s - 1].snapshot_into(&mut k[s - 1]);
            stage_vector(&y, &k[s - 1], h_stage, &mut stage);
            for &j in own {
                k[s][j] = system.rate(j, &stage);
                board.stages[s].publish_as(w, j, k[s][j]);
            }
            wait(board)?;
        }

        for &j in own {
            let next = combine_component(y[j], k[0][j], k[1][j], k[2][j], k[3][j], h.sixth);
            if !next.is_finite() {
                board.failed_step.store(step, Ordering::Release);
                board.abort.store(true, Ordering::Release);
            }
            board.state.publish_as(w, j, next);
        }
        wait(board)?;
        if board.abort.load(Ordering::Acquire) {
            break;
        }

        if let Some(t) = traj.as_mut() {
            if step % scenario.stride == 0 {
                board.state.snapshot_into(&mut y);
                t.push(PhaseState::from_vector(
                    &y,
                    step_time(state0.time, step, scenario.dt),
                ));
            }
        }
        let latency = metrology::elapsed(t_step, metrology::now());
        rec.finish_step(step, latency, Some(compute));
    }

    let latencies: Vec<f64> = rec.samples.iter().map(|s| s.latency).collect();
    Ok(WorkerResult {
        report: WorkerReport {
            worker: w,
            equations: own.to_vec(),
            step_stats: summarize(&latencies),
            compute_stats: summarize(&rec.compute),
            samples: rec.samples,
            pinned_core,
            pin_error,
            priority,
        },
        migration: rec.migration,
        trajectory: traj,
    })
}

/// Outcome of [`barrier_stress`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressReport {
    pub generations: u64,
    /// Observations where some party's arrival counter lagged the released
    /// generation or led another counter by 2 or more.
    pub violations: u64,
    pub elapsed: f64,
}

/// Drives `parties` threads through `generations` barrier cycles. Before each
/// wait a party bumps its own arrival counter; after the wait it checks that
/// every counter has reached the released generation and that no two
/// counters differ by 2 or more.
pub fn barrier_stress(
    kind: BarrierKind,
    parties: usize,
    generations: u64,
) -> Result<StressReport, EngineError> {
    let barrier = StageBarrier::new(kind, parties)?;
    let counters: Vec<shared::SharedPhase> = (0..parties)
        .map(|_| SharedPhase::new(Layout::Padded, 2, DEFAULT_LINE_SIZE))
        .collect::<Result<_, _>>()?;
    let started = metrology::now();
    let violations: Result<u64, EngineError> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..parties)
            .map(|p| {
                let barrier = &barrier;
                let counters = &counters;
                scope.spawn(move || -> Result<u64, EngineError> {
                    let mut bad = 0;
                    for g in 1..=generations {
                        counters[p].publish(0, g as f64)?;
                        let released = barrier.wait()?;
                        let seen: Vec<f64> = counters.iter().map(|c| c.load(0)).collect();
                        let lo = seen.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = seen.iter().copied().fold(0.0, f64::max);
                        if released != g || lo < g as f64 || hi - lo >= 2.0 {
                            bad += 1;
                        }
                    }
                    Ok(bad)
                })
            })
            .collect();
        let mut total = 0;
        for (p, h) in handles.into_iter().enumerate() {
            total += h.join().map_err(|_| EngineError::WorkerPanicked(p))??;
        }
        Ok(total)
    });
    Ok(StressReport {
        generations,
        violations: violations?,
        elapsed: metrology::elapsed(started, metrology::now()),
    })
}
