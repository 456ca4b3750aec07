//! Scenario execution against a cached sequential reference.

use std::cell::{Cell, OnceCell};

use crate::engine::{
    self, affinity, BenchScenario, MigrationReport, PriorityOutcome, WorkerReport,
};
use crate::metrology::{self, LatencyStats};
use crate::modal::{analytic_for, compare, Analytic2DOF, ErrorReport};
use crate::oscillator::{energy_drift, integrate, ModelError, PhaseState, Trajectory};

use super::config::BenchConfig;

/// Timer-cost calibration trials per bench.
const CALIBRATION_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Determinism {
    /// Bitwise equal to the sequential reference.
    Pass,
    /// First differing trajectory sample.
    Mismatch { sample: usize },
    /// The scenario did not produce a trajectory.
    NotRun,
}

impl Determinism {
    pub fn passed(&self) -> bool {
        matches!(self, Determinism::Pass)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Determinism::Pass => "pass",
            Determinism::Mismatch { .. } => "fail",
            Determinism::NotRun => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetadata {
    pub host_cores: usize,
    /// Every worker that was asked to pin got pinned.
    pub pinning_applied: bool,
    /// More workers than usable cores, so pinned workers share cores.
    pub oversubscribed: bool,
    pub priority: Vec<PriorityOutcome>,
    pub clock_overhead: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: BenchScenario,
    pub determinism: Determinism,
    pub final_state: Option<PhaseState>,
    pub error: Option<ErrorReport>,
    pub energy_drift: Option<f64>,
    /// Step latencies pooled over all workers.
    pub step_stats: Option<LatencyStats>,
    pub workers: Vec<WorkerReport>,
    pub migration: Option<MigrationReport>,
    pub metadata: ScenarioMetadata,
    /// Set when the scenario failed; the matrix carries on.
    pub failure: Option<String>,
}

impl ScenarioResult {
    pub fn name(&self) -> &str {
        &self.scenario.name
    }
}

/// Sequential reference run shared by every scenario of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub trajectory: Trajectory,
    pub analytic: Option<Analytic2DOF>,
    pub error: Option<ErrorReport>,
    pub energy_drift: f64,
}

/// Runs the scenarios of one config. The sequential reference and the clock
/// calibration are computed on first use and reused afterwards.
pub struct Bench {
    config: BenchConfig,
    reference: OnceCell<Result<Reference, ModelError>>,
    reference_runs: Cell<u32>,
    overhead: OnceCell<f64>,
}

impl Bench {
    pub fn new(config: BenchConfig) -> Self {
        Self {
            config,
            reference: OnceCell::new(),
            reference_runs: Cell::new(0),
            overhead: OnceCell::new(),
        }
    }

    pub fn config(&self) -> &BenchConfig {
        &self.config
    }

    pub fn reference(&self) -> Result<&Reference, ModelError> {
        self.reference
            .get_or_init(|| {
                self.reference_runs.set(self.reference_runs.get() + 1);
                let c = &self.config;
                let trajectory = integrate(&c.system, &c.initial, c.dt, c.nsteps, c.stride)?;
                let analytic = analytic_for(&c.system, &c.initial).ok();
                let error = match &analytic {
                    Some(sol) => Some(compare(&trajectory, sol)?),
                    None => None,
                };
                let energy_drift = energy_drift(&c.system, &trajectory)?;
                Ok(Reference {
                    trajectory,
                    analytic,
                    error,
                    energy_drift,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// How many times the reference was computed (at most once).
    pub fn reference_runs(&self) -> u32 {
        self.reference_runs.get()
    }

    pub fn clock_overhead(&self) -> f64 {
        *self
            .overhead
            .get_or_init(|| metrology::calibrate_overhead(CALIBRATION_ITERATIONS))
    }

    pub fn run_scenario(&self, scenario: &BenchScenario) -> ScenarioResult {
        let host_cores = affinity::available_cores();
        let mut result = ScenarioResult {
            scenario: scenario.clone(),
            determinism: Determinism::NotRun,
            final_state: None,
            error: None,
            energy_drift: None,
            step_stats: None,
            workers: Vec::new(),
            migration: None,
            metadata: ScenarioMetadata {
                host_cores,
                pinning_applied: false,
                oversubscribed: scenario.workers > host_cores,
                priority: Vec::new(),
                clock_overhead: self.clock_overhead(),
            },
            failure: None,
        };
        let reference = match self.reference() {
            Ok(r) => r,
            Err(e) => {
                result.failure = Some(format!("sequential reference failed: {e}"));
                return result;
            }
        };
        let c = &self.config;
        let out = match engine::run_parallel(&c.system, &c.initial, scenario) {
            Ok(out) => out,
            Err(e) => {
                result.failure = Some(e.to_string());
                return result;
            }
        };
        result.determinism = match out.trajectory.first_mismatch(&reference.trajectory) {
            None => Determinism::Pass,
            Some(sample) => Determinism::Mismatch { sample },
        };
        result.final_state = Some(out.trajectory.last().clone());
        result.error = reference
            .analytic
            .as_ref()
            .and_then(|sol| compare(&out.trajectory, sol).ok());
        result.energy_drift = energy_drift(&c.system, &out.trajectory).ok();
        result.step_stats = metrology::stats(&out.pooled_latencies()).ok();
        result.metadata.pinning_applied = out.all_pinned();
        result.metadata.priority = out.workers.iter().map(|w| w.priority).collect();
        result.migration = Some(out.migration);
        result.workers = out.workers;
        result
    }

    /// Runs every configured scenario once, in order.
    pub fn run_matrix(&self) -> Vec<ScenarioResult> {
        self.config
            .scenarios
            .iter()
            .map(|s| self.run_scenario(s))
            .collect()
    }
}

/// Ratio of pooled p50 step latencies, `first / second`.
pub fn p50_ratio(first: &ScenarioResult, second: &ScenarioResult) -> Option<f64> {
    let a = first.step_stats?.p50;
    let b = second.step_stats?.p50;
    (b > 0.0).then(|| a / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::BenchConfig;

    fn small() -> BenchConfig {
        BenchConfig::parse_with_overrides(
            super::super::config::CANONICAL_CONFIG,
            &["run.nsteps=10000", "run.warmup=100", "run.stride=10"],
        )
        .unwrap()
    }

    #[test]
    fn matrix_is_complete_and_reference_is_cached() {
        let bench = Bench::new(small());
        let results = bench.run_matrix();
        let names: Vec<_> = results.iter().map(|r| r.name()).collect();
        assert_eq!(names, super::super::config::DEFAULT_SCENARIOS);
        assert_eq!(bench.reference_runs(), 1);
        for r in &results {
            assert_eq!(r.failure, None);
            assert!(r.determinism.passed(), "{}", r.name());
            assert!(r.error.unwrap().max_abs_error < 1e-6);
            assert!(r.energy_drift.unwrap() < 1e-6);
            assert!(r.migration.as_ref().unwrap().total() < 10_000 * 4);
        }
    }

    #[test]
    fn seq_error_is_small() {
        let bench = Bench::new(small());
        let r = bench.run_scenario(bench.config().scenario("seq").unwrap());
        assert!(r.determinism.passed());
        assert!(r.error.unwrap().max_abs_error < 1e-6);
        let reference = bench.reference().unwrap();
        assert!(reference.error.unwrap().max_abs_error < 1e-6);
    }

    #[test]
    fn failed_scenario_is_recorded() {
        let bench = Bench::new(small());
        let mut sc = bench.config().scenario("par-unpin-padded").unwrap().clone();
        sc.workers = 9;
        let r = bench.run_scenario(&sc);
        assert!(r.failure.is_some());
        assert_eq!(r.determinism, Determinism::NotRun);
    }

    #[test]
    fn unequal_chain_has_no_analytic_error() {
        let cfg = BenchConfig::parse(
            "[system]\nmasses = 1, 2, 3\nsprings = 1, 1, 1\n[initial]\nx0 = 0.1, 0, 0\n\
             [run]\ndt = 1e-3\nnsteps = 500\nwarmup = 10\n",
        )
        .unwrap();
        let bench = Bench::new(cfg);
        for r in bench.run_matrix() {
            assert!(r.determinism.passed(), "{}", r.name());
            assert_eq!(r.error, None);
            assert!(r.energy_drift.unwrap() < 1e-9);
        }
    }
}
