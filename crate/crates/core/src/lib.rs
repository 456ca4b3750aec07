//! Coupled harmonic oscillator simulator and multi-core latency benchmark.
//!
//! - [`oscillator`]: spring-mass chain, derivative, fixed-step RK4.
//! - [`modal`]: closed-form normal modes of the equal-parameter 2-DOF chain.
//! - [`engine`]: thread-per-equation RK4 with stage barriers, shared-state
//!   layouts, core pinning, and migration sampling.
//! - [`metrology`]: monotonic timing, clock calibration, latency statistics.
//! - [`harness`]: configuration, scenario matrix, verification, CSV output.

pub mod engine;
pub mod harness;
pub mod metrology;
pub mod modal;
pub mod oscillator;

pub use modal::{Analytic2DOF, ErrorReport};
pub use oscillator::{ModelError, OscillatorSystem, PhaseState, Trajectory};
