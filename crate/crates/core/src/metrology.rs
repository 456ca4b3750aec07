//! High-resolution timing, latency statistics, and current-core lookup.

use std::hint::black_box;
use std::sync::OnceLock;
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetrologyError {
    #[error("cannot summarize an empty sample set")]
    EmptySamples,
}

/// Nanosecond ticks since a process-wide anchor.
pub const TICKS_PER_SECOND: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TickReading {
    pub ticks: u64,
    pub frequency: u64,
}

fn anchor() -> Instant {
    static ANCHOR: OnceLock<Instant> = OnceLock::new();
    *ANCHOR.get_or_init(Instant::now)
}

/// Reads the monotonic counter.
#[inline]
pub fn now() -> TickReading {
    let ticks = anchor().elapsed().as_nanos() as u64;
    TickReading {
        ticks,
        frequency: TICKS_PER_SECOND,
    }
}

/// Seconds between two readings, `(stop - start) / frequency`.
#[inline]
pub fn elapsed(start: TickReading, stop: TickReading) -> f64 {
    stop.ticks.saturating_sub(start.ticks) as f64 / start.frequency as f64
}

/// Median cost in seconds of back-to-back `now()` pairs.
pub fn calibrate_overhead(iterations: usize) -> f64 {
    let iterations = iterations.max(1);
    let mut costs: Vec<u64> = (0..iterations)
        .map(|_| {
            let a = black_box(now());
            let b = black_box(now());
            b.ticks - a.ticks
        })
        .collect();
    costs.sort_unstable();
    costs[costs.len() / 2] as f64 / TICKS_PER_SECOND as f64
}

/// Duration with the timer cost removed, clamped at zero.
#[inline]
pub fn subtract_overhead(duration: f64, overhead: f64) -> f64 {
    (duration - overhead).max(0.0)
}

/// Distribution summary, all values in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of a sorted slice: element `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Mean and population standard deviation over all samples; percentiles by
/// nearest rank.
pub fn stats(samples: &[f64]) -> Result<LatencyStats, MetrologyError> {
    if samples.is_empty() {
        return Err(MetrologyError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // summing in sorted order keeps the result independent of input order
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(LatencyStats {
        count: sorted.len(),
        mean,
        stddev: var.sqrt(),
        min: sorted[0],
        p50: nearest_rank(&sorted, 50.0),
        p90: nearest_rank(&sorted, 90.0),
        p99: nearest_rank(&sorted, 99.0),
        max: sorted[sorted.len() - 1],
    })
}

/// Identifier of the core executing the caller, if the platform exposes it.
#[cfg(target_os = "linux")]
pub fn current_core_id() -> Option<usize> {
    // SAFETY: sched_getcpu has no preconditions.
    let id = unsafe { libc::sched_getcpu() };
    (id >= 0).then_some(id as usize)
}

#[cfg(not(target_os = "linux"))]
pub fn current_core_id() -> Option<usize> {
    None
}
