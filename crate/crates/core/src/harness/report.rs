//! CSV export of benchmark results and trajectories.
//!
//! Files are written to a temporary sibling first and renamed into place.
//! Floats use Rust's shortest round-trip formatting, so every value parses
//! back to the exact `f64` that was written.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::oscillator::Trajectory;

use super::run::{p50_ratio, ScenarioResult};

pub const SUMMARY_HEADER: [&str; 17] = [
    "scenario",
    "workers",
    "pin",
    "layout",
    "barrier",
    "priority",
    "determinism",
    "max_abs_err_m",
    "rmse_m",
    "energy_drift_rel",
    "mean_step_s",
    "p50_step_s",
    "p90_step_s",
    "p99_step_s",
    "max_step_s",
    "migrations_total",
    "clock_overhead_s",
];

pub const SAMPLES_HEADER: [&str; 5] = ["scenario", "worker", "step", "latency_s", "core_id"];

/// Row name carrying the packed/padded step-latency ratios of the pinned
/// pair, when both scenarios ran.
pub const FALSE_SHARING_ROW: &str = "ratio:par-pin-packed/par-pin-padded";

/// `<base>.summary.csv` and `<base>.samples.csv`.
pub fn output_paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = base.as_os_str().to_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".summary.csv"), with(".samples.csv"))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:e}"))
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes `contents` through a temporary file and an atomic rename.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = io::BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut file)?;
        file.flush()?;
        file.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn summary_row(r: &ScenarioResult) -> Vec<String> {
    let sc = &r.scenario;
    let stats = r.step_stats;
    vec![
        sc.name.clone(),
        sc.workers.to_string(),
        sc.pin.as_str().to_string(),
        sc.layout.as_str().to_string(),
        sc.barrier.as_str().to_string(),
        sc.priority.as_str().to_string(),
        r.determinism.as_str().to_string(),
        num(r.error.map(|e| e.max_abs_error)),
        num(r.error.map(|e| e.rmse)),
        num(r.energy_drift),
        num(stats.map(|s| s.mean)),
        num(stats.map(|s| s.p50)),
        num(stats.map(|s| s.p90)),
        num(stats.map(|s| s.p99)),
        num(stats.map(|s| s.max)),
        r.migration
            .as_ref()
            .map_or_else(String::new, |m| m.total().to_string()),
        num(Some(r.metadata.clock_overhead)),
    ]
}

fn false_sharing_row(results: &[ScenarioResult]) -> Option<Vec<String>> {
    let find = |name: &str| results.iter().find(|r| r.name() == name && r.step_stats.is_some());
    let packed = find("par-pin-packed")?;
    let padded = find("par-pin-padded")?;
    let (a, b) = (packed.step_stats?, padded.step_stats?);
    let ratio = |x: f64, y: f64| num((y > 0.0).then(|| x / y));
    let mut row = vec![String::new(); SUMMARY_HEADER.len()];
    row[0] = FALSE_SHARING_ROW.to_string();
    row[10] = ratio(a.mean, b.mean);
    row[11] = num(p50_ratio(packed, padded));
    row[12] = ratio(a.p90, b.p90);
    row[13] = ratio(a.p99, b.p99);
    row[14] = ratio(a.max, b.max);
    Some(row)
}

/// Writes the summary and per-step sample files for `results`.
pub fn write_csv(results: &[ScenarioResult], base: &Path) -> io::Result<(PathBuf, PathBuf)> {
    if results.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "no results to write",
        ));
    }
    let (summary_path, samples_path) = output_paths(base);
    write_atomic(&summary_path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SUMMARY_HEADER).map_err(csv_err)?;
        for r in results {
            out.write_record(summary_row(r)).map_err(csv_err)?;
        }
        if let Some(row) = false_sharing_row(results) {
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush()
    })?;
    write_atomic(&samples_path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SAMPLES_HEADER).map_err(csv_err)?;
        for r in results {
            for worker in &r.workers {
                for s in &worker.samples {
                    out.write_record([
                        r.name().to_string(),
                        worker.worker.to_string(),
                        s.step.to_string(),
                        format!("{:e}", s.latency),
                        s.core.map_or_else(String::new, |c| c.to_string()),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        out.flush()
    })?;
    Ok((summary_path, samples_path))
}

/// Header of an exported trajectory: `t_s`, then `x<i>_m`, then `v<i>_mps`.
pub fn trajectory_header(dof: usize) -> Vec<String> {
    std::iter::once("t_s".to_string())
        .chain((1..=dof).map(|i| format!("x{i}_m")))
        .chain((1..=dof).map(|i| format!("v{i}_mps")))
        .collect()
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> io::Result<()> {
    let dof = traj.samples.first().map_or(0, |s| s.dof());
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(trajectory_header(dof)).map_err(csv_err)?;
        for s in &traj.samples {
            let row = std::iter::once(s.time)
                .chain(s.positions.iter().copied())
                .chain(s.velocities.iter().copied())
                .map(|v| format!("{v:e}"));
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush()
    })
}
