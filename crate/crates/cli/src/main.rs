//! `oscbench` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or I/O error,
//! 3 verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oscbench::harness::{self, report, Bench, BenchConfig, ConfigError, ScenarioResult};
use oscbench::modal::{analytic_for, characteristic_frequencies, compare, mode_ratios};
use oscbench::oscillator::{energy_drift, integrate};

/// Prints to stdout, ignoring errors so a closed pipe (`| head`) neither
/// panics nor stops the command before its files are written.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "oscbench", version, about = "Coupled oscillator simulator and multi-core latency benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the eigenfrequencies and mode ratios of the equal-parameter 2-DOF chain
    #[command(allow_negative_numbers = true)]
    Roots {
        /// Mass of each body (kg)
        #[arg(long = "m")]
        m: f64,
        /// Spring rate of each spring (N/m)
        #[arg(long = "c")]
        c: f64,
    },
    /// Print the closed-form trajectory of the configured system
    Analytic {
        #[command(flatten)]
        config: ConfigArgs,
        /// End of the time window (s)
        #[arg(long)]
        t_max: f64,
        /// Number of evenly spaced samples, including t = 0 and t = t-max
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// Run the sequential reference and print its error report
    Integrate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the trajectory as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario matrix and write <out>.summary.csv and <out>.samples.csv
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Report path prefix (defaults to run.output from the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suite; exits 3 if any item fails
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Configuration file (INI style)
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. run.dt=1e-7 or scenario.par-pin-padded.workers=2
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<BenchConfig, Failure> {
        BenchConfig::load(&self.config, &self.overrides)
            .map_err(|e| Failure::Config(self.config.clone(), e))
    }
}

enum Failure {
    Usage(String),
    Config(PathBuf, ConfigError),
    Io(PathBuf, std::io::Error),
    Model(String),
    Verify,
}

impl Failure {
    fn report(&self) -> u8 {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                EXIT_USAGE
            }
            Failure::Config(_, e @ ConfigError::Io { .. }) => {
                eprintln!("config error: {e}");
                EXIT_CONFIG
            }
            Failure::Config(path, e) => {
                eprintln!("config error in {}: {e}", path.display());
                EXIT_CONFIG
            }
            Failure::Io(path, e) => {
                eprintln!("cannot write {}: {e}", path.display());
                EXIT_CONFIG
            }
            Failure::Model(msg) => {
                eprintln!("error: {msg}");
                EXIT_CONFIG
            }
            Failure::Verify => {
                eprintln!("verification failed");
                EXIT_VERIFY
            }
        }
    }
}

/// Fixed-point rendering with `digits` significant digits.
fn sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn roots(m: f64, c: f64) -> Result<(), Failure> {
    let (w1, w2) = characteristic_frequencies(m, c).map_err(|e| Failure::Model(e.to_string()))?;
    let (r1, r2) = mode_ratios(m, c).map_err(|e| Failure::Model(e.to_string()))?;
    say!(
        "omega1={} omega2={} r1={r1:.6} r2={r2:.6}",
        sig(w1, 6),
        sig(w2, 6)
    );
    Ok(())
}

fn analytic(cfg: &BenchConfig, t_max: f64, samples: usize) -> Result<(), Failure> {
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Failure::Usage(format!("--t-max must be a non-negative time, got {t_max}")));
    }
    if samples == 0 {
        return Err(Failure::Usage("--samples must be at least 1".into()));
    }
    let sol = analytic_for(&cfg.system, &cfg.initial)
        .map_err(|_| Failure::Model("closed form needs an equal-parameter 2-DOF chain".into()))?;
    say!(
        "# omega1={} omega2={} r1={:.6} r2={:.6} a1c={:e} a1s={:e} a2c={:e} a2s={:e}",
        sig(sol.omega1, 6),
        sig(sol.omega2, 6),
        sol.r1,
        sol.r2,
        sol.a1c,
        sol.a1s,
        sol.a2c,
        sol.a2s
    );
    say!("t_s,x1_m,x2_m");
    for i in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            t_max * i as f64 / (samples - 1) as f64
        };
        let (x1, x2) = sol.positions(t);
        say!("{t:e},{x1:e},{x2:e}");
    }
    Ok(())
}

fn run_integrate(cfg: &BenchConfig, out: Option<&Path>) -> Result<(), Failure> {
    let traj = integrate(&cfg.system, &cfg.initial, cfg.dt, cfg.nsteps, cfg.stride)
        .map_err(|e| Failure::Model(e.to_string()))?;
    let last = traj.last();
    say!(
        "steps={} dt={:e} t_end={:e} samples={}",
        cfg.nsteps,
        cfg.dt,
        last.time,
        traj.samples.len()
    );
    let fmt_list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
    say!("final_positions_m={}", fmt_list(&last.positions));
    say!("final_velocities_mps={}", fmt_list(&last.velocities));
    match analytic_for(&cfg.system, &cfg.initial) {
        Ok(sol) => {
            let rep = compare(&traj, &sol).map_err(|e| Failure::Model(e.to_string()))?;
            say!(
                "max_abs_error_m={:e} rmse_m={:e} at_time_s={:e}",
                rep.max_abs_error, rep.rmse, rep.at_time
            );
        }
        Err(_) => say!("max_abs_error_m=n/a (no closed form for this chain)"),
    }
    let drift = energy_drift(&cfg.system, &traj).map_err(|e| Failure::Model(e.to_string()))?;
    say!("energy_drift_rel={drift:e}");
    if let Some(path) = out {
        report::write_trajectory_csv(&traj, path).map_err(|e| Failure::Io(path.into(), e))?;
        say!("trajectory written to {}", path.display());
    }
    Ok(())
}

fn print_result(r: &ScenarioResult) {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
    let stats = r.step_stats;
    say!(
        "{:<18} {:>3} {:<11} {:>10} {:>10} {:>10} {:>10} {:>6} {}",
        r.name(),
        r.scenario.workers,
        r.determinism.as_str(),
        opt(r.error.map(|e| e.max_abs_error)),
        opt(stats.map(|s| s.p50)),
        opt(stats.map(|s| s.p99)),
        opt(stats.map(|s| s.stddev)),
        r.migration.as_ref().map_or_else(|| "-".into(), |m| m.total().to_string()),
        r.failure.as_deref().unwrap_or(""),
    );
    for w in &r.workers {
        if let Some(c) = w.compute_stats {
            say!(
                "    worker {} eqs {:?}: stage compute mean {:.3e} s, core {}, priority {:?}",
                w.worker,
                w.equations,
                c.mean,
                w.pinned_core.map_or_else(|| "unpinned".into(), |c| c.to_string()),
                w.priority
            );
        }
    }
}

fn bench(cfg: BenchConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let base = out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::Usage("bench needs --out or run.output in the config".into()))?;
    let bench = Bench::new(cfg);
    say!("clock overhead {:.3e} s", bench.clock_overhead());
    say!(
        "{:<18} {:>3} {:<11} {:>10} {:>10} {:>10} {:>10} {:>6}",
        "scenario", "w", "determinism", "max_err_m", "p50_s", "p99_s", "stddev_s", "migr"
    );
    let results: Vec<ScenarioResult> = bench
        .config()
        .scenarios
        .iter()
        .map(|sc| {
            let r = bench.run_scenario(sc);
            print_result(&r);
            r
        })
        .collect();
    let (summary, samples) =
        harness::write_csv(&results, &base).map_err(|e| Failure::Io(base.clone(), e))?;
    let find = |n: &str| results.iter().find(|r| r.name() == n);
    if let (Some(packed), Some(padded)) = (find("par-pin-packed"), find("par-pin-padded")) {
        if let Some(ratio) = harness::run::p50_ratio(packed, padded) {
            say!("p50 step latency packed/padded = {ratio:.3}");
        }
    }
    say!("wrote {} and {}", summary.display(), samples.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Roots { m, c } => roots(m, c),
        Command::Analytic {
            config,
            t_max,
            samples,
        } => analytic(&config.load()?, t_max, samples),
        Command::Integrate { config, out } => run_integrate(&config.load()?, out.as_deref()),
        Command::Bench { config, out } => bench(config.load()?, out),
        Command::Verify { config } => {
            let report = harness::verify(&config.load()?);
            let _ = write!(std::io::stdout().lock(), "{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Verify)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => ExitCode::from(f.report()),
    }
}
