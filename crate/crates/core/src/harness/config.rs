//! INI-style benchmark configuration.
//!
//! ```text
//! [system]
//! masses  = 0.002, 0.002      # kg
//! springs = 20250, 20250      # N/m
//! [initial]
//! x0 = 2, -3
//! v0 = 0, 0
//! [run]
//! dt = 1e-6
//! [scenario par-pin-padded]
//! workers = 4
//! pin = per-core
//! ```
//!
//! Overrides use dotted keys (`run.dt=1e-7`,
//! `scenario.par-pin-padded.workers=2`) and are applied after parsing.

use std::path::PathBuf;

use thiserror::Error;

use crate::engine::{
    BarrierKind, BenchScenario, EngineError, Executor, Layout, PinPlan, Priority,
    DEFAULT_LINE_SIZE,
};
use crate::oscillator::{OscillatorSystem, PhaseState};

pub const DEFAULT_DT: f64 = 1e-6;
pub const DEFAULT_NSTEPS: u64 = 100_000;
pub const DEFAULT_STRIDE: u64 = 100;
pub const DEFAULT_WARMUP: u64 = 1_000;

/// Fixed names of the built-in scenario matrix.
pub const DEFAULT_SCENARIOS: [&str; 5] = [
    "seq",
    "par-pin-padded",
    "par-pin-packed",
    "par-unpin-padded",
    "par-unpin-packed",
];

/// Two equal masses of 2 g on 20.25 kN/m springs, released from (2, -3).
pub const CANONICAL_CONFIG: &str = "\
[system]
masses  = 0.002, 0.002      # kg
springs = 20250, 20250      # N/m
[initial]
x0 = 2, -3                  # m
v0 = 0, 0                   # m/s
[run]
dt = 1e-6
nsteps = 100000
stride = 100
line_size = 64
";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(field: impl Into<String>, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }

    fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value.to_string(),
            None => self.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
            }),
        }
    }
}

/// Parsed but not yet validated key/value sections.
#[derive(Debug, Clone, Default)]
pub struct Document {
    sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut doc = Document::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Parse { line, message };
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?;
                let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
                if name.is_empty() {
                    return Err(err("empty section name".into()));
                }
                if doc.section(&name).is_some() {
                    return Err(err(format!("duplicate section [{name}]")));
                }
                doc.sections.push(Section {
                    name,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err("missing key".into()));
            }
            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| err(format!("`{key}` appears before any section")))?;
            if section.get(key).is_some() {
                return Err(err(format!("duplicate key `{key}` in [{}]", section.name)));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
            });
        }
        Ok(doc)
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn section_mut(&mut self, name: &str) -> Option<&mut Section> {
        self.sections.iter_mut().find(|s| s.name == name)
    }

    fn scenario_names(&self) -> Vec<String> {
        self.sections
            .iter()
            .filter_map(|s| s.name.strip_prefix("scenario ").map(str::to_string))
            .collect()
    }

    /// Inserts the built-in scenario sections when none are declared.
    fn materialize_default_scenarios(&mut self) {
        if !self.scenario_names().is_empty() {
            return;
        }
        for name in DEFAULT_SCENARIOS {
            self.sections.push(Section {
                name: format!("scenario {name}"),
                entries: Vec::new(),
            });
        }
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| invalid(assignment, "override must look like `section.key=value`"))?;
        let path = path.trim();
        let (section, key) = if let Some(rest) = path.strip_prefix("scenario.") {
            let (name, key) = rest
                .rsplit_once('.')
                .ok_or_else(|| invalid(path, "expected `scenario.<name>.<key>`"))?;
            self.materialize_default_scenarios();
            (format!("scenario {name}"), key)
        } else {
            let (section, key) = path
                .split_once('.')
                .ok_or_else(|| invalid(path, "expected `<section>.<key>`"))?;
            (section.to_string(), key)
        };
        if key.is_empty() {
            return Err(invalid(path, "missing key"));
        }
        match self.section_mut(&section) {
            Some(s) => s.set(key, value.trim()),
            None if matches!(section.as_str(), "system" | "initial" | "run") => {
                let mut s = Section {
                    name: section,
                    entries: Vec::new(),
                };
                s.set(key, value.trim());
                self.sections.push(s);
            }
            None => return Err(invalid(path, format!("no section [{section}]"))),
        }
        Ok(())
    }
}

/// Validated benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub system: OscillatorSystem,
    pub initial: PhaseState,
    pub dt: f64,
    pub nsteps: u64,
    pub stride: u64,
    pub line_size: usize,
    pub scenarios: Vec<BenchScenario>,
    pub output: Option<PathBuf>,
}

fn parse_f64(field: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| invalid(field, format!("`{value}` is not a number")))?;
    if !v.is_finite() {
        return Err(invalid(field, "must be finite"));
    }
    Ok(v)
}

fn parse_list(field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_f64(field, item))
        .collect()
}

fn parse_u64(field: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(field, format!("`{value}` is not a non-negative integer")))
}

fn check_keys(section: &Section, field: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    for e in &section.entries {
        if !allowed.contains(&e.key.as_str()) {
            return Err(invalid(format!("{field}.{}", e.key), "unknown key"));
        }
    }
    Ok(())
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides::<&str>(text, &[])
    }

    pub fn parse_with_overrides<S: AsRef<str>>(
        text: &str,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let mut doc = Document::parse(text)?;
        for o in overrides {
            doc.apply_override(o.as_ref())?;
        }
        Self::from_document(doc)
    }

    pub fn load<S: AsRef<str>>(
        path: &std::path::Path,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn canonical() -> Self {
        Self::parse(CANONICAL_CONFIG).expect("canonical config is valid")
    }

    pub fn from_document(mut doc: Document) -> Result<Self, ConfigError> {
        for s in &doc.sections {
            let known = matches!(s.name.as_str(), "system" | "initial" | "run")
                || s.name.starts_with("scenario ");
            if !known {
                return Err(invalid(s.name.clone(), "unknown section"));
            }
        }
        let system_sec = doc
            .section("system")
            .ok_or_else(|| invalid("system", "missing [system] section"))?;
        check_keys(system_sec, "system", &["masses", "springs"])?;
        let masses = parse_list(
            "system.masses",
            system_sec
                .get("masses")
                .ok_or_else(|| invalid("system.masses", "required"))?,
        )?;
        let springs = parse_list(
            "system.springs",
            system_sec
                .get("springs")
                .ok_or_else(|| invalid("system.springs", "required"))?,
        )?;
        if let Some(bad) = masses.iter().find(|m| **m <= 0.0) {
            return Err(invalid("system.masses", format!("mass {bad} must be positive")));
        }
        if let Some(bad) = springs.iter().find(|c| **c <= 0.0) {
            return Err(invalid(
                "system.springs",
                format!("spring rate {bad} must be positive"),
            ));
        }
        let system = OscillatorSystem::chain(masses, springs).map_err(|e| invalid("system", e))?;
        let dof = system.dof();

        let empty = Section {
            name: String::new(),
            entries: Vec::new(),
        };
        let initial_sec = doc.section("initial").unwrap_or(&empty);
        check_keys(initial_sec, "initial", &["x0", "v0"])?;
        let vector = |key: &str| -> Result<Vec<f64>, ConfigError> {
            let field = format!("initial.{key}");
            match initial_sec.get(key) {
                None => Ok(vec![0.0; dof]),
                Some(v) => {
                    let list = parse_list(&field, v)?;
                    if list.len() != dof {
                        return Err(invalid(
                            field,
                            format!("expected {dof} values, got {}", list.len()),
                        ));
                    }
                    Ok(list)
                }
            }
        };
        let initial = PhaseState::new(vector("x0")?, vector("v0")?)
            .map_err(|e| invalid("initial", e))?;

        let run = doc.section("run").unwrap_or(&empty);
        check_keys(
            run,
            "run",
            &[
                "dt",
                "nsteps",
                "stride",
                "line_size",
                "warmup",
                "sample_core_every",
                "output",
            ],
        )?;
        let dt = match run.get("dt") {
            Some(v) => parse_f64("run.dt", v)?,
            None => DEFAULT_DT,
        };
        if dt <= 0.0 {
            return Err(invalid("run.dt", "must be positive"));
        }
        let get_u64 = |key: &str, default: u64| -> Result<u64, ConfigError> {
            run.get(key)
                .map_or(Ok(default), |v| parse_u64(&format!("run.{key}"), v))
        };
        let nsteps = get_u64("nsteps", DEFAULT_NSTEPS)?;
        let stride = get_u64("stride", DEFAULT_STRIDE)?;
        let line_size = get_u64("line_size", DEFAULT_LINE_SIZE as u64)? as usize;
        let warmup = get_u64("warmup", DEFAULT_WARMUP)?;
        let sample_core_every = get_u64("sample_core_every", 1)?;
        if nsteps == 0 {
            return Err(invalid("run.nsteps", "must be at least 1"));
        }
        if stride == 0 {
            return Err(invalid("run.stride", "must be at least 1"));
        }
        crate::engine::shared::validate_line_size(line_size)
            .map_err(|e| invalid("run.line_size", e))?;
        let output = run.get("output").map(PathBuf::from);

        doc.materialize_default_scenarios();
        let mut scenarios = Vec::new();
        for name in doc.scenario_names() {
            let sec = doc
                .section(&format!("scenario {name}"))
                .expect("name came from the document");
            let field = |key: &str| format!("scenario.{name}.{key}");
            check_keys(
                sec,
                &format!("scenario.{name}"),
                &[
                    "executor",
                    "workers",
                    "pin",
                    "pin_base",
                    "layout",
                    "barrier",
                    "priority",
                    "warmup",
                    "sample_core_every",
                    "watchdog_ms",
                ],
            )?;
            let sc = scenario_from_section(
                &name,
                sec,
                &field,
                ScenarioDefaults {
                    dof,
                    dt,
                    nsteps,
                    stride,
                    line_size,
                    warmup,
                    sample_core_every,
                },
            )?;
            sc.validate(system.equations()).map_err(|e| match e {
                EngineError::InvalidScenario(msg) => invalid(format!("scenario.{name}"), msg),
                other => invalid(format!("scenario.{name}"), other),
            })?;
            scenarios.push(sc);
        }

        Ok(Self {
            system,
            initial,
            dt,
            nsteps,
            stride,
            line_size,
            scenarios,
            output,
        })
    }

    pub fn scenario(&self, name: &str) -> Option<&BenchScenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }
}

struct ScenarioDefaults {
    dof: usize,
    dt: f64,
    nsteps: u64,
    stride: u64,
    line_size: usize,
    warmup: u64,
    sample_core_every: u64,
}

/// Built-in knobs for the fixed scenario names; anything else starts from a
/// plain unpinned parallel plan.
fn preset(name: &str, d: &ScenarioDefaults) -> BenchScenario {
    let mut sc = BenchScenario::parallel(name, d.dof, d.dt, d.nsteps);
    sc.stride = d.stride;
    sc.line_size = d.line_size;
    sc.warmup = d.warmup;
    sc.sample_core_every = d.sample_core_every;
    if name == "seq" {
        sc.executor = Executor::Sequential;
        sc.workers = 1;
    }
    if name.starts_with("par-pin-") {
        sc.pin = PinPlan::PerCore { base: 0 };
        sc.priority = Priority::Elevated;
    }
    if name.ends_with("-packed") {
        sc.layout = Layout::Packed;
    }
    sc
}

fn scenario_from_section(
    name: &str,
    sec: &Section,
    field: &dyn Fn(&str) -> String,
    d: ScenarioDefaults,
) -> Result<BenchScenario, ConfigError> {
    let mut sc = preset(name, &d);
    if let Some(v) = sec.get("executor") {
        sc.executor = match v {
            "sequential" => Executor::Sequential,
            "parallel" => Executor::Parallel,
            _ => return Err(invalid(field("executor"), "expected sequential | parallel")),
        };
        if sc.executor == Executor::Sequential {
            sc.workers = 1;
        }
    }
    if let Some(v) = sec.get("workers") {
        sc.workers = parse_u64(&field("workers"), v)? as usize;
    }
    let base = match sec.get("pin_base") {
        Some(v) => parse_u64(&field("pin_base"), v)? as usize,
        None => 0,
    };
    if let PinPlan::PerCore { .. } = sc.pin {
        sc.pin = PinPlan::PerCore { base };
    }
    if let Some(v) = sec.get("pin") {
        sc.pin = match v {
            "none" => PinPlan::None,
            "per-core" => PinPlan::PerCore { base },
            _ => return Err(invalid(field("pin"), "expected none | per-core")),
        };
    }
    if let Some(v) = sec.get("layout") {
        sc.layout = match v {
            "packed" => Layout::Packed,
            "padded" => Layout::Padded,
            _ => return Err(invalid(field("layout"), "expected packed | padded")),
        };
    }
    if let Some(v) = sec.get("barrier") {
        sc.barrier = match v {
            "countdown-event" => BarrierKind::CountdownEvent,
            "spin" => BarrierKind::Spin,
            _ => return Err(invalid(field("barrier"), "expected countdown-event | spin")),
        };
    }
    if let Some(v) = sec.get("priority") {
        sc.priority = match v {
            "normal" => Priority::Normal,
            "elevated" => Priority::Elevated,
            _ => return Err(invalid(field("priority"), "expected normal | elevated")),
        };
    }
    if let Some(v) = sec.get("warmup") {
        sc.warmup = parse_u64(&field("warmup"), v)?;
    }
    if let Some(v) = sec.get("sample_core_every") {
        sc.sample_core_every = parse_u64(&field("sample_core_every"), v)?;
    }
    if let Some(v) = sec.get("watchdog_ms") {
        let ms = parse_u64(&field("watchdog_ms"), v)?;
        sc.watchdog = (ms > 0).then(|| std::time::Duration::from_millis(ms));
    }
    Ok(sc)
}
