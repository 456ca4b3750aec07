//! Wall-anchored spring-mass chain: model, derivative, fixed-step RK4.
//!
//! Mass `i` is tied to mass `i - 1` by spring `i`; spring 0 ties the first
//! mass to a fixed wall. The first-order phase vector is laid out as
//! `[x_0 .. x_{s-1}, v_0 .. v_{s-1}]`, so equation `j < s` is a position
//! equation and equation `j >= s` is a velocity equation.
//!
//! Every arithmetic expression in the stepper is evaluated component by
//! component, in ascending index order, through the small kernels at the
//! bottom of this file. The parallel engine calls the same kernels, which is
//! what makes its output bitwise comparable to [`integrate`].

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} must be positive and finite, got {value}")]
    NonPositiveParameter { what: &'static str, value: f64 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("chain must contain at least one mass")]
    EmptyChain,
    #[error("non-finite state{}", match .step { Some(s) => format!(" at step {s}"), None => String::new() })]
    NonFiniteState { step: Option<u64> },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid count: {0}")]
    InvalidCount(&'static str),
    #[error("analytic comparison needs a 2-DOF chain, got {0} DOF")]
    DimensionMismatch(usize),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn check_positive(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositiveParameter { what, value })
    }
}

/// Masses (kg) and spring rates (N/m) of a linear chain.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSystem {
    masses: Vec<f64>,
    springs: Vec<f64>,
}

impl OscillatorSystem {
    pub fn chain(masses: Vec<f64>, springs: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(ModelError::EmptyChain);
        }
        if masses.len() != springs.len() {
            return Err(ModelError::LengthMismatch {
                expected: masses.len(),
                actual: springs.len(),
            });
        }
        for &m in &masses {
            check_positive("mass", m)?;
        }
        for &c in &springs {
            check_positive("spring rate", c)?;
        }
        Ok(Self { masses, springs })
    }

    /// Chain of `dof` identical masses and springs.
    pub fn uniform(dof: usize, mass: f64, spring: f64) -> Result<Self> {
        Self::chain(vec![mass; dof], vec![spring; dof])
    }

    pub fn dof(&self) -> usize {
        self.masses.len()
    }

    /// Number of first-order equations, `2 * dof`.
    pub fn equations(&self) -> usize {
        2 * self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn springs(&self) -> &[f64] {
        &self.springs
    }

    /// `Some((m, C))` when this is the equal-parameter two-mass chain that
    /// has a closed-form modal solution.
    pub fn equal_parameter_pair(&self) -> Option<(f64, f64)> {
        match (self.masses.as_slice(), self.springs.as_slice()) {
            ([m1, m2], [c1, c2]) if m1 == m2 && c1 == c2 => Some((*m1, *c1)),
            _ => None,
        }
    }

    /// Right-hand side of first-order equation `eq` at phase vector `y`.
    #[inline]
    pub fn rate(&self, eq: usize, y: &[f64]) -> f64 {
        let s = self.masses.len();
        if eq < s {
            return y[s + eq];
        }
        let i = eq - s;
        let x = &y[..s];
        let prev = if i == 0 { 0.0 } else { x[i - 1] };
        let mut force = -self.springs[i] * (x[i] - prev);
        if i + 1 < s {
            force += self.springs[i + 1] * (x[i + 1] - x[i]);
        }
        force / self.masses[i]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.masses.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.masses.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

/// Positions (m), velocities (m/s), and simulated time (s).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub time: f64,
}

impl PhaseState {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(ModelError::LengthMismatch {
                expected: positions.len(),
                actual: velocities.len(),
            });
        }
        let state = Self {
            positions,
            velocities,
            time: 0.0,
        };
        if !state.is_finite() {
            return Err(ModelError::NonFiniteState { step: None });
        }
        Ok(state)
    }

    pub fn at_rest(dof: usize) -> Self {
        Self {
            positions: vec![0.0; dof],
            velocities: vec![0.0; dof],
            time: 0.0,
        }
    }

    pub fn dof(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.positions.iter().chain(&self.velocities).all(|v| v.is_finite())
    }

    /// Flattened `[positions, velocities]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.dof());
        y.extend_from_slice(&self.positions);
        y.extend_from_slice(&self.velocities);
        y
    }

    pub fn from_vector(y: &[f64], time: f64) -> Self {
        let s = y.len() / 2;
        Self {
            positions: y[..s].to_vec(),
            velocities: y[s..].to_vec(),
            time,
        }
    }

    /// Exact bit-level equality, including the sign of zero.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.time.to_bits() == other.time.to_bits()
            && same(&self.positions, &other.positions)
            && same(&self.velocities, &other.velocities)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDerivative {
    pub dpos: Vec<f64>,
    pub dvel: Vec<f64>,
}

/// Uniformly spaced samples of one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    pub dt: f64,
    pub stride: u64,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        self.samples.last().expect("trajectory always holds the initial state")
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dt.to_bits() == other.dt.to_bits()
            && self.stride == other.stride
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Index of the first sample that differs bitwise, if any.
    pub fn first_mismatch(&self, other: &Self) -> Option<usize> {
        let n = self.samples.len().min(other.samples.len());
        (0..n)
            .find(|&i| !self.samples[i].bitwise_eq(&other.samples[i]))
            .or_else(|| (self.samples.len() != other.samples.len()).then_some(n))
    }
}

pub fn derivative(system: &OscillatorSystem, state: &PhaseState) -> Result<PhaseDerivative> {
    system.check_len(state.positions.len())?;
    system.check_len(state.velocities.len())?;
    let y = state.to_vector();
    let s = system.dof();
    let rates: Vec<f64> = (0..2 * s).map(|j| system.rate(j, &y)).collect();
    Ok(PhaseDerivative {
        dpos: rates[..s].to_vec(),
        dvel: rates[s..].to_vec(),
    })
}

/// Step coefficients shared by the sequential and parallel steppers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepSizes {
    pub half: f64,
    pub full: f64,
    pub sixth: f64,
}

impl StepSizes {
    pub fn new(dt: f64) -> Self {
        Self {
            half: 0.5 * dt,
            full: dt,
            sixth: dt / 6.0,
        }
    }
}

#[inline]
pub(crate) fn stage_component(y: f64, k: f64, h: f64) -> f64 {
    y + h * k
}

#[inline]
pub(crate) fn combine_component(y: f64, k1: f64, k2: f64, k3: f64, k4: f64, sixth: f64) -> f64 {
    y + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

pub(crate) fn stage_vector(y: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for j in 0..y.len() {
        out[j] = stage_component(y[j], k[j], h);
    }
}

/// Scratch buffers for the allocation-free sequential stepper.
pub(crate) struct Rk4Scratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
        }
    }

    /// Advances `y` in place by one RK4 step.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, system: &OscillatorSystem, y: &mut [f64], h: StepSizes) {
        let n = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        for j in 0..n {
            k1[j] = system.rate(j, y);
        }
        stage_vector(y, k1, h.half, &mut self.stage);
        for j in 0..n {
            k2[j] = system.rate(j, &self.stage);
        }
        stage_vector(y, k2, h.half, &mut self.stage);
        for j in 0..n {
            k3[j] = system.rate(j, &self.stage);
        }
        stage_vector(y, k3, h.full, &mut self.stage);
        for j in 0..n {
            k4[j] = system.rate(j, &self.stage);
        }
        for j in 0..n {
            y[j] = combine_component(y[j], k1[j], k2[j], k3[j], k4[j], h.sixth);
        }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidStep(dt))
    }
}

/// One classical RK4 step; time advances by exactly `dt`.
pub fn rk4_step(system: &OscillatorSystem, state: &PhaseState, dt: f64) -> Result<PhaseState> {
    check_dt(dt)?;
    system.check_len(state.positions.len())?;
    system.check_len(state.velocities.len())?;
    let mut y = state.to_vector();
    Rk4Scratch::new(y.len()).step(system, &mut y, StepSizes::new(dt));
    let next = PhaseState::from_vector(&y, state.time + dt);
    if !next.is_finite() {
        return Err(ModelError::NonFiniteState { step: None });
    }
    Ok(next)
}

/// Time of step `n`, computed from the start time rather than accumulated.
#[inline]
pub(crate) fn step_time(t0: f64, n: u64, dt: f64) -> f64 {
    t0 + n as f64 * dt
}

pub(crate) fn check_run(
    system: &OscillatorSystem,
    state0: &PhaseState,
    dt: f64,
    nsteps: u64,
    stride: u64,
) -> Result<()> {
    check_dt(dt)?;
    if nsteps == 0 {
        return Err(ModelError::InvalidCount("nsteps must be at least 1"));
    }
    if stride == 0 {
        return Err(ModelError::InvalidCount("stride must be at least 1"));
    }
    system.check_len(state0.positions.len())?;
    system.check_len(state0.velocities.len())?;
    if !state0.is_finite() {
        return Err(ModelError::NonFiniteState { step: Some(0) });
    }
    Ok(())
}

/// Single-threaded reference integration.
///
/// Keeps the initial state and every `stride`-th state after it. Sample `n`
/// carries time `t0 + n * dt`.
pub fn integrate(
    system: &OscillatorSystem,
    state0: &PhaseState,
    dt: f64,
    nsteps: u64,
    stride: u64,
) -> Result<Trajectory> {
    check_run(system, state0, dt, nsteps, stride)?;
    let mut y = state0.to_vector();
    let mut scratch = Rk4Scratch::new(y.len());
    let h = StepSizes::new(dt);
    let mut samples = Vec::with_capacity((nsteps / stride) as usize + 1);
    samples.push(state0.clone());
    for n in 1..=nsteps {
        scratch.step(system, &mut y, h);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteState { step: Some(n) });
        }
        if n % stride == 0 {
            samples.push(PhaseState::from_vector(&y, step_time(state0.time, n, dt)));
        }
    }
    Ok(Trajectory {
        samples,
        dt,
        stride,
    })
}

/// Total mechanical energy (J): kinetic plus spring potential.
pub fn energy(system: &OscillatorSystem, state: &PhaseState) -> Result<f64> {
    system.check_len(state.positions.len())?;
    system.check_len(state.velocities.len())?;
    let mut e = 0.0;
    for (m, v) in system.masses.iter().zip(&state.velocities) {
        e += 0.5 * m * v * v;
    }
    let mut prev = 0.0;
    for (c, x) in system.springs.iter().zip(&state.positions) {
        let stretch = x - prev;
        e += 0.5 * c * stretch * stretch;
        prev = *x;
    }
    Ok(e)
}

/// Largest relative energy deviation from the first sample.
pub fn energy_drift(system: &OscillatorSystem, traj: &Trajectory) -> Result<f64> {
    let e0 = energy(system, &traj.samples[0])?;
    let mut worst: f64 = 0.0;
    for s in &traj.samples {
        let e = energy(system, s)?;
        let d = if e0 == 0.0 { (e - e0).abs() } else { ((e - e0) / e0).abs() };
        worst = worst.max(d);
    }
    Ok(worst)
}
