//! Closed-form normal modes of the equal-parameter two-mass chain.
//!
//! With `m1 = m2 = m` and `C1 = C2 = C` the characteristic polynomial is
//! `m^2 l^4 + 3 m C l^2 + C^2 = 0`. Its roots are purely imaginary,
//! `l = +-j w`, with `w^2 = C (3 +- sqrt 5) / (2 m)`. Within each mode the
//! second mass moves as `r * x1`, where `r = 2 - m w^2 / C`.

use crate::oscillator::{check_positive, ModelError, OscillatorSystem, PhaseState, Result, Trajectory};

/// Eigenfrequencies, mode ratios, and modal coefficients.
///
/// Mode 1 is the fast mode (`omega1`), mode 2 the slow one. Positions are
/// `x1 = a1c cos w1 t + a1s sin w1 t + a2c cos w2 t + a2s sin w2 t` and
/// `x2 = r1 (mode 1 part) + r2 (mode 2 part)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Analytic2DOF {
    pub omega1: f64,
    pub omega2: f64,
    pub r1: f64,
    pub r2: f64,
    pub a1c: f64,
    pub a1s: f64,
    pub a2c: f64,
    pub a2s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub max_abs_error: f64,
    pub rmse: f64,
    pub at_time: f64,
}

/// `(omega1, omega2)` in rad/s, `omega1 > omega2`.
pub fn characteristic_frequencies(m: f64, c: f64) -> Result<(f64, f64)> {
    check_positive("mass", m)?;
    check_positive("spring rate", c)?;
    let sqrt5 = 5f64.sqrt();
    let fast = (c * (3.0 + sqrt5) / (2.0 * m)).sqrt();
    let slow = (c * (3.0 - sqrt5) / (2.0 * m)).sqrt();
    Ok((fast, slow))
}

/// Amplitude ratios `x2 / x1` of the fast and slow modes.
pub fn mode_ratios(m: f64, c: f64) -> Result<(f64, f64)> {
    let (w1, w2) = characteristic_frequencies(m, c)?;
    Ok((2.0 - m * w1 * w1 / c, 2.0 - m * w2 * w2 / c))
}

pub fn analytic_solution(m: f64, c: f64, x0: [f64; 2], v0: [f64; 2]) -> Result<Analytic2DOF> {
    let (omega1, omega2) = characteristic_frequencies(m, c)?;
    let (r1, r2) = mode_ratios(m, c)?;
    if !x0.iter().chain(&v0).all(|v| v.is_finite()) {
        return Err(ModelError::NonFiniteState { step: None });
    }
    // a1 + a2 = p1, r1 a1 + r2 a2 = p2 (Cramer)
    let det = r2 - r1;
    let a1c = (r2 * x0[0] - x0[1]) / det;
    let a2c = (x0[1] - r1 * x0[0]) / det;
    let a1s = (r2 * v0[0] - v0[1]) / (det * omega1);
    let a2s = (v0[1] - r1 * v0[0]) / (det * omega2);
    Ok(Analytic2DOF {
        omega1,
        omega2,
        r1,
        r2,
        a1c,
        a1s,
        a2c,
        a2s,
    })
}

/// Closed form for a system and initial state, when one exists.
pub fn analytic_for(system: &OscillatorSystem, state0: &PhaseState) -> Result<Analytic2DOF> {
    let (m, c) = system
        .equal_parameter_pair()
        .ok_or(ModelError::DimensionMismatch(system.dof()))?;
    if state0.dof() != 2 {
        return Err(ModelError::LengthMismatch {
            expected: 2,
            actual: state0.dof(),
        });
    }
    analytic_solution(
        m,
        c,
        [state0.positions[0], state0.positions[1]],
        [state0.velocities[0], state0.velocities[1]],
    )
}

impl Analytic2DOF {
    fn modes(&self, t: f64) -> (f64, f64) {
        let (s1, c1) = (self.omega1 * t).sin_cos();
        let (s2, c2) = (self.omega2 * t).sin_cos();
        (self.a1c * c1 + self.a1s * s1, self.a2c * c2 + self.a2s * s2)
    }

    /// Positions `(x1, x2)` at time `t`.
    pub fn positions(&self, t: f64) -> (f64, f64) {
        let (q1, q2) = self.modes(t);
        (q1 + q2, self.r1 * q1 + self.r2 * q2)
    }

    /// Velocities `(v1, v2)` at time `t`.
    pub fn velocities(&self, t: f64) -> (f64, f64) {
        let (s1, c1) = (self.omega1 * t).sin_cos();
        let (s2, c2) = (self.omega2 * t).sin_cos();
        let q1 = self.omega1 * (self.a1s * c1 - self.a1c * s1);
        let q2 = self.omega2 * (self.a2s * c2 - self.a2c * s2);
        (q1 + q2, self.r1 * q1 + self.r2 * q2)
    }

    pub fn state(&self, t: f64) -> PhaseState {
        let (x1, x2) = self.positions(t);
        let (v1, v2) = self.velocities(t);
        PhaseState {
            positions: vec![x1, x2],
            velocities: vec![v1, v2],
            time: t,
        }
    }

    /// Period of the slow mode, `2 pi / omega2`.
    pub fn slow_period(&self) -> f64 {
        std::f64::consts::TAU / self.omega2
    }

    /// Bound on `|x1|, |x2|` over all time.
    pub fn envelope(&self) -> f64 {
        let amp1 = self.a1c.hypot(self.a1s);
        let amp2 = self.a2c.hypot(self.a2s);
        amp1 * (1.0 + self.r1.abs()) + amp2 * (1.0 + self.r2.abs())
    }
}

pub fn eval_analytic(sol: &Analytic2DOF, t: f64) -> (f64, f64) {
    sol.positions(t)
}

/// Pointwise position error of a 2-DOF trajectory against the closed form.
pub fn compare(traj: &Trajectory, sol: &Analytic2DOF) -> Result<ErrorReport> {
    let mut max_abs_error: f64 = 0.0;
    let mut at_time = traj.samples.first().map_or(0.0, |s| s.time);
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for s in &traj.samples {
        if s.dof() != 2 {
            return Err(ModelError::DimensionMismatch(s.dof()));
        }
        let (x1, x2) = sol.positions(s.time);
        for e in [(s.positions[0] - x1).abs(), (s.positions[1] - x2).abs()] {
            sum_sq += e * e;
            n += 1;
            if e > max_abs_error {
                max_abs_error = e;
                at_time = s.time;
            }
        }
    }
    let rmse = if n == 0 { 0.0 } else { (sum_sq / n as f64).sqrt() };
    Ok(ErrorReport {
        // rmse can exceed the max by an ulp through rounding
        max_abs_error: max_abs_error.max(rmse),
        rmse,
        at_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::integrate;

    /// Independent root finder: bisection on `p(w) = m^2 w^4 - 3 m C w^2 + C^2`,
    /// the characteristic quartic evaluated at `l = j w`.
    fn quartic_roots(m: f64, c: f64) -> (f64, f64) {
        let p = |w: f64| m * m * w.powi(4) - 3.0 * m * c * w * w + c * c;
        let bisect = |mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (p(lo) > 0.0) == (p(mid) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        // p(0) = C^2 > 0, p(sqrt(1.5 C/m)) = -1.25 C^2 < 0, p -> +inf
        let mid = (1.5 * c / m).sqrt();
        let big = 10.0 * (c / m).sqrt();
        (bisect(mid, big), bisect(0.0, mid))
    }

    #[test]
    fn canonical_frequencies() {
        let (w1, w2) = characteristic_frequencies(0.002, 20250.0).unwrap();
        let (q1, q2) = quartic_roots(0.002, 20250.0);
        assert!((w1 - 5148.55).abs() < 0.01, "{w1}");
        assert!((w2 - 1966.57).abs() < 0.01, "{w2}");
        assert!((w1 - q1).abs() < 1e-9 * q1);
        assert!((w2 - q2).abs() < 1e-9 * q2);
    }

    #[test]
    fn unit_frequencies() {
        let (w1, w2) = characteristic_frequencies(1.0, 1.0).unwrap();
        let (q1, q2) = quartic_roots(1.0, 1.0);
        assert!((w1 - 1.618034).abs() < 1e-6);
        assert!((w2 - 0.618034).abs() < 1e-6);
        assert!((w1 - q1).abs() < 1e-12 && (w2 - q2).abs() < 1e-12);
    }

    #[test]
    fn frequency_ratio_is_parameter_free() {
        for (m, c) in [(0.37, 12.5), (4.2e-3, 9.1e4), (12.0, 0.03)] {
            let (w1, w2) = characteristic_frequencies(m, c).unwrap();
            let (q1, q2) = quartic_roots(m, c);
            assert!((w1 / w2 - 2.618034).abs() < 1e-6);
            assert!((q1 / q2 - w1 / w2).abs() < 1e-9);
        }
        assert!(characteristic_frequencies(0.0, 1.0).is_err());
        assert!(characteristic_frequencies(1.0, -1.0).is_err());
    }

    #[test]
    fn mode_ratios_satisfy_both_rows() {
        for (m, c) in [(0.002, 20250.0), (1.0, 1.0), (3.3, 0.7)] {
            let (r1, r2) = mode_ratios(m, c).unwrap();
            let (w1, w2) = characteristic_frequencies(m, c).unwrap();
            assert!((r1 - -0.618034).abs() < 1e-6);
            assert!((r2 - 1.618034).abs() < 1e-6);
            assert!((r1 * r2 + 1.0).abs() < 1e-12);
            assert!((r2 - r1 - 5f64.sqrt()).abs() < 1e-12);
            for (w, r) in [(w1, r1), (w2, r2)] {
                let l2 = -w * w;
                // (m l^2 + 2C) A - C B = 0 and -C A + (m l^2 + C) B = 0, A = 1
                assert!(((m * l2 + 2.0 * c) - c * r).abs() < 1e-9 * c);
                assert!((-c + (m * l2 + c) * r).abs() < 1e-9 * c);
            }
        }
    }

    #[test]
    fn canonical_coefficients() {
        let sol = analytic_solution(0.002, 20250.0, [2.0, -3.0], [0.0, 0.0]).unwrap();
        assert!((sol.a1c - 2.788854).abs() < 1e-6);
        assert!((sol.a2c - -0.788854).abs() < 1e-6);
        assert_eq!((sol.a1s, sol.a2s), (0.0, 0.0));
        let (x1, x2) = sol.positions(0.0);
        assert!((x1 - 2.0).abs() < 1e-12 && (x2 + 3.0).abs() < 1e-12);
    }

    #[test]
    fn velocity_initial_conditions_are_met() {
        let sol = analytic_solution(0.5, 3.0, [0.1, -0.4], [1.5, 2.5]).unwrap();
        let (v1, v2) = sol.velocities(0.0);
        assert!((v1 - 1.5).abs() < 1e-12 && (v2 - 2.5).abs() < 1e-12);
        // velocity is the time derivative of position (central difference)
        let h = 1e-6;
        let t = 0.37;
        let (p, q) = (sol.positions(t + h), sol.positions(t - h));
        let (u1, u2) = sol.velocities(t);
        assert!(((p.0 - q.0) / (2.0 * h) - u1).abs() < 1e-6);
        assert!(((p.1 - q.1) / (2.0 * h) - u2).abs() < 1e-6);
    }

    #[test]
    fn zero_and_pure_mode_solutions() {
        let sol = analytic_solution(1.0, 1.0, [0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!((sol.a1c, sol.a1s, sol.a2c, sol.a2s), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(sol.positions(12.3), (0.0, 0.0));

        let (_, r2) = mode_ratios(1.0, 1.0).unwrap();
        let sol = analytic_solution(1.0, 1.0, [1.0, r2], [0.0, 0.0]).unwrap();
        assert!(sol.a1c.abs() < 1e-15);
        assert!((sol.a2c - 1.0).abs() < 1e-15);
        for k in 0..50 {
            let (x1, x2) = sol.positions(k as f64 * 0.173);
            assert!((x2 - r2 * x1).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_matches_fine_rk4() {
        let sys = OscillatorSystem::uniform(2, 0.002, 20250.0).unwrap();
        let st = PhaseState::new(vec![2.0, -3.0], vec![0.0, 0.0]).unwrap();
        let sol = analytic_for(&sys, &st).unwrap();
        let traj = integrate(&sys, &st, 1e-7, 10_000, 10_000).unwrap();
        let end = traj.last();
        let (x1, x2) = sol.positions(end.time);
        assert!((end.time - 0.001).abs() < 1e-15);
        assert!((end.positions[0] - x1).abs() < 1e-8);
        assert!((end.positions[1] - x2).abs() < 1e-8);
    }

    #[test]
    fn compare_against_self_is_exact() {
        let sol = analytic_solution(0.002, 20250.0, [2.0, -3.0], [0.0, 0.0]).unwrap();
        let samples = (0..100).map(|i| sol.state(i as f64 * 1e-5)).collect();
        let traj = Trajectory {
            samples,
            dt: 1e-5,
            stride: 1,
        };
        let rep = compare(&traj, &sol).unwrap();
        assert_eq!(rep.max_abs_error, 0.0);
        assert_eq!(rep.rmse, 0.0);
    }

    #[test]
    fn compare_rejects_other_dimensions() {
        let sol = analytic_solution(1.0, 1.0, [1.0, 0.0], [0.0, 0.0]).unwrap();
        let traj = Trajectory {
            samples: vec![PhaseState::at_rest(3)],
            dt: 1.0,
            stride: 1,
        };
        assert_eq!(compare(&traj, &sol), Err(ModelError::DimensionMismatch(3)));
        let sys = OscillatorSystem::uniform(3, 1.0, 1.0).unwrap();
        assert!(analytic_for(&sys, &PhaseState::at_rest(3)).is_err());
    }

    #[test]
    fn compare_canonical_rk4() {
        let sys = OscillatorSystem::uniform(2, 0.002, 20250.0).unwrap();
        let st = PhaseState::new(vec![2.0, -3.0], vec![0.0, 0.0]).unwrap();
        let sol = analytic_for(&sys, &st).unwrap();
        let traj = integrate(&sys, &st, 1e-6, 10_000, 1).unwrap();
        let rep = compare(&traj, &sol).unwrap();
        assert!(rep.max_abs_error < 1e-6, "{rep:?}");
        assert!(rep.rmse <= rep.max_abs_error);
    }
}
