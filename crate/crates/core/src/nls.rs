//! Split-step Fourier solver for
//! `iε ∂_t u + (ε²/2) Δu = V u + ε^κ |u|² u` on a periodic box.
//!
//! Strang splitting: exact kinetic half-step `û_k ↦ e^{-iε|k|²Δt/4} û_k`,
//! exact pointwise step `u ↦ u e^{-i(Δt/ε)(V + ε^κ|u|²)}`, kinetic half-step.
//! Consecutive kinetic half-steps are merged.

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, LinearFit};
use crate::problem::SemiclassicalProblem;
use crate::scalar::{cis, is_finite_c, Real};
use crate::spectral::{lp_norm, ComplexField, Lp, PeriodicGrid, RealField};

/// Default relative energy allowed above two thirds of the Nyquist band.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-8;

/// Conserved quantities of one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics<T> {
    pub mass: T,
    pub energy: T,
}

#[derive(Clone, Copy, Debug)]
pub struct NlsOptions<T> {
    /// `None` switches the spectral-tail alarm off.
    pub tail_tolerance: Option<T>,
}

impl<T: Real> Default for NlsOptions<T> {
    fn default() -> Self {
        Self { tail_tolerance: Some(T::lit(DEFAULT_TAIL_TOLERANCE)) }
    }
}

/// Stored states of one run.
#[derive(Clone, Debug)]
pub struct NlsSolution<T: Real> {
    pub problem: SemiclassicalProblem<T>,
    pub dt: T,
    pub times: Vec<T>,
    pub fields: Vec<ComplexField<T>>,
    pub diagnostics: Vec<Diagnostics<T>>,
    /// Diagnostics of the initial state, the reference for drifts.
    pub initial: Diagnostics<T>,
}

impl<T: Real> NlsSolution<T> {
    /// Field stored at time `t` (matched to within a few ulps).
    pub fn at(&self, t: T) -> Option<&ComplexField<T>> {
        let tol = T::lit(1e-12) * (T::one() + t.abs());
        self.times.iter().position(|s| (*s - t).abs() <= tol).map(|i| &self.fields[i])
    }

    pub fn last(&self) -> &ComplexField<T> {
        self.fields.last().expect("a solution stores at least one state")
    }

    /// Largest `|m(t) - m(0)| / m(0)` over the stored states.
    pub fn mass_drift(&self) -> T {
        relative_drift(std::iter::once(self.initial.mass).chain(self.diagnostics.iter().map(|d| d.mass)))
    }

    pub fn energy_drift(&self) -> T {
        relative_drift(std::iter::once(self.initial.energy).chain(self.diagnostics.iter().map(|d| d.energy)))
    }
}

fn relative_drift<T: Real>(mut it: impl Iterator<Item = T>) -> T {
    let Some(first) = it.next() else { return T::zero() };
    let scale = if first.abs() > T::zero() { first.abs() } else { T::one() };
    it.fold(T::zero(), |m, v| m.max((v - first).abs() / scale))
}

/// Mass `∫|u|²` and energy `∫ (ε²/2)|∇u|² + V|u|² + (ε^κ/2)|u|⁴`.
pub fn diagnostics<T: Real>(u: &ComplexField<T>, potential: &RealField<T>, eps: T, coupling: T) -> Diagnostics<T> {
    let grid = u.grid();
    let dv = grid.cell_volume();
    let mut mass = T::zero();
    let mut pot = T::zero();
    for (z, &v) in u.values().iter().zip(potential.values()) {
        let r = z.norm_sqr();
        mass = mass + r;
        pot = pot + v * r + coupling * T::lit(0.5) * r * r;
    }
    let spec = u.spectrum();
    let n = T::from_usize_lossy(grid.len());
    let kin: T = grid
        .wavenumber_squared()
        .iter()
        .zip(&spec)
        .map(|(&k2, z)| k2 * z.norm_sqr())
        .sum();
    let kinetic = eps * eps * T::lit(0.5) * grid.volume() / (n * n) * kin;
    Diagnostics { mass: mass * dv, energy: kinetic + pot * dv }
}

struct Stepper<T: Real> {
    grid: PeriodicGrid<T>,
    k2: Vec<T>,
    potential: Vec<T>,
    eps: T,
    coupling: T,
}

impl<T: Real> Stepper<T> {
    fn kinetic(&self, u: &mut [Complex<T>], dt: T) {
        self.grid.forward(u);
        let c = -self.eps * dt / T::lit(2.0);
        for (z, &k2) in u.iter_mut().zip(&self.k2) {
            *z = *z * cis(c * k2);
        }
        self.grid.inverse(u);
    }

    fn pointwise(&self, u: &mut [Complex<T>], dt: T) {
        let c = dt / self.eps;
        for (z, &v) in u.iter_mut().zip(&self.potential) {
            *z = *z * cis(-c * (v + self.coupling * z.norm_sqr()));
        }
    }

    /// `steps` Strang steps of size `h`.
    fn advance(&self, u: &mut [Complex<T>], h: T, steps: usize) {
        if steps == 0 {
            return;
        }
        self.kinetic(u, h / T::lit(2.0));
        for s in 0..steps {
            self.pointwise(u, h);
            let last = s + 1 == steps;
            self.kinetic(u, if last { h / T::lit(2.0) } else { h });
        }
    }
}

fn check_state<T: Real>(u: &[Complex<T>], grid: &PeriodicGrid<T>, t: T, tol: Option<T>) -> Result<()> {
    if !u.iter().all(is_finite_c) {
        return Err(Error::Blowup { time: t.to_f64_lossy() });
    }
    if let Some(tol) = tol {
        let mut spec = u.to_vec();
        grid.forward(&mut spec);
        let tail = grid.tail_fraction(&spec, T::one(), T::lit(2.0 / 3.0));
        if tail > tol {
            return Err(Error::UnderResolved {
                time: t.to_f64_lossy(),
                tail: tail.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Solves up to `t_final` and stores the state at every entry of
/// `output_times` (sorted, inside `[0, t_final]`) and at `t_final`.
pub fn solve_nls<T: Real>(problem: &SemiclassicalProblem<T>, t_final: T, dt: T, output_times: &[T]) -> Result<NlsSolution<T>> {
    solve_nls_with(problem, t_final, dt, output_times, NlsOptions::default())
}

pub fn solve_nls_with<T: Real>(
    problem: &SemiclassicalProblem<T>,
    t_final: T,
    dt: T,
    output_times: &[T],
    options: NlsOptions<T>,
) -> Result<NlsSolution<T>> {
    problem.validate()?;
    if !problem.potential.is_bounded() {
        return Err(Error::invalid("the periodic solver needs a bounded periodic potential"));
    }
    if !(t_final >= T::zero()) || !t_final.is_finite() {
        return Err(Error::invalid("final time must be finite and non-negative"));
    }
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::invalid("time step must be positive"));
    }
    let mut schedule: Vec<T> = Vec::with_capacity(output_times.len() + 1);
    for &t in output_times {
        if !(t >= T::zero() && t <= t_final) {
            return Err(Error::invalid(format!("output time {t} lies outside [0, {t_final}]")));
        }
        if let Some(&prev) = schedule.last() {
            if t < prev {
                return Err(Error::invalid("output times must be sorted"));
            }
            if t == prev {
                continue;
            }
        }
        schedule.push(t);
    }
    if schedule.last() != Some(&t_final) {
        schedule.push(t_final);
    }

    let grid = problem.grid().clone();
    let potential = problem.potential.sample(&grid)?;
    let coupling = problem.regime.coupling(problem.eps);
    let stepper = Stepper {
        k2: grid.wavenumber_squared(),
        potential: potential.values().to_vec(),
        grid: grid.clone(),
        eps: problem.eps,
        coupling,
    };

    let u0 = problem.initial_field()?;
    let initial = diagnostics(&u0, &potential, problem.eps, coupling);
    let mut u = u0.into_values();
    check_state(&u, &grid, T::zero(), options.tail_tolerance)?;
    let mut t = T::zero();
    let mut times = Vec::with_capacity(schedule.len());
    let mut fields = Vec::with_capacity(schedule.len());
    let mut diags = Vec::with_capacity(schedule.len());
    for &target in &schedule {
        let span = target - t;
        if span > T::zero() {
            let steps = (span / dt - T::lit(1e-9)).ceil().max(T::one());
            let n = steps.to_usize().unwrap_or(1);
            stepper.advance(&mut u, span / steps, n);
            t = target;
            check_state(&u, &grid, t, options.tail_tolerance)?;
        }
        let field = ComplexField::from_parts(&grid, u.clone(), "u");
        diags.push(diagnostics(&field, &potential, problem.eps, coupling));
        times.push(target);
        fields.push(field);
    }
    Ok(NlsSolution { problem: problem.clone(), dt, times, fields, diagnostics: diags, initial })
}

/// Self-convergence of the splitting under step refinement.
#[derive(Clone, Debug, Serialize)]
pub struct StepAudit {
    pub dts: Vec<f64>,
    /// `‖u_{dt_i} - u_{dt_{i+1}}‖_{L²}` for consecutive steps.
    pub differences: Vec<f64>,
    pub fit: Option<LinearFit>,
    pub passed: bool,
}

/// Expected order of the splitting.
pub const SPLITTING_ORDER: f64 = 2.0;

/// Runs `problem` to `t` with each step in `dts` (strictly decreasing) and
/// fits the decay of successive differences against `dt`.
pub fn step_convergence_audit<T: Real>(problem: &SemiclassicalProblem<T>, t: T, dts: &[T]) -> Result<StepAudit> {
    if dts.len() < 2 {
        return Err(Error::invalid("the audit needs at least two step sizes"));
    }
    if dts.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("step sizes must be strictly decreasing"));
    }
    let finals: Vec<ComplexField<T>> = dts
        .iter()
        .map(|&dt| solve_nls(problem, t, dt, &[]).map(|s| s.last().clone()))
        .collect::<Result<_>>()?;
    let differences: Vec<f64> = finals
        .windows(2)
        .map(|w| w[0].sub(&w[1]).map(|d| lp_norm(&d, Lp::L2).to_f64_lossy()))
        .collect::<Result<_>>()?;
    let steps: Vec<f64> = dts[..dts.len() - 1].iter().map(|d| d.to_f64_lossy()).collect();
    let scale = finals[0].values().iter().map(|z| z.norm()).fold(T::zero(), T::max).to_f64_lossy().max(1.0);
    let exact = differences.iter().all(|d| *d <= 1e-13 * scale);
    let fit = if differences.len() >= 2 && !exact { Some(fit_power_law(&steps, &differences)?) } else { None };
    let passed = match &fit {
        Some(f) => (f.slope - SPLITTING_ORDER).abs() <= 0.2 && f.r_squared >= 0.99,
        None => exact,
    };
    Ok(StepAudit { dts: dts.iter().map(|d| d.to_f64_lossy()).collect(), differences, fit, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AmplitudeFamily, CosineMode, Criticality, InitialPhaseSpec, PotentialSpec};

    fn gaussian(g: &PeriodicGrid<f64>, w: f64, scale: f64) -> ComplexField<f64> {
        ComplexField::from_fn(g, "a0", |x| Complex::new(scale * (-x[0] * x[0] / (w * w)).exp(), 0.0)).unwrap()
    }

    #[test]
    fn plane_wave_is_exact() {
        let g = PeriodicGrid::new_1d(32.0, 64).unwrap();
        let c: f64 = 0.8;
        let a0 = ComplexField::from_fn(&g, "a0", |_| Complex::new(c, 0.0)).unwrap();
        let eps = 0.05;
        let p = SemiclassicalProblem::free(eps, Criticality::Supercritical, a0).unwrap();
        let sol = solve_nls(&p, 0.3, eps / 50.0, &[0.1, 0.2]).unwrap();
        for (t, u) in sol.times.iter().zip(&sol.fields) {
            let expect = c * cis(-c * c * t / eps);
            assert!(u.values().iter().all(|z| (z - expect).norm() < 1e-12));
        }
        let audit = step_convergence_audit(&p, 0.2, &[0.01, 0.005, 0.0025]).unwrap();
        assert!(audit.passed && audit.fit.is_none());
    }

    #[test]
    fn conserves_mass_and_energy() {
        let g = PeriodicGrid::new_1d(32.0, 1024).unwrap();
        let eps = 0.1;
        let v = PotentialSpec::Periodic {
            modes: vec![CosineMode { amplitude: 0.2, wavevector: [std::f64::consts::TAU / 16.0, 0.0], phase: 0.0 }],
        };
        for regime in [Criticality::Supercritical, Criticality::Critical, Criticality::Subcritical] {
            let p = SemiclassicalProblem::new(eps, regime, v.clone(), InitialPhaseSpec::Zero, AmplitudeFamily::fixed(gaussian(&g, 1.0, 1.0)))
                .unwrap();
            let sol = solve_nls(&p, 1.0, eps / 50.0, &[0.25, 0.5, 0.75]).unwrap();
            assert!(sol.mass_drift() <= 1e-10, "{:?}", sol.mass_drift());
            assert!(sol.energy_drift() <= 1e-6, "{:?}", sol.energy_drift());
        }
    }

    #[test]
    fn gauge_equivariance() {
        let g = PeriodicGrid::new_1d(32.0, 512).unwrap();
        let a0 = gaussian(&g, 1.0, 1.0);
        let theta = 0.9;
        let rotated = a0.scale(cis(theta));
        let p = SemiclassicalProblem::free(0.1, Criticality::Supercritical, a0).unwrap();
        let q = SemiclassicalProblem::free(0.1, Criticality::Supercritical, rotated).unwrap();
        let u = solve_nls(&p, 0.3, 0.002, &[]).unwrap();
        let v = solve_nls(&q, 0.3, 0.002, &[]).unwrap();
        for (a, b) in u.last().values().iter().zip(v.last().values()) {
            assert!((a * cis(theta) - b).norm() < 1e-13);
        }
    }

    #[test]
    fn scaling_law_one_dimension() {
        // n = 1, s = 0: u(t, x) = λ^{1/2} ψ(λ^{3/2} t, λx) with ε = λ^{-1/2}.
        let lambda: f64 = 4.0;
        let eps = lambda.powf(-0.5);
        let n = 256;
        let big = PeriodicGrid::new_1d(32.0, n).unwrap();
        let small = PeriodicGrid::new_1d(32.0 / lambda, n).unwrap();
        let psi0 = gaussian(&big, 1.0, 1.0);
        let u0 = ComplexField::new(&small, psi0.values().iter().map(|z| z * lambda.sqrt()).collect(), "u0").unwrap();
        let t = 0.05;
        let dt = 1e-3;
        let slow = lambda.powf(1.5);
        let psi = solve_nls(&SemiclassicalProblem::free(1.0, Criticality::Supercritical, psi0).unwrap(), slow * t, slow * dt, &[]).unwrap();
        let u = solve_nls(&SemiclassicalProblem::free(eps, Criticality::Supercritical, u0).unwrap(), t, dt, &[]).unwrap();
        let worst = u
            .last()
            .values()
            .iter()
            .zip(psi.last().values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b * lambda.sqrt()).norm()));
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn second_order_self_convergence() {
        let g = PeriodicGrid::new_1d(32.0, 512).unwrap();
        let p = SemiclassicalProblem::free(0.1, Criticality::Supercritical, gaussian(&g, 1.0, 1.0)).unwrap();
        let audit = step_convergence_audit(&p, 0.2, &[0.004, 0.002, 0.001, 0.0005]).unwrap();
        let fit = audit.fit.unwrap();
        assert!((fit.slope - 2.0).abs() <= 0.2, "{fit:?}");
        assert!(fit.r_squared >= 0.99);
        assert!(audit.passed);
    }

    #[test]
    fn rejects_bad_runs() {
        let g = PeriodicGrid::new_1d(32.0, 64).unwrap();
        let a0 = gaussian(&g, 1.0, 1.0);
        let p = SemiclassicalProblem::free(0.1, Criticality::Supercritical, a0.clone()).unwrap();
        assert!(solve_nls(&p, 1.0, 0.0, &[]).is_err());
        assert!(solve_nls(&p, 1.0, 0.01, &[2.0]).is_err());
        assert!(solve_nls(&p, 1.0, 0.01, &[0.5, 0.2]).is_err());
        let h = SemiclassicalProblem::new(0.1, Criticality::Critical, PotentialSpec::Harmonic { omega: vec![1.0] }, InitialPhaseSpec::Zero, AmplitudeFamily::fixed(a0))
            .unwrap();
        assert!(solve_nls(&h, 1.0, 0.01, &[]).is_err());
        // a coarse grid cannot hold the oscillations of a small-ε run
        let q = SemiclassicalProblem::free(0.01, Criticality::Supercritical, gaussian(&g, 1.0, 1.0)).unwrap();
        assert!(matches!(solve_nls(&q, 0.5, 2e-4, &[]), Err(Error::UnderResolved { .. })));
        let off = solve_nls_with(&q, 0.5, 2e-4, &[], NlsOptions { tail_tolerance: None });
        assert!(off.is_ok());
    }

    #[test]
    fn stores_requested_times() {
        let g = PeriodicGrid::new_1d(32.0, 256).unwrap();
        let p = SemiclassicalProblem::free(0.2, Criticality::Subcritical, gaussian(&g, 1.0, 1.0)).unwrap();
        let sol = solve_nls(&p, 0.5, 0.003, &[0.0, 0.13, 0.13, 0.4]).unwrap();
        assert_eq!(sol.times, vec![0.0, 0.13, 0.4, 0.5]);
        assert_eq!(sol.fields[0].values(), p.initial_field().unwrap().values());
        assert!(sol.at(0.13).is_some() && sol.at(0.2).is_none());
    }
}
