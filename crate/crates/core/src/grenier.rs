//! Phase–amplitude systems of the super-critical regime (`κ = 0`).
//!
//! With `u^ε = a^ε e^{iφ^ε/ε}`:
//!
//! ```text
//! ∂_t φ + ½|∇φ|² + V + |a|² = 0
//! ∂_t a + ∇φ·∇a + ½ a Δφ = i(ε/2) Δa
//! ```
//!
//! The skew-free variant drops the right-hand side of the amplitude equation,
//! the limit variant also replaces `a₀^ε` by `a₀`. The linearized corrector
//! `(φ¹, a¹)` around the limit solution is integrated by [`solve_corrector`].
//!
//! Spatial derivatives are spectral, products are dealiased by the 2/3 rule,
//! transport is advanced with RK4 and the skew term exactly in Fourier space
//! (Strang splitting).

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Criticality, SemiclassicalProblem};
use crate::scalar::{cis, is_finite_c, Real};
use crate::spectral::{apply_derivative, ensure_same_grid, ComplexField, PeriodicGrid, RealField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    SkewFree,
    Limit,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::SkewFree => "skew_free",
            Self::Limit => "limit",
        }
    }
}

/// Snapshot of the phase–amplitude unknowns.
#[derive(Clone, Debug)]
pub struct GrenierState<T: Real> {
    pub t: T,
    pub amplitude: ComplexField<T>,
    pub phase: RealField<T>,
    /// `∇φ`, one field per axis.
    pub velocity: Vec<RealField<T>>,
}

impl<T: Real> GrenierState<T> {
    fn new(grid: &PeriodicGrid<T>, t: T, phi: &[T], a: &[Complex<T>]) -> Self {
        let hat = forward_real(grid, phi);
        let velocity = (0..grid.dim())
            .map(|axis| {
                let mut s = hat.clone();
                apply_derivative(grid, &mut s, axis, 1);
                grid.inverse(&mut s);
                RealField::from_parts(grid, s.iter().map(|z| z.re).collect(), format!("v{axis}"))
            })
            .collect();
        Self {
            t,
            amplitude: ComplexField::from_parts(grid, a.to_vec(), "a"),
            phase: RealField::from_parts(grid, phi.to_vec(), "phi"),
            velocity,
        }
    }

    /// Density `|a|²`.
    pub fn density(&self) -> RealField<T> {
        self.amplitude.modulus().map("rho", |m| m * m).expect("finite state")
    }
}

/// Stored states at uniformly spaced times.
#[derive(Clone, Debug)]
pub struct GrenierTrajectory<T: Real> {
    pub variant: Variant,
    /// `ε` of the skew term and data; zero for the limit.
    pub eps: T,
    /// Integration step.
    pub dt: T,
    /// Spacing of the stored states.
    pub output_step: T,
    pub potential: RealField<T>,
    pub states: Vec<GrenierState<T>>,
}

impl<T: Real> GrenierTrajectory<T> {
    pub fn grid(&self) -> &PeriodicGrid<T> {
        self.potential.grid()
    }

    pub fn times(&self) -> Vec<T> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &GrenierState<T> {
        self.states.last().expect("a trajectory stores at least one state")
    }

    /// State stored at `t`, matched to a small fraction of the output step.
    pub fn at(&self, t: T) -> Option<&GrenierState<T>> {
        let tol = T::lit(1e-9) * self.output_step;
        self.states.iter().find(|s| (s.t - t).abs() <= tol)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GrenierOptions<T> {
    /// Store every `output_stride`-th step.
    pub output_stride: usize,
    /// Allowed relative spectral energy above two thirds of Nyquist; `None` disables the alarm.
    pub tail_tolerance: Option<T>,
}

impl<T: Real> Default for GrenierOptions<T> {
    fn default() -> Self {
        Self { output_stride: 1, tail_tolerance: Some(T::lit(1e-8)) }
    }
}

fn forward_real<T: Real>(grid: &PeriodicGrid<T>, f: &[T]) -> Vec<Complex<T>> {
    let mut s: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
    grid.forward(&mut s);
    s
}

/// Spectral operators shared by the transport right-hand sides.
struct Operators<T: Real> {
    grid: PeriodicGrid<T>,
    keep: Vec<bool>,
    k2: Vec<T>,
}

impl<T: Real> Operators<T> {
    fn new(grid: &PeriodicGrid<T>) -> Self {
        Self { grid: grid.clone(), keep: grid.dealias_mask(), k2: grid.wavenumber_squared() }
    }

    fn gradient(&self, hat: &[Complex<T>]) -> Vec<Vec<Complex<T>>> {
        (0..self.grid.dim())
            .map(|axis| {
                let mut s = hat.to_vec();
                apply_derivative(&self.grid, &mut s, axis, 1);
                self.grid.inverse(&mut s);
                s
            })
            .collect()
    }

    fn laplacian(&self, hat: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut s: Vec<Complex<T>> = hat.iter().zip(&self.k2).map(|(z, &k2)| -*z * k2).collect();
        self.grid.inverse(&mut s);
        s
    }

    fn dealias(&self, f: &mut [Complex<T>]) {
        self.grid.forward(f);
        for (z, &keep) in f.iter_mut().zip(&self.keep) {
            if !keep {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
        self.grid.inverse(f);
    }

    fn dealias_real(&self, f: &mut [T]) {
        let mut s: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.dealias(&mut s);
        for (v, z) in f.iter_mut().zip(s) {
            *v = z.re;
        }
    }

    fn skew(&self, a: &mut [Complex<T>], eps: T, dt: T) {
        self.grid.forward(a);
        let c = -eps * dt / T::lit(2.0);
        for (z, &k2) in a.iter_mut().zip(&self.k2) {
            *z = *z * cis(c * k2);
        }
        self.grid.inverse(a);
    }

    /// `(-½|∇φ|² - V - |a|², -∇φ·∇a - ½aΔφ)`.
    fn transport(&self, phi: &[T], a: &[Complex<T>], potential: &[T]) -> (Vec<T>, Vec<Complex<T>>) {
        let phi_hat = forward_real(&self.grid, phi);
        let mut a_hat = a.to_vec();
        self.grid.forward(&mut a_hat);
        let gp = self.gradient(&phi_hat);
        let lp = self.laplacian(&phi_hat);
        let ga = self.gradient(&a_hat);
        let n = phi.len();
        let mut dphi = vec![T::zero(); n];
        let mut da = vec![Complex::new(T::zero(), T::zero()); n];
        let half = T::lit(0.5);
        for i in 0..n {
            let mut v2 = T::zero();
            let mut adv = Complex::new(T::zero(), T::zero());
            for (g, h) in gp.iter().zip(&ga) {
                v2 = v2 + g[i].re * g[i].re;
                adv = adv + h[i] * g[i].re;
            }
            dphi[i] = -half * v2 - potential[i] - a[i].norm_sqr();
            da[i] = -adv - a[i] * lp[i].re * half;
        }
        self.dealias_real(&mut dphi);
        self.dealias(&mut da);
        (dphi, da)
    }
}

fn axpy_real<T: Real>(x: &[T], k: &[T], h: T) -> Vec<T> {
    x.iter().zip(k).map(|(&a, &b)| a + b * h).collect()
}

fn axpy_complex<T: Real>(x: &[Complex<T>], k: &[Complex<T>], h: T) -> Vec<Complex<T>> {
    x.iter().zip(k).map(|(&a, &b)| a + b * h).collect()
}

fn combine_real<T: Real>(x: &mut [T], k: [&[T]; 4], h: T) {
    let sixth = h / T::lit(6.0);
    for i in 0..x.len() {
        x[i] = x[i] + sixth * (k[0][i] + T::lit(2.0) * (k[1][i] + k[2][i]) + k[3][i]);
    }
}

fn combine_complex<T: Real>(x: &mut [Complex<T>], k: [&[Complex<T>]; 4], h: T) {
    let sixth = h / T::lit(6.0);
    for i in 0..x.len() {
        x[i] = x[i] + (k[0][i] + (k[1][i] + k[2][i]) * T::lit(2.0) + k[3][i]) * sixth;
    }
}

fn check<T: Real>(grid: &PeriodicGrid<T>, t: T, phi: &[T], a: &[Complex<T>], tol: Option<T>) -> Result<()> {
    if !a.iter().all(is_finite_c) || !phi.iter().all(|v| v.is_finite()) {
        return Err(Error::Blowup { time: t.to_f64_lossy() });
    }
    if let Some(tol) = tol {
        let mut spec = a.to_vec();
        grid.forward(&mut spec);
        let tail = grid.tail_fraction(&spec, T::one(), T::lit(2.0 / 3.0));
        if tail > tol {
            return Err(Error::UnderResolved { time: t.to_f64_lossy(), tail: tail.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
        }
    }
    Ok(())
}

fn step_count<T: Real>(t_final: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::invalid("time step must be positive"));
    }
    if !(t_final >= T::zero()) || !t_final.is_finite() {
        return Err(Error::invalid("final time must be finite and non-negative"));
    }
    let steps = (t_final / dt).round();
    if (steps * dt - t_final).abs() > T::lit(1e-9) * t_final.max(dt) {
        return Err(Error::invalid(format!("final time {t_final} is not a multiple of the step {dt}")));
    }
    Ok(steps.to_usize().unwrap_or(0))
}

pub fn solve_phase_amplitude<T: Real>(
    problem: &SemiclassicalProblem<T>,
    t_final: T,
    dt: T,
    variant: Variant,
) -> Result<GrenierTrajectory<T>> {
    solve_phase_amplitude_with(problem, t_final, dt, variant, GrenierOptions::default())
}

/// Integrates the chosen variant to `t_final`; `t_final` must be a whole
/// number of steps.
pub fn solve_phase_amplitude_with<T: Real>(
    problem: &SemiclassicalProblem<T>,
    t_final: T,
    dt: T,
    variant: Variant,
    options: GrenierOptions<T>,
) -> Result<GrenierTrajectory<T>> {
    problem.validate()?;
    if problem.regime != Criticality::Supercritical {
        return Err(Error::invalid("the phase-amplitude systems describe the kappa = 0 regime"));
    }
    if !problem.potential.is_bounded() {
        return Err(Error::invalid("the phase-amplitude solver needs a bounded periodic potential"));
    }
    if !problem.phase.is_periodic() {
        return Err(Error::invalid("the phase-amplitude solver needs a periodic initial phase"));
    }
    if options.output_stride == 0 {
        return Err(Error::invalid("output stride must be at least 1"));
    }
    let steps = step_count(t_final, dt)?;
    let grid = problem.grid().clone();
    let ops = Operators::new(&grid);
    let potential = problem.potential.sample(&grid)?;
    let (eps, a0) = match variant {
        Variant::Limit => (T::zero(), problem.amplitude.a0.clone()),
        _ => (problem.eps, problem.initial_amplitude()?),
    };
    let skew = variant == Variant::Full;
    let mut phi = problem.phase.sample(&grid)?.into_values();
    let mut a = a0.into_values();
    check(&grid, T::zero(), &phi, &a, options.tail_tolerance)?;
    let v = potential.values();

    let mut states = vec![GrenierState::new(&grid, T::zero(), &phi, &a)];
    for n in 1..=steps {
        if skew {
            ops.skew(&mut a, eps, dt / T::lit(2.0));
        }
        let half = dt / T::lit(2.0);
        let (p1, a1) = ops.transport(&phi, &a, v);
        let (p2, a2) = ops.transport(&axpy_real(&phi, &p1, half), &axpy_complex(&a, &a1, half), v);
        let (p3, a3) = ops.transport(&axpy_real(&phi, &p2, half), &axpy_complex(&a, &a2, half), v);
        let (p4, a4) = ops.transport(&axpy_real(&phi, &p3, dt), &axpy_complex(&a, &a3, dt), v);
        combine_real(&mut phi, [&p1, &p2, &p3, &p4], dt);
        combine_complex(&mut a, [&a1, &a2, &a3, &a4], dt);
        if skew {
            ops.skew(&mut a, eps, dt / T::lit(2.0));
        }
        let t = T::from_usize_lossy(n) * dt;
        if n % options.output_stride == 0 || n == steps {
            check(&grid, t, &phi, &a, options.tail_tolerance)?;
            states.push(GrenierState::new(&grid, t, &phi, &a));
        } else if !a.iter().all(is_finite_c) {
            return Err(Error::Blowup { time: t.to_f64_lossy() });
        }
    }
    Ok(GrenierTrajectory {
        variant,
        eps,
        dt,
        output_step: dt * T::from_usize_lossy(options.output_stride),
        potential,
        states,
    })
}

/// First correctors `(a¹, φ¹)` at one time.
#[derive(Clone, Debug)]
pub struct CorrectorState<T: Real> {
    pub t: T,
    pub amplitude: ComplexField<T>,
    pub phase: RealField<T>,
}

#[derive(Clone, Debug)]
pub struct CorrectorTrajectory<T: Real> {
    pub dt: T,
    pub states: Vec<CorrectorState<T>>,
}

impl<T: Real> CorrectorTrajectory<T> {
    pub fn at(&self, t: T) -> Option<&CorrectorState<T>> {
        let tol = T::lit(1e-9) * self.dt;
        self.states.iter().find(|s| (s.t - t).abs() <= tol)
    }

    pub fn last(&self) -> &CorrectorState<T> {
        self.states.last().expect("a trajectory stores at least one state")
    }
}

/// Spectral data of one limit state used by the corrector right-hand side.
struct Background<T> {
    a: Vec<Complex<T>>,
    grad_phi: Vec<Vec<Complex<T>>>,
    lap_phi: Vec<Complex<T>>,
    grad_a: Vec<Vec<Complex<T>>>,
    lap_a: Vec<Complex<T>>,
}

impl<T: Real> Background<T> {
    fn new(ops: &Operators<T>, s: &GrenierState<T>) -> Self {
        let phi_hat = forward_real(&ops.grid, s.phase.values());
        let mut a_hat = s.amplitude.values().to_vec();
        ops.grid.forward(&mut a_hat);
        Self {
            a: s.amplitude.values().to_vec(),
            grad_phi: ops.gradient(&phi_hat),
            lap_phi: ops.laplacian(&phi_hat),
            grad_a: ops.gradient(&a_hat),
            lap_a: ops.laplacian(&a_hat),
        }
    }
}

/// `∂_tφ¹ = -∇φ·∇φ¹ - 2Re(ā a¹)`,
/// `∂_t a¹ = -∇φ·∇a¹ - ∇φ¹·∇a - ½a¹Δφ - ½aΔφ¹ + (i/2)Δa`.
fn corrector_rhs<T: Real>(ops: &Operators<T>, bg: &Background<T>, phi1: &[T], a1: &[Complex<T>]) -> (Vec<T>, Vec<Complex<T>>) {
    let p_hat = forward_real(&ops.grid, phi1);
    let mut a_hat = a1.to_vec();
    ops.grid.forward(&mut a_hat);
    let gp1 = ops.gradient(&p_hat);
    let lp1 = ops.laplacian(&p_hat);
    let ga1 = ops.gradient(&a_hat);
    let n = phi1.len();
    let half = T::lit(0.5);
    let i_half = Complex::new(T::zero(), half);
    let mut dphi = vec![T::zero(); n];
    let mut da = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..n {
        let mut adv_phi = T::zero();
        let mut adv_a = Complex::new(T::zero(), T::zero());
        for axis in 0..ops.grid.dim() {
            let v = bg.grad_phi[axis][i].re;
            adv_phi = adv_phi + v * gp1[axis][i].re;
            adv_a = adv_a + ga1[axis][i] * v + bg.grad_a[axis][i] * gp1[axis][i].re;
        }
        dphi[i] = -adv_phi - T::lit(2.0) * (bg.a[i].conj() * a1[i]).re;
        da[i] = -adv_a - a1[i] * bg.lap_phi[i].re * half - bg.a[i] * lp1[i].re * half + bg.lap_a[i] * i_half;
    }
    ops.dealias_real(&mut dphi);
    ops.dealias(&mut da);
    (dphi, da)
}

/// Integrates the corrector system with RK4 and step `dt` along `limit`,
/// which must store its states at spacing `dt/2` (the RK4 stage times).
pub fn solve_corrector<T: Real>(limit: &GrenierTrajectory<T>, a1: &ComplexField<T>, dt: T) -> Result<CorrectorTrajectory<T>> {
    if limit.variant != Variant::Limit {
        return Err(Error::invalid("correctors linearize around the limit trajectory"));
    }
    ensure_same_grid(limit.grid(), a1.grid())?;
    a1.ensure_finite()?;
    if !(dt > T::zero()) {
        return Err(Error::invalid("time step must be positive"));
    }
    let half = dt / T::lit(2.0);
    let tol = T::lit(1e-9) * half;
    let uniform = limit
        .states
        .iter()
        .enumerate()
        .all(|(i, s)| (s.t - T::from_usize_lossy(i) * half).abs() <= tol);
    if !uniform || limit.states.len().is_multiple_of(2) {
        return Err(Error::TimeGridMismatch(format!(
            "corrector step {dt} needs limit states every {half} and an even number of intervals"
        )));
    }
    let grid = limit.grid().clone();
    let ops = Operators::new(&grid);
    let mut phi1 = vec![T::zero(); grid.len()];
    let mut a = a1.values().to_vec();
    let mut states = vec![CorrectorState {
        t: T::zero(),
        amplitude: ComplexField::from_parts(&grid, a.clone(), "a1"),
        phase: RealField::from_parts(&grid, phi1.clone(), "phi1"),
    }];
    let mut start = Background::new(&ops, &limit.states[0]);
    for pair in 0..(limit.states.len() - 1) / 2 {
        let mid = Background::new(&ops, &limit.states[2 * pair + 1]);
        let end = Background::new(&ops, &limit.states[2 * pair + 2]);
        let (p1, k1) = corrector_rhs(&ops, &start, &phi1, &a);
        let (p2, k2) = corrector_rhs(&ops, &mid, &axpy_real(&phi1, &p1, half), &axpy_complex(&a, &k1, half));
        let (p3, k3) = corrector_rhs(&ops, &mid, &axpy_real(&phi1, &p2, half), &axpy_complex(&a, &k2, half));
        let (p4, k4) = corrector_rhs(&ops, &end, &axpy_real(&phi1, &p3, dt), &axpy_complex(&a, &k3, dt));
        combine_real(&mut phi1, [&p1, &p2, &p3, &p4], dt);
        combine_complex(&mut a, [&k1, &k2, &k3, &k4], dt);
        let t = limit.states[2 * pair + 2].t;
        if !a.iter().all(is_finite_c) || !phi1.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: t.to_f64_lossy() });
        }
        states.push(CorrectorState {
            t,
            amplitude: ComplexField::from_parts(&grid, a.clone(), "a1"),
            phase: RealField::from_parts(&grid, phi1.clone(), "phi1"),
        });
        start = end;
    }
    Ok(CorrectorTrajectory { dt, states })
}

/// `a e^{iφ¹} e^{iφ/ε}`, or `a e^{iφ/ε}` without a corrector.
pub fn assemble_supercritical<T: Real>(state: &GrenierState<T>, eps: T, corrector: Option<&CorrectorState<T>>) -> Result<ComplexField<T>> {
    if !(eps > T::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if let Some(c) = corrector {
        ensure_same_grid(state.phase.grid(), c.phase.grid())?;
        if (c.t - state.t).abs() > T::lit(1e-9) * (T::one() + state.t.abs()) {
            return Err(Error::TimeGridMismatch(format!("corrector at t = {} but state at t = {}", c.t, state.t)));
        }
    }
    let values = state
        .amplitude
        .values()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let shift = corrector.map_or(T::zero(), |c| c.phase.values()[i]);
            a * cis(shift + state.phase.values()[i] / eps)
        })
        .collect();
    ComplexField::new(state.phase.grid(), values, "u_wkb")
}

/// Largest sup-norm residual of the Euler system
/// `∂_t v + v·∇v + ∇V + ∇ρ = 0`, `∂_t ρ + ∇·(ρv) = 0`
/// (`ρ = |a|²`, `v = ∇φ`) over interior stored times, with centered time
/// differences.
pub fn euler_residual<T: Real>(traj: &GrenierTrajectory<T>) -> Result<T> {
    if traj.variant == Variant::Full {
        return Err(Error::invalid("the Euler system holds for the limit and skew-free variants"));
    }
    if traj.states.len() < 3 {
        return Err(Error::invalid("the Euler residual needs at least three stored states"));
    }
    let grid = traj.grid();
    let dim = grid.dim();
    let tau = traj.output_step;
    let ops = Operators::new(grid);
    let v_hat = forward_real(grid, traj.potential.values());
    let grad_v = ops.gradient(&v_hat);
    let mut worst = T::zero();
    for w in traj.states.windows(3) {
        let (prev, cur, next) = (&w[0], &w[1], &w[2]);
        let rho = cur.density();
        let rho_hat = forward_real(grid, rho.values());
        let grad_rho = ops.gradient(&rho_hat);
        let rho_prev = prev.density();
        let rho_next = next.density();
        let mut flux_div = vec![T::zero(); grid.len()];
        for axis in 0..dim {
            let flux: Vec<T> = rho.values().iter().zip(cur.velocity[axis].values()).map(|(&r, &v)| r * v).collect();
            let mut s = forward_real(grid, &flux);
            apply_derivative(grid, &mut s, axis, 1);
            grid.inverse(&mut s);
            for (d, z) in flux_div.iter_mut().zip(s) {
                *d = *d + z.re;
            }
        }
        let two_tau = T::lit(2.0) * tau;
        for i in 0..grid.len() {
            let r = (rho_next.values()[i] - rho_prev.values()[i]) / two_tau + flux_div[i];
            worst = worst.max(r.abs());
        }
        for axis in 0..dim {
            let hat = forward_real(grid, cur.velocity[axis].values());
            let grad_comp = ops.gradient(&hat);
            for i in 0..grid.len() {
                let dt_v = (next.velocity[axis].values()[i] - prev.velocity[axis].values()[i]) / two_tau;
                let mut adv = T::zero();
                for b in 0..dim {
                    adv = adv + cur.velocity[b].values()[i] * grad_comp[b][i].re;
                }
                let r = dt_v + adv + grad_v[axis][i].re + grad_rho[axis][i].re;
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AmplitudeFamily, CosineMode, InitialPhaseSpec, PotentialSpec};
    use crate::spectral::{lp_norm, Lp};
    use crate::wkb::taylor_phase_coefficients;

    fn grid() -> PeriodicGrid<f64> {
        PeriodicGrid::new_1d(32.0, 512).unwrap()
    }

    fn gaussian(g: &PeriodicGrid<f64>) -> ComplexField<f64> {
        ComplexField::from_fn(g, "a0", |x| Complex::new((-x[0] * x[0]).exp(), 0.0)).unwrap()
    }

    fn free(eps: f64, a0: ComplexField<f64>) -> SemiclassicalProblem<f64> {
        SemiclassicalProblem::free(eps, Criticality::Supercritical, a0).unwrap()
    }

    #[test]
    fn constant_data_limit() {
        let g = grid();
        let c = 0.6;
        let a0 = ComplexField::from_fn(&g, "a0", |_| Complex::new(c, 0.0)).unwrap();
        let tr = solve_phase_amplitude(&free(0.1, a0), 0.5, 0.01, Variant::Limit).unwrap();
        for s in &tr.states {
            assert!(s.amplitude.values().iter().all(|z| (z - c).norm() < 1e-13));
            assert!(s.phase.values().iter().all(|p| (p + c * c * s.t).abs() < 1e-13));
            let u = assemble_supercritical(s, 0.1, None).unwrap();
            assert!(u.values().iter().all(|z| (z - c * cis(-c * c * s.t / 0.1)).norm() < 1e-11));
        }
        assert!(euler_residual(&tr).unwrap() <= 1e-10);
    }

    #[test]
    fn skew_free_matches_taylor_start() {
        let g = grid();
        let a0 = gaussian(&g);
        let t = 0.05;
        let tr = solve_phase_amplitude(&free(0.1, a0.clone()), t, 0.001, Variant::SkewFree).unwrap();
        let tc = taylor_phase_coefficients(&a0, 1).unwrap();
        let lead = tc.phase_sum(t);
        let diff = tr.last().phase.sub(&lead).unwrap().max_abs();
        assert!(diff <= 10.0 * t.powi(3), "{diff}");
    }

    #[test]
    fn mass_and_skew_neutrality() {
        let g = grid();
        let a0 = gaussian(&g);
        let mass = |a: &ComplexField<f64>| a.values().iter().map(|z| z.norm_sqr()).sum::<f64>();
        let m0 = mass(&a0);
        for variant in [Variant::Limit, Variant::SkewFree, Variant::Full] {
            let tr = solve_phase_amplitude(&free(0.05, a0.clone()), 0.3, 0.002, variant).unwrap();
            for s in &tr.states {
                assert!((mass(&s.amplitude) - m0).abs() <= 1e-8 * m0, "{variant:?}");
            }
        }
        let ops = Operators::new(&g);
        let mut a = gaussian(&g).map("a", |z| z * cis(0.3)).unwrap().into_values();
        ops.skew(&mut a, 0.1, 0.7);
        let after: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        assert!((after - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn velocity_is_phase_gradient() {
        let g = PeriodicGrid::<f64>::new_2d([16.0, 16.0], [64, 64]).unwrap();
        let a0 = ComplexField::from_fn(&g, "a0", |x| Complex::new((-x[0] * x[0] - 0.5 * x[1] * x[1]).exp(), 0.0)).unwrap();
        let tr = solve_phase_amplitude(&free(0.1, a0), 0.1, 0.01, Variant::Full).unwrap();
        let s = tr.last();
        let f = s.phase.to_complex();
        for axis in 0..2 {
            let d = crate::spectral::spectral_derivative(&f, axis, 1).unwrap();
            let gap = d.real_part().sub(&s.velocity[axis]).unwrap().max_abs();
            assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn parity_in_time() {
        let g = grid();
        let a0 = gaussian(&g);
        let p = free(0.1, a0);
        let fwd = solve_phase_amplitude(&p, 0.2, 0.001, Variant::Limit).unwrap();
        // reversing time: φ(-t) = -φ(t), a(-t) = a(t) for φ₀ = 0 and real a₀
        let sampled = InitialPhaseSpec::sampled(fwd.last().phase.map("phi", |v| -v).unwrap());
        let back = SemiclassicalProblem::new(0.1, Criticality::Supercritical, PotentialSpec::Zero, sampled, AmplitudeFamily::fixed(fwd.last().amplitude.clone()))
            .unwrap();
        let ret = solve_phase_amplitude(&back, 0.2, 0.001, Variant::Limit).unwrap();
        assert!(ret.last().phase.max_abs() <= 1e-9);
        assert!(lp_norm(&ret.last().amplitude.sub(&fwd.states[0].amplitude).unwrap(), Lp::Inf) <= 1e-9);
    }

    #[test]
    fn spatial_refinement_is_stable() {
        let coarse = grid();
        let fine = PeriodicGrid::new_1d(32.0, 1024).unwrap();
        let a = solve_phase_amplitude(&free(0.05, gaussian(&coarse)), 0.2, 0.002, Variant::Full).unwrap();
        let b = solve_phase_amplitude(&free(0.05, gaussian(&fine)), 0.2, 0.002, Variant::Full).unwrap();
        let fa = a.last().amplitude.values();
        let fb = b.last().amplitude.values();
        let worst = (0..coarse.len()).fold(0.0f64, |m, i| m.max((fa[i] - fb[2 * i]).norm()));
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn real_data_gives_no_phase_shift() {
        let g = grid();
        let a0 = gaussian(&g);
        let limit = solve_phase_amplitude(&free(0.1, a0), 0.3, 0.001, Variant::Limit).unwrap();
        let corr = solve_corrector(&limit, &ComplexField::zeros(&g, "a1"), 0.002).unwrap();
        assert_eq!(corr.states.len(), 151);
        for s in &corr.states {
            assert!(s.phase.max_abs() <= 1e-10);
            assert!(s.amplitude.values().iter().all(|z| z.re.abs() <= 1e-10));
        }
        assert!(corr.last().amplitude.values().iter().any(|z| z.im.abs() > 1e-3));
        assert!(matches!(solve_corrector(&limit, &ComplexField::zeros(&g, "a1"), 0.004), Err(Error::TimeGridMismatch(_))));
    }

    #[test]
    fn empty_background_keeps_corrector() {
        let g = grid();
        let zero = ComplexField::zeros(&g, "a0");
        let limit = solve_phase_amplitude(&free(0.1, zero), 0.1, 0.005, Variant::Limit).unwrap();
        let a1 = gaussian(&g);
        let corr = solve_corrector(&limit, &a1, 0.01).unwrap();
        for s in &corr.states {
            assert!(s.phase.max_abs() == 0.0);
            assert!(lp_norm(&s.amplitude.sub(&a1).unwrap(), Lp::Inf) <= 1e-14);
        }
    }

    #[test]
    fn euler_residual_is_second_order() {
        let g = grid();
        let v = PotentialSpec::Periodic {
            modes: vec![CosineMode { amplitude: 0.1, wavevector: [std::f64::consts::TAU / 8.0, 0.0], phase: 0.0 }],
        };
        let p = SemiclassicalProblem::new(0.1, Criticality::Supercritical, v, InitialPhaseSpec::Zero, AmplitudeFamily::fixed(gaussian(&g))).unwrap();
        let r = |dt: f64| {
            let tr = solve_phase_amplitude(&p, 0.2, dt, Variant::Limit).unwrap();
            euler_residual(&tr).unwrap()
        };
        let (r1, r2) = (r(0.004), r(0.002));
        let order = (r1 / r2).log2();
        assert!((order - 2.0).abs() < 0.2, "{r1} {r2} {order}");
    }

    #[test]
    fn rejects_unsupported_setups() {
        let g = grid();
        let a0 = gaussian(&g);
        let crit = SemiclassicalProblem::free(0.1, Criticality::Critical, a0.clone()).unwrap();
        assert!(solve_phase_amplitude(&crit, 0.1, 0.01, Variant::Full).is_err());
        let quad = SemiclassicalProblem::new(0.1, Criticality::Supercritical, PotentialSpec::Zero, InitialPhaseSpec::quadratic_1d(1.0), AmplitudeFamily::fixed(a0.clone()))
            .unwrap();
        assert!(solve_phase_amplitude(&quad, 0.1, 0.01, Variant::Full).is_err());
        assert!(solve_phase_amplitude(&free(0.1, a0.clone()), 0.105, 0.01, Variant::Full).is_err());
        let full = solve_phase_amplitude(&free(0.1, a0), 0.1, 0.01, Variant::Full).unwrap();
        assert!(euler_residual(&full).is_err());
        assert!(solve_corrector(&full, &ComplexField::zeros(&g, "a1"), 0.02).is_err());
    }
}
