//! Eikonal equation by Hamiltonian ray tracing.
//!
//! Each ray carries its position `x`, momentum `ξ`, the variational
//! matrices `M = ∇_y x`, `Ξ = ∇_y ξ`, and the action
//! `S(t,y) = φ₀(y) + ∫ (½|ξ|² - V)`. Pre-caustic, `φ_eik(t, x(t,y)) = S(t,y)`
//! and `∇φ_eik(t, x(t,y)) = ξ(t,y)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{InitialPhaseSpec, PotentialSpec, SemiclassicalProblem};
use crate::scalar::Real;
use crate::spectral::{spectral_derivative, PeriodicGrid, RealField};

/// Default `J` threshold marking the caustic horizon.
pub const DEFAULT_CAUSTIC_THRESHOLD: f64 = 0.1;

const STATE_LEN: usize = 13;

/// Phase-space state of one ray, packed as
/// `[x0, x1, ξ0, ξ1, M00, M01, M10, M11, Ξ00, Ξ01, Ξ10, Ξ11, S]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayState<T> {
    data: [T; STATE_LEN],
}

impl<T: Real> RayState<T> {
    /// Initial state of the ray launched from label `y`.
    pub fn launch(phase: &InitialPhaseSpec<T>, y: [T; 2]) -> Self {
        let xi = phase.gradient(&y);
        let h = phase.hessian(&y);
        let mut d = [T::zero(); STATE_LEN];
        d[0] = y[0];
        d[1] = y[1];
        d[2] = xi[0];
        d[3] = xi[1];
        d[4] = T::one();
        d[7] = T::one();
        d[8] = h[0][0];
        d[9] = h[0][1];
        d[10] = h[1][0];
        d[11] = h[1][1];
        d[12] = phase.value(&y);
        Self { data: d }
    }

    /// State at position `x` with momentum `xi`, identity variations and zero action.
    pub fn at_point(x: [T; 2], xi: [T; 2]) -> Self {
        let mut d = [T::zero(); STATE_LEN];
        d[0] = x[0];
        d[1] = x[1];
        d[2] = xi[0];
        d[3] = xi[1];
        d[4] = T::one();
        d[7] = T::one();
        Self { data: d }
    }

    pub fn position(&self) -> [T; 2] {
        [self.data[0], self.data[1]]
    }

    pub fn momentum(&self) -> [T; 2] {
        [self.data[2], self.data[3]]
    }

    /// `M = ∇_y x`.
    pub fn variation(&self) -> [[T; 2]; 2] {
        [[self.data[4], self.data[5]], [self.data[6], self.data[7]]]
    }

    pub fn action(&self) -> T {
        self.data[12]
    }

    /// `J = det ∇_y x`.
    pub fn jacobian(&self, dim: usize) -> T {
        if dim == 1 {
            self.data[4]
        } else {
            self.data[4] * self.data[7] - self.data[5] * self.data[6]
        }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn axpy(&self, h: T, k: &[T; STATE_LEN]) -> Self {
        let mut out = *self;
        for (o, kv) in out.data.iter_mut().zip(k) {
            *o = *o + h * *kv;
        }
        out
    }

    fn rate(&self, potential: &PotentialSpec<T>, t: T) -> [T; STATE_LEN] {
        let d = &self.data;
        let x = [d[0], d[1]];
        let grad = potential.gradient(t, &x);
        let hess = potential.hessian(t, &x);
        let m = [[d[4], d[5]], [d[6], d[7]]];
        let mut r = [T::zero(); STATE_LEN];
        r[0] = d[2];
        r[1] = d[3];
        r[2] = -grad[0];
        r[3] = -grad[1];
        r[4] = d[8];
        r[5] = d[9];
        r[6] = d[10];
        r[7] = d[11];
        // Ξ' = -∇²V · M
        r[8] = -(hess[0][0] * m[0][0] + hess[0][1] * m[1][0]);
        r[9] = -(hess[0][0] * m[0][1] + hess[0][1] * m[1][1]);
        r[10] = -(hess[1][0] * m[0][0] + hess[1][1] * m[1][0]);
        r[11] = -(hess[1][0] * m[0][1] + hess[1][1] * m[1][1]);
        r[12] = T::lit(0.5) * (d[2] * d[2] + d[3] * d[3]) - potential.value(t, &x);
        r
    }

    /// One classical RK4 step.
    pub fn rk4_step(&self, potential: &PotentialSpec<T>, t: T, h: T) -> Self {
        let half = h / T::lit(2.0);
        let k1 = self.rate(potential, t);
        let k2 = self.axpy(half, &k1).rate(potential, t + half);
        let k3 = self.axpy(half, &k2).rate(potential, t + half);
        let k4 = self.axpy(h, &k3).rate(potential, t + h);
        let sixth = h / T::lit(6.0);
        let mut out = *self;
        for i in 0..STATE_LEN {
            out.data[i] = out.data[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        out
    }
}

/// A single ray sampled at uniform nodes `0, h, 2h, …, n h`.
#[derive(Clone, Debug)]
pub struct RayPath<T> {
    pub step: T,
    pub states: Vec<RayState<T>>,
}

impl<T: Real> RayPath<T> {
    pub fn end(&self) -> &RayState<T> {
        self.states.last().expect("ray path is never empty")
    }

    /// `∫₀ᵗ J_s⁻¹ ds` by composite Simpson (the node count is odd).
    pub fn inverse_jacobian_integral(&self, dim: usize) -> T {
        let n = self.states.len() - 1;
        if n == 0 {
            return T::zero();
        }
        debug_assert!(n.is_multiple_of(2));
        let f = |i: usize| T::one() / self.states[i].jacobian(dim);
        let mut acc = f(0) + f(n);
        for i in 1..n {
            acc = acc + f(i) * if i % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
        }
        acc * self.step / T::lit(3.0)
    }
}

/// Integrates a single ray from `start` over `[t0, t0 + duration]` with an
/// even number of uniform steps no longer than `max_dt`.
pub fn trace_ray<T: Real>(potential: &PotentialSpec<T>, start: RayState<T>, t0: T, duration: T, max_dt: T) -> Result<RayPath<T>> {
    if duration == T::zero() {
        return Ok(RayPath { step: T::zero(), states: vec![start] });
    }
    let mut n = (duration.abs() / max_dt).ceil().to_usize().unwrap_or(2).max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = duration / T::from_usize_lossy(n);
    let mut states = Vec::with_capacity(n + 1);
    states.push(start);
    let mut s = start;
    for i in 0..n {
        let t = t0 + T::from_usize_lossy(i) * h;
        s = s.rk4_step(potential, t, h);
        if !s.is_finite() {
            return Err(Error::Blowup { time: (t + h).to_f64_lossy() });
        }
        states.push(s);
    }
    Ok(RayPath { step: h, states })
}

/// Lagrangian labels `y` of the rays.
#[derive(Clone, Debug)]
pub struct Markers<T> {
    dim: usize,
    points: Vec<[T; 2]>,
    /// Tensor shape when the labels come from a grid.
    shape: Option<[usize; 2]>,
}

impl<T: Real> Markers<T> {
    pub fn from_grid(grid: &PeriodicGrid<T>) -> Self {
        let shape = if grid.dim() == 1 { [grid.points(0), 1] } else { [grid.points(0), grid.points(1)] };
        Self {
            dim: grid.dim(),
            points: (0..grid.len()).map(|i| grid.position(i)).collect(),
            shape: Some(shape),
        }
    }

    /// Uniform 1D labels on `[lo, hi]`.
    pub fn uniform_1d(lo: T, hi: T, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(Error::invalid("need at least two markers on a non-empty interval"));
        }
        let h = (hi - lo) / T::from_usize_lossy(count - 1);
        Ok(Self {
            dim: 1,
            points: (0..count).map(|i| [lo + T::from_usize_lossy(i) * h, T::zero()]).collect(),
            shape: Some([count, 1]),
        })
    }

    pub fn from_points(dim: usize, points: Vec<[T; 2]>) -> Result<Self> {
        if !(1..=2).contains(&dim) || points.is_empty() {
            return Err(Error::invalid("markers need dimension 1 or 2 and at least one point"));
        }
        if dim == 1 && points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::invalid("1D markers must be strictly increasing"));
        }
        Ok(Self { dim, points, shape: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }
}

/// Ray family integrated on a common time grid.
#[derive(Clone, Debug)]
pub struct RayBundle<T: Real> {
    potential: PotentialSpec<T>,
    phase: InitialPhaseSpec<T>,
    markers: Markers<T>,
    step: T,
    times: Vec<T>,
    /// `rays[marker][time]`.
    rays: Vec<Vec<RayState<T>>>,
    caustic_horizon: Option<T>,
}

/// Integrates the Hamiltonian flow `ẋ = ξ`, `ξ̇ = -∇V(x)` together with the
/// variational system and the action, storing every ray at every node.
pub fn integrate_flow<T: Real>(problem: &SemiclassicalProblem<T>, markers: &Markers<T>, t_final: T, dt: T) -> Result<RayBundle<T>> {
    integrate_flow_with(&problem.potential, &problem.phase, markers, t_final, dt)
}

pub fn integrate_flow_with<T: Real>(
    potential: &PotentialSpec<T>,
    phase: &InitialPhaseSpec<T>,
    markers: &Markers<T>,
    t_final: T,
    dt: T,
) -> Result<RayBundle<T>> {
    if !(dt > T::zero()) || !(t_final >= T::zero()) {
        return Err(Error::invalid("integrate_flow needs dt > 0 and t_final >= 0"));
    }
    potential.validate(markers.dim())?;
    let n = (t_final / dt).round().to_usize().unwrap_or(0).max(1);
    let step = t_final / T::from_usize_lossy(n);
    let times: Vec<T> = (0..=n).map(|i| T::from_usize_lossy(i) * step).collect();
    let rays = markers
        .points
        .par_iter()
        .map(|&y| {
            let mut s = RayState::launch(phase, y);
            let mut path = Vec::with_capacity(n + 1);
            path.push(s);
            for (i, &t) in times[..n].iter().enumerate() {
                s = s.rk4_step(potential, t, step);
                if !s.is_finite() {
                    return Err(Error::Blowup { time: times[i + 1].to_f64_lossy() });
                }
                path.push(s);
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bundle = RayBundle {
        potential: potential.clone(),
        phase: phase.clone(),
        markers: markers.clone(),
        step,
        times,
        rays,
        caustic_horizon: None,
    };
    bundle.caustic_horizon = caustic_time(&bundle, T::lit(DEFAULT_CAUSTIC_THRESHOLD))?;
    Ok(bundle)
}

impl<T: Real> RayBundle<T> {
    pub fn dim(&self) -> usize {
        self.markers.dim
    }

    pub fn markers(&self) -> &Markers<T> {
        &self.markers
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn t_final(&self) -> T {
        *self.times.last().expect("bundle has at least one time node")
    }

    pub fn potential(&self) -> &PotentialSpec<T> {
        &self.potential
    }

    pub fn phase(&self) -> &InitialPhaseSpec<T> {
        &self.phase
    }

    /// Horizon at the default threshold; `None` when no caustic forms in the window.
    pub fn caustic_horizon(&self) -> Option<T> {
        self.caustic_horizon
    }

    pub fn state(&self, time_index: usize, marker: usize) -> &RayState<T> {
        &self.rays[marker][time_index]
    }

    pub fn min_jacobian(&self, time_index: usize) -> T {
        let dim = self.dim();
        self.rays.iter().fold(T::infinity(), |m, r| m.min(r[time_index].jacobian(dim)))
    }

    fn nearest_index(&self, t: T) -> usize {
        let i = (t / self.step).round().to_usize().unwrap_or(0);
        i.min(self.times.len() - 1)
    }

    /// Jacobian of the stored map `y ↦ x(t_i, y)` by fourth-order centred
    /// differences across neighbouring markers (1D tensor markers only).
    /// Entries within two markers of either end are `None`.
    pub fn finite_difference_jacobian(&self, time_index: usize) -> Result<Vec<Option<T>>> {
        if self.dim() != 1 || self.markers.shape.is_none() {
            return Err(Error::invalid("finite-difference Jacobian needs 1D uniform markers"));
        }
        let pts = &self.markers.points;
        let n = pts.len();
        let h = pts[1][0] - pts[0][0];
        let x = |i: usize| self.rays[i][time_index].position()[0];
        Ok((0..n)
            .map(|i| {
                if i < 2 || i + 2 >= n {
                    None
                } else {
                    Some((x(i - 2) - T::lit(8.0) * x(i - 1) + T::lit(8.0) * x(i + 1) - x(i + 2)) / (T::lit(12.0) * h))
                }
            })
            .collect())
    }

    /// Writes `t, y, x, xi, J, S` rows (with per-axis columns in 2D), every
    /// `time_stride`-th node.
    pub fn write_csv<W: Write>(&self, mut out: W, time_stride: usize) -> Result<()> {
        let dim = self.dim();
        if dim == 1 {
            writeln!(out, "t,y,x,xi,J,S")?;
        } else {
            writeln!(out, "t,y0,y1,x0,x1,xi0,xi1,J,S")?;
        }
        for ti in (0..self.times.len()).step_by(time_stride.max(1)) {
            for (m, y) in self.markers.points.iter().enumerate() {
                let s = &self.rays[m][ti];
                let (x, xi) = (s.position(), s.momentum());
                if dim == 1 {
                    writeln!(out, "{},{},{},{},{},{}", self.times[ti], y[0], x[0], xi[0], s.jacobian(1), s.action())?;
                } else {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        self.times[ti], y[0], y[1], x[0], x[1], xi[0], xi[1], s.jacobian(2), s.action()
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Earliest time where `min_y J_t(y) <= threshold`, linearly interpolated
/// between stored nodes.
pub fn caustic_time<T: Real>(bundle: &RayBundle<T>, threshold: T) -> Result<Option<T>> {
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::invalid(format!("caustic threshold must lie in (0, 1), got {threshold}")));
    }
    let mut prev = bundle.min_jacobian(0);
    if prev <= threshold {
        return Ok(Some(T::zero()));
    }
    for i in 1..bundle.times.len() {
        let cur = bundle.min_jacobian(i);
        if cur <= threshold {
            let frac = (prev - threshold) / (prev - cur);
            return Ok(Some(bundle.times[i - 1] + frac * bundle.step));
        }
        prev = cur;
    }
    Ok(None)
}

/// Result of inverting `y ↦ x(t, y)` on an Eulerian grid.
///
/// For each node the ray through it is re-integrated from its label, so the
/// stored endpoint data carry integrator accuracy rather than interpolation
/// error.
#[derive(Clone, Debug)]
pub struct FlowInversion<T: Real> {
    pub time: T,
    grid: PeriodicGrid<T>,
    labels: Vec<[T; 2]>,
    endpoints: Vec<RayState<T>>,
    inverse_jacobian_integral: Vec<T>,
    worst_residual: T,
}

impl<T: Real> FlowInversion<T> {
    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    /// `y(t, x)` per node.
    pub fn labels(&self) -> &[[T; 2]] {
        &self.labels
    }

    pub fn label_field(&self, axis: usize) -> RealField<T> {
        RealField::from_parts(&self.grid, self.labels.iter().map(|y| y[axis]).collect(), format!("y{axis}"))
    }

    /// `J_t(y(t, x))` per node.
    pub fn jacobian(&self) -> Vec<T> {
        let dim = self.grid.dim();
        self.endpoints.iter().map(|s| s.jacobian(dim)).collect()
    }

    /// `∫₀ᵗ J_s(y(t, x))⁻¹ ds` per node.
    pub fn inverse_jacobian_integral(&self) -> &[T] {
        &self.inverse_jacobian_integral
    }

    /// `φ_eik(t, x) = S(t, y(t, x))`.
    pub fn phase(&self) -> RealField<T> {
        RealField::from_parts(&self.grid, self.endpoints.iter().map(|s| s.action()).collect(), "phi_eik")
    }

    /// `∂_axis φ_eik(t, x) = ξ_axis(t, y(t, x))`.
    pub fn phase_gradient(&self, axis: usize) -> RealField<T> {
        RealField::from_parts(&self.grid, self.endpoints.iter().map(|s| s.momentum()[axis]).collect(), format!("dphi_eik/dx{axis}"))
    }

    /// Largest `|x(t, y) - x|` over the grid.
    pub fn worst_residual(&self) -> T {
        self.worst_residual
    }
}

fn check_pre_caustic<T: Real>(bundle: &RayBundle<T>, t: T) -> Result<()> {
    if let Some(h) = bundle.caustic_horizon {
        if t >= h {
            return Err(Error::CausticCrossed { time: t.to_f64_lossy(), horizon: h.to_f64_lossy() });
        }
    }
    if t < T::zero() || t > bundle.t_final() * (T::one() + T::lit(1e-12)) {
        return Err(Error::invalid(format!("time {t} outside the integrated window [0, {}]", bundle.t_final())));
    }
    Ok(())
}

/// Finds, for every node of `x_grid`, the label `y` with `x(t, y) = x`.
///
/// The starting guess comes from the stored map at the nearest time node
/// (monotone bracketing in 1D, nearest image in 2D); Newton's method then
/// runs on the re-integrated ray using `M = ∇_y x` as the derivative.
pub fn invert_flow<T: Real>(bundle: &RayBundle<T>, t: T, x_grid: &PeriodicGrid<T>) -> Result<FlowInversion<T>> {
    check_pre_caustic(bundle, t)?;
    let dim = bundle.dim();
    if x_grid.dim() != dim {
        return Err(Error::ShapeMismatch(format!("{}D grid for a {dim}D ray bundle", x_grid.dim())));
    }
    let ti = bundle.nearest_index(t);
    let images: Vec<[T; 2]> = bundle.rays.iter().map(|r| r[ti].position()).collect();
    let variations: Vec<[[T; 2]; 2]> = bundle.rays.iter().map(|r| r[ti].variation()).collect();
    let max_dt = bundle.step;

    let solved = (0..x_grid.len())
        .into_par_iter()
        .map(|i| {
            let x = x_grid.position(i);
            let guess = initial_label(bundle, &images, &variations, &x);
            newton_label(bundle, t, max_dt, x, guess)
        })
        .collect::<Vec<_>>();

    let mut labels = Vec::with_capacity(solved.len());
    let mut endpoints = Vec::with_capacity(solved.len());
    let mut integrals = Vec::with_capacity(solved.len());
    let mut worst = T::zero();
    let mut failed = false;
    for r in solved {
        let (y, path, residual, converged) = r?;
        worst = worst.max(residual);
        failed |= !converged;
        labels.push(y);
        integrals.push(path.inverse_jacobian_integral(dim));
        endpoints.push(*path.end());
    }
    if failed {
        return Err(Error::InversionFailed { worst_residual: worst.to_f64_lossy() });
    }
    Ok(FlowInversion { time: t, grid: x_grid.clone(), labels, endpoints, inverse_jacobian_integral: integrals, worst_residual: worst })
}

fn initial_label<T: Real>(bundle: &RayBundle<T>, images: &[[T; 2]], variations: &[[[T; 2]; 2]], x: &[T; 2]) -> [T; 2] {
    let labels = &bundle.markers.points;
    if bundle.dim() == 1 {
        let n = images.len();
        if n == 1 {
            return [labels[0][0] + (x[0] - images[0][0]) / variations[0][0][0], T::zero()];
        }
        // images are increasing before the caustic
        let k = images.partition_point(|p| p[0] <= x[0]);
        if k == 0 {
            return [labels[0][0] + (x[0] - images[0][0]) / variations[0][0][0], T::zero()];
        }
        if k >= n {
            return [labels[n - 1][0] + (x[0] - images[n - 1][0]) / variations[n - 1][0][0], T::zero()];
        }
        let (x0, x1) = (images[k - 1][0], images[k][0]);
        let (y0, y1) = (labels[k - 1][0], labels[k][0]);
        let w = if x1 > x0 { (x[0] - x0) / (x1 - x0) } else { T::zero() };
        return [y0 + w * (y1 - y0), T::zero()];
    }
    let mut best = 0;
    let mut best_d = T::infinity();
    for (j, p) in images.iter().enumerate() {
        let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    let r = [x[0] - images[best][0], x[1] - images[best][1]];
    let dy = solve2(&variations[best], &r).unwrap_or([T::zero(); 2]);
    [labels[best][0] + dy[0], labels[best][1] + dy[1]]
}

fn solve2<T: Real>(m: &[[T; 2]; 2], r: &[T; 2]) -> Option<[T; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    Some([(m[1][1] * r[0] - m[0][1] * r[1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det])
}

type NewtonOutcome<T> = Result<([T; 2], RayPath<T>, T, bool)>;

fn newton_label<T: Real>(bundle: &RayBundle<T>, t: T, max_dt: T, x: [T; 2], guess: [T; 2]) -> NewtonOutcome<T> {
    let dim = bundle.dim();
    let scale = T::one() + x[0].abs().max(x[1].abs());
    let tol = T::lit(1e-11).max(T::lit(64.0) * T::epsilon() * scale);
    let mut y = guess;
    let mut best: Option<([T; 2], RayPath<T>, T)> = None;
    for _ in 0..40 {
        let path = trace_ray(&bundle.potential, RayState::launch(&bundle.phase, y), T::zero(), t, max_dt)?;
        let end = path.end();
        let p = end.position();
        let r = if dim == 1 { [p[0] - x[0], T::zero()] } else { [p[0] - x[0], p[1] - x[1]] };
        let res = r[0].abs().max(r[1].abs());
        let improved = best.as_ref().is_none_or(|b| res < b.2);
        let m = end.variation();
        if improved {
            best = Some((y, path, res));
        }
        if res <= tol {
            break;
        }
        let dy = if dim == 1 {
            [r[0] / m[0][0], T::zero()]
        } else {
            match solve2(&m, &r) {
                Some(d) => d,
                None => break,
            }
        };
        y = [y[0] - dy[0], y[1] - dy[1]];
    }
    let (y, path, res) = best.expect("at least one Newton iterate");
    Ok((y, path, res, res <= tol))
}

/// Eulerian eikonal phase `φ_eik(t, ·)` on `x_grid`.
pub fn eikonal_phase<T: Real>(bundle: &RayBundle<T>, t: T, x_grid: &PeriodicGrid<T>) -> Result<RealField<T>> {
    Ok(invert_flow(bundle, t, x_grid)?.phase())
}

/// How `∇φ_eik` enters the Hamilton–Jacobi residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRoute {
    /// `∇φ_eik(t, x) = ξ(t, y(t, x))`; valid for unbounded phases.
    RayMomentum,
    /// Spectral differentiation of the sampled phase; periodic phases only.
    Spectral,
}

/// `‖∂_t φ_eik + ½|∇φ_eik|² + V‖_∞` at time `t`, with `∂_t` from the
/// fourth-order centred stencil of width `dt_fd`.
pub fn hamilton_jacobi_residual<T: Real>(
    bundle: &RayBundle<T>,
    t: T,
    x_grid: &PeriodicGrid<T>,
    dt_fd: T,
    route: GradientRoute,
) -> Result<T> {
    if t - T::lit(2.0) * dt_fd < T::zero() {
        return Err(Error::invalid("time-difference stencil reaches below t = 0"));
    }
    let at = |s: T| eikonal_phase(bundle, s, x_grid);
    let (m2, m1, p1, p2) = (at(t - T::lit(2.0) * dt_fd)?, at(t - dt_fd)?, at(t + dt_fd)?, at(t + T::lit(2.0) * dt_fd)?);
    let centre = invert_flow(bundle, t, x_grid)?;
    let dim = bundle.dim();
    let grads: Vec<Vec<T>> = match route {
        GradientRoute::RayMomentum => (0..dim).map(|a| centre.phase_gradient(a).into_values()).collect(),
        GradientRoute::Spectral => {
            let phi = centre.phase().to_complex();
            (0..dim)
                .map(|a| Ok(spectral_derivative(&phi, a, 1)?.values().iter().map(|z| z.re).collect()))
                .collect::<Result<_>>()?
        }
    };
    let mut worst = T::zero();
    for i in 0..x_grid.len() {
        let dphi_dt = (m2.values()[i] - T::lit(8.0) * m1.values()[i] + T::lit(8.0) * p1.values()[i] - p2.values()[i])
            / (T::lit(12.0) * dt_fd);
        let g2 = grads.iter().fold(T::zero(), |acc, g| acc + g[i] * g[i]);
        let v = bundle.potential.value(t, &x_grid.position(i));
        worst = worst.max((dphi_dt + T::lit(0.5) * g2 + v).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AmplitudeFamily, Criticality};
    use crate::spectral::ComplexField;

    fn problem(potential: PotentialSpec<f64>, phase: InitialPhaseSpec<f64>) -> SemiclassicalProblem<f64> {
        let g = PeriodicGrid::new_1d(16.0, 64).unwrap();
        SemiclassicalProblem::new(0.1, Criticality::Critical, potential, phase, AmplitudeFamily::fixed(ComplexField::zeros(&g, "a0")))
            .unwrap()
    }

    fn harmonic() -> SemiclassicalProblem<f64> {
        problem(PotentialSpec::Harmonic { omega: vec![1.0] }, InitialPhaseSpec::Zero)
    }

    fn focusing() -> SemiclassicalProblem<f64> {
        problem(PotentialSpec::Zero, InitialPhaseSpec::quadratic_1d(-1.0))
    }

    #[test]
    fn free_rest_rays() {
        let p = problem(PotentialSpec::Zero, InitialPhaseSpec::Zero);
        let m = Markers::uniform_1d(-4.0, 4.0, 9).unwrap();
        let b = integrate_flow(&p, &m, 1.0, 0.01).unwrap();
        for ti in [0, 50, 100] {
            for (k, y) in m.points().iter().enumerate() {
                let s = b.state(ti, k);
                assert_eq!(s.position()[0], y[0]);
                assert_eq!(s.momentum()[0], 0.0);
                assert_eq!(s.jacobian(1), 1.0);
                assert_eq!(s.action(), 0.0);
            }
        }
        assert_eq!(caustic_time(&b, 0.1).unwrap(), None);
        assert_eq!(b.caustic_horizon(), None);
    }

    #[test]
    fn harmonic_rays_match_closed_form() {
        let m = Markers::uniform_1d(-3.0, 3.0, 13).unwrap();
        let b = integrate_flow(&harmonic(), &m, 1.2, 1e-3).unwrap();
        let mut worst: f64 = 0.0;
        for (ti, &t) in b.times().iter().enumerate() {
            for (k, y) in m.points().iter().enumerate() {
                let s = b.state(ti, k);
                worst = worst
                    .max((s.position()[0] - y[0] * t.cos()).abs())
                    .max((s.momentum()[0] + y[0] * t.sin()).abs())
                    .max((s.jacobian(1) - t.cos()).abs());
            }
        }
        assert!(worst <= 1e-8, "worst = {worst:e}");
    }

    #[test]
    fn harmonic_caustic_at_quarter_period() {
        let m = Markers::uniform_1d(-3.0, 3.0, 7).unwrap();
        let b = integrate_flow(&harmonic(), &m, 2.0, 1e-3).unwrap();
        let t = caustic_time(&b, 1e-9).unwrap().unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() <= 1e-3, "t = {t}");
        let h = b.caustic_horizon().unwrap();
        assert!((h - 0.1f64.acos()).abs() < 1e-3);
        assert!(caustic_time(&b, 1.5).is_err());
    }

    #[test]
    fn focusing_caustic_at_one() {
        let m = Markers::uniform_1d(-3.0, 3.0, 7).unwrap();
        let b = integrate_flow(&focusing(), &m, 1.5, 1e-3).unwrap();
        let s = b.state(500, 6);
        assert!((s.position()[0] - 3.0 * 0.5).abs() < 1e-12);
        assert!((s.momentum()[0] + 3.0).abs() < 1e-12);
        let t = caustic_time(&b, 1e-9).unwrap().unwrap();
        assert!((t - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn inversion_examples() {
        let g = PeriodicGrid::new_1d(8.0, 32).unwrap();
        let m = Markers::from_grid(&g);

        let b = integrate_flow(&problem(PotentialSpec::Zero, InitialPhaseSpec::Zero), &m, 1.0, 1e-2).unwrap();
        let inv = invert_flow(&b, 0.7, &g).unwrap();
        for (i, y) in inv.labels().iter().enumerate() {
            assert!((y[0] - g.position(i)[0]).abs() < 1e-12);
        }

        let b = integrate_flow(&focusing(), &m, 0.8, 1e-3).unwrap();
        let inv = invert_flow(&b, 0.5, &g).unwrap();
        assert!(inv.worst_residual() <= 1e-10);
        for (i, y) in inv.labels().iter().enumerate() {
            assert!((y[0] - 2.0 * g.position(i)[0]).abs() < 1e-9);
        }

        let t = std::f64::consts::FRAC_PI_4;
        let b = integrate_flow(&harmonic(), &m, 1.0, 1e-3).unwrap();
        let inv = invert_flow(&b, t, &g).unwrap();
        for (i, y) in inv.labels().iter().enumerate() {
            assert!((y[0] - 2f64.sqrt() * g.position(i)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn inversion_refuses_past_caustic() {
        let g = PeriodicGrid::new_1d(8.0, 16).unwrap();
        let b = integrate_flow(&focusing(), &Markers::from_grid(&g), 1.2, 1e-3).unwrap();
        assert!(matches!(invert_flow(&b, 0.95, &g), Err(Error::CausticCrossed { .. })));
    }

    #[test]
    fn eikonal_phase_examples() {
        let g = PeriodicGrid::new_1d(8.0, 32).unwrap();
        let m = Markers::from_grid(&g);
        let b = integrate_flow(&focusing(), &m, 0.8, 1e-3).unwrap();
        let t = 0.6;
        let phi = eikonal_phase(&b, t, &g).unwrap();
        for (i, v) in phi.values().iter().enumerate() {
            let x = g.position(i)[0];
            assert!((v + x * x / (2.0 * (1.0 - t))).abs() < 1e-9);
        }
        let b = integrate_flow(&harmonic(), &m, 1.2, 1e-3).unwrap();
        let phi = eikonal_phase(&b, 1.0, &g).unwrap();
        for (i, v) in phi.values().iter().enumerate() {
            let x = g.position(i)[0];
            assert!((v + 0.5 * x * x * 1f64.tan()).abs() < 1e-9);
        }
    }

    #[test]
    fn two_dimensional_harmonic_inversion() {
        let g = PeriodicGrid::new_2d([6.0, 6.0], [8, 8]).unwrap();
        let p = SemiclassicalProblem::new(
            0.1,
            Criticality::Critical,
            PotentialSpec::Harmonic { omega: vec![1.0, 0.5] },
            InitialPhaseSpec::Zero,
            AmplitudeFamily::fixed(ComplexField::zeros(&g, "a0")),
        )
        .unwrap();
        let b = integrate_flow(&p, &Markers::from_grid(&g), 0.6, 1e-3).unwrap();
        let inv = invert_flow(&b, 0.5, &g).unwrap();
        let j = inv.jacobian();
        for (i, y) in inv.labels().iter().enumerate() {
            let x = g.position(i);
            assert!((y[0] - x[0] / 0.5f64.cos()).abs() < 1e-9);
            assert!((y[1] - x[1] / 0.25f64.cos()).abs() < 1e-9);
            assert!((j[i] - 0.5f64.cos() * 0.25f64.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn time_reversal_returns_to_labels() {
        let v = PotentialSpec::Periodic { modes: vec![crate::problem::CosineMode { amplitude: 0.5f64, wavevector: [0.7, 0.0], phase: 0.3 }] };
        for y in [-2.0f64, -0.3, 0.9, 2.5] {
            let fwd = trace_ray(&v, RayState::at_point([y, 0.0], [0.4, 0.0]), 0.0, 1.3, 1e-3).unwrap();
            let e = fwd.end();
            let back = trace_ray(&v, RayState::at_point(e.position(), [-e.momentum()[0], 0.0]), 0.0, 1.3, 1e-3).unwrap();
            assert!((back.end().position()[0] - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn simpson_integral_of_focusing_jacobian() {
        // ∫₀^½ ds / (1 - s) = ln 2
        let path = trace_ray(&PotentialSpec::Zero, RayState::launch(&InitialPhaseSpec::quadratic_1d(-1.0), [1.0, 0.0]), 0.0, 0.5, 1e-3)
            .unwrap();
        assert!((path.inverse_jacobian_integral(1) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn csv_dump_has_expected_columns() {
        let m = Markers::uniform_1d(-1.0, 1.0, 3).unwrap();
        let b = integrate_flow(&harmonic(), &m, 0.1, 0.05).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,y,x,xi,J,S"));
        assert_eq!(lines.count(), 9);
    }
}
