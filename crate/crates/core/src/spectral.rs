//! Periodic grids, sampled fields and the Fourier machinery under every solver.
//!
//! Grids are cell-centred on the origin: along each axis the nodes are
//! `x_j = -L/2 + j h`, `h = L/N`. Transforms are unnormalised forward and
//! `1/N`-normalised inverse; norms use the Plancherel-compatible integral
//! convention so refining the grid leaves them unchanged.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cis, is_finite_c, Real};

/// Serializable description of a grid (used in sidecars and configs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lengths: Vec<f64>,
    pub points: Vec<usize>,
}

struct GridInner<T: Real> {
    lengths: Vec<T>,
    points: Vec<usize>,
    wavenumbers: Vec<Vec<T>>,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
}

/// Uniform periodic grid in one or two dimensions.
///
/// Cloning is cheap; FFT plans are shared.
#[derive(Clone)]
pub struct PeriodicGrid<T: Real> {
    inner: Arc<GridInner<T>>,
}

impl<T: Real> fmt::Debug for PeriodicGrid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("lengths", &self.inner.lengths)
            .field("points", &self.inner.points)
            .finish()
    }
}

impl<T: Real> PartialEq for PeriodicGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.points == other.inner.points
                && self.inner.lengths == other.inner.lengths)
    }
}

impl<T: Real> PeriodicGrid<T> {
    pub fn new(lengths: &[T], points: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 2 || lengths.len() != points.len() {
            return Err(Error::invalid(format!(
                "grid dimension must be 1 or 2 with one length per axis (got {} lengths, {} sizes)",
                lengths.len(),
                points.len()
            )));
        }
        for (&l, &n) in lengths.iter().zip(points) {
            if !(l > T::zero() && l.is_finite()) {
                return Err(Error::invalid(format!("box length must be positive, got {l}")));
            }
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "points per axis must be a power of two >= 8, got {n}"
                )));
            }
        }
        let mut planner = FftPlanner::new();
        let forward = points.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = points.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let wavenumbers = lengths
            .iter()
            .zip(points)
            .map(|(&l, &n)| fft_wavenumbers(l, n))
            .collect();
        Ok(Self {
            inner: Arc::new(GridInner {
                lengths: lengths.to_vec(),
                points: points.to_vec(),
                wavenumbers,
                forward,
                inverse,
            }),
        })
    }

    pub fn new_1d(length: T, points: usize) -> Result<Self> {
        Self::new(&[length], &[points])
    }

    pub fn new_2d(lengths: [T; 2], points: [usize; 2]) -> Result<Self> {
        Self::new(&lengths, &points)
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        let lengths: Vec<T> = spec.lengths.iter().map(|&l| T::lit(l)).collect();
        Self::new(&lengths, &spec.points)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lengths: self.inner.lengths.iter().map(|l| l.to_f64_lossy()).collect(),
            points: self.inner.points.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.points.len()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.inner.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self, axis: usize) -> usize {
        self.inner.points[axis]
    }

    pub fn length(&self, axis: usize) -> T {
        self.inner.lengths[axis]
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.inner.lengths[axis] / T::from_usize_lossy(self.inner.points[axis])
    }

    /// Quadrature weight of a single node (`h_0 h_1 ...`).
    pub fn cell_volume(&self) -> T {
        (0..self.dim()).fold(T::one(), |acc, a| acc * self.spacing(a))
    }

    pub fn volume(&self) -> T {
        self.inner.lengths.iter().fold(T::one(), |acc, &l| acc * l)
    }

    /// Coordinate of node `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> T {
        -self.length(axis) / T::lit(2.0) + T::from_usize_lossy(j) * self.spacing(axis)
    }

    /// Axis-wise coordinates of all nodes along `axis`.
    pub fn axis_coordinates(&self, axis: usize) -> Vec<T> {
        (0..self.points(axis)).map(|j| self.coordinate(axis, j)).collect()
    }

    /// Splits a flat (row-major, last axis fastest) index into per-axis indices.
    pub fn unravel(&self, flat: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [flat, 0]
        } else {
            let n1 = self.inner.points[1];
            [flat / n1, flat % n1]
        }
    }

    /// Physical position of a flat node index. For 1D grids the second
    /// component is zero.
    pub fn position(&self, flat: usize) -> [T; 2] {
        let [i0, i1] = self.unravel(flat);
        if self.dim() == 1 {
            [self.coordinate(0, i0), T::zero()]
        } else {
            [self.coordinate(0, i0), self.coordinate(1, i1)]
        }
    }

    /// Fourier wavenumbers along `axis`, in FFT order.
    pub fn wavenumbers(&self, axis: usize) -> &[T] {
        &self.inner.wavenumbers[axis]
    }

    /// Largest resolved wavenumber `π/h` along `axis`.
    pub fn nyquist(&self, axis: usize) -> T {
        T::PI() / self.spacing(axis)
    }

    /// Wavevector of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [T; 2] {
        let [i0, i1] = self.unravel(flat);
        if self.dim() == 1 {
            [self.inner.wavenumbers[0][i0], T::zero()]
        } else {
            [self.inner.wavenumbers[0][i0], self.inner.wavenumbers[1][i1]]
        }
    }

    /// `|k|²` for every spectral index.
    pub fn wavenumber_squared(&self) -> Vec<T> {
        (0..self.len())
            .map(|i| {
                let k = self.wavevector(i);
                k[0] * k[0] + k[1] * k[1]
            })
            .collect()
    }

    /// True for the Nyquist index along `axis` (only one per axis).
    pub fn is_nyquist_index(&self, axis: usize, j: usize) -> bool {
        j == self.points(axis) / 2
    }

    /// Unnormalised forward transform in place.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &self.inner.forward);
    }

    /// Inverse transform in place, including the `1/N` normalisation.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &self.inner.inverse);
        let scale = T::one() / T::from_usize_lossy(self.len());
        for z in buf.iter_mut() {
            *z = *z * scale;
        }
    }

    fn transform(&self, buf: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>]) {
        assert_eq!(buf.len(), self.len(), "buffer length does not match grid");
        match self.dim() {
            1 => plans[0].process(buf),
            _ => {
                let (n0, n1) = (self.inner.points[0], self.inner.points[1]);
                // rows are contiguous (axis 1)
                plans[1].process(buf);
                let mut column = vec![Complex::new(T::zero(), T::zero()); n0];
                for c in 0..n1 {
                    for r in 0..n0 {
                        column[r] = buf[r * n1 + c];
                    }
                    plans[0].process(&mut column);
                    for r in 0..n0 {
                        buf[r * n1 + c] = column[r];
                    }
                }
            }
        }
    }

    /// Mask of spectral indices kept by the 2/3 dealiasing rule.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let cut: Vec<T> = (0..self.dim())
            .map(|a| T::lit(2.0 / 3.0) * self.nyquist(a))
            .collect();
        (0..self.len())
            .map(|i| {
                let k = self.wavevector(i);
                (0..self.dim()).all(|a| k[a].abs() <= cut[a])
            })
            .collect()
    }

    /// Fraction of spectral energy with `|k_a| > fraction * k_ref_a` on any axis,
    /// where `k_ref` is the Nyquist wavenumber scaled by `band`.
    pub fn tail_fraction(&self, spectrum: &[Complex<T>], band: T, fraction: T) -> T {
        let cut: Vec<T> = (0..self.dim())
            .map(|a| fraction * band * self.nyquist(a))
            .collect();
        let mut total = T::zero();
        let mut tail = T::zero();
        for (i, z) in spectrum.iter().enumerate() {
            let e = z.norm_sqr();
            total = total + e;
            let k = self.wavevector(i);
            if (0..self.dim()).any(|a| k[a].abs() > cut[a]) {
                tail = tail + e;
            }
        }
        if total > T::zero() {
            tail / total
        } else {
            T::zero()
        }
    }

    /// True when `x` lies in the closed box `[-L/2, L/2]` on every axis.
    pub fn contains(&self, x: &[T]) -> bool {
        let slack = T::lit(1e-12);
        (0..self.dim()).all(|a| {
            let half = self.length(a) / T::lit(2.0);
            x[a] >= -half - slack * self.length(a) && x[a] <= half + slack * self.length(a)
        })
    }

    /// Periodic image of `x` in `[-L/2, L/2)`.
    pub fn wrap(&self, x: &[T]) -> [T; 2] {
        let mut out = [T::zero(); 2];
        for a in 0..self.dim() {
            let l = self.length(a);
            let half = l / T::lit(2.0);
            let shifted = x[a] + half;
            out[a] = shifted - (shifted / l).floor() * l - half;
        }
        out
    }
}

fn fft_wavenumbers<T: Real>(length: T, n: usize) -> Vec<T> {
    let base = T::TAU() / length;
    (0..n)
        .map(|j| {
            let q = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
            base * T::from_i64(q).expect("wavenumber index")
        })
        .collect()
}

/// Complex samples on a periodic grid.
#[derive(Clone, Debug)]
pub struct ComplexField<T: Real> {
    grid: PeriodicGrid<T>,
    values: Vec<Complex<T>>,
    role: String,
}

/// Real samples on a periodic grid.
#[derive(Clone, Debug)]
pub struct RealField<T: Real> {
    grid: PeriodicGrid<T>,
    values: Vec<T>,
    role: String,
}

fn check_count(grid_len: usize, got: usize) -> Result<()> {
    if grid_len != got {
        return Err(Error::ShapeMismatch(format!(
            "field has {got} samples, grid has {grid_len} nodes"
        )));
    }
    Ok(())
}

impl<T: Real> ComplexField<T> {
    pub fn new(grid: &PeriodicGrid<T>, values: Vec<Complex<T>>, role: impl Into<String>) -> Result<Self> {
        check_count(grid.len(), values.len())?;
        let role = role.into();
        if let Some(index) = values.iter().position(|z| !is_finite_c(z)) {
            return Err(Error::NonFinite { context: format!("field '{role}'"), index });
        }
        Ok(Self { grid: grid.clone(), values, role })
    }

    /// Skips the finiteness scan; callers guarantee the invariant.
    pub(crate) fn from_parts(grid: &PeriodicGrid<T>, values: Vec<Complex<T>>, role: impl Into<String>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid: grid.clone(), values, role: role.into() }
    }

    pub fn zeros(grid: &PeriodicGrid<T>, role: impl Into<String>) -> Self {
        Self::from_parts(grid, vec![Complex::new(T::zero(), T::zero()); grid.len()], role)
    }

    /// Samples `f` at every node; `f` receives the node position.
    pub fn from_fn(
        grid: &PeriodicGrid<T>,
        role: impl Into<String>,
        f: impl Fn([T; 2]) -> Complex<T>,
    ) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self::new(grid, values, role)
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = role.into();
        self
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|z| !is_finite_c(z)) {
            Some(index) => Err(Error::NonFinite { context: format!("field '{}'", self.role), index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, role: impl Into<String>, f: impl Fn(Complex<T>) -> Complex<T>) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&z| f(z)).collect(), role)
    }

    pub fn zip_with(
        &self,
        other: &Self,
        role: impl Into<String>,
        f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>,
    ) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(&self.grid, values, role)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, format!("{}-{}", self.role, other.role), |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, format!("{}+{}", self.role, other.role), |a, b| a + b)
    }

    pub fn scale(&self, c: Complex<T>) -> Self {
        Self::from_parts(&self.grid, self.values.iter().map(|&z| z * c).collect(), self.role.clone())
    }

    /// Pointwise modulus.
    pub fn modulus(&self) -> RealField<T> {
        RealField::from_parts(&self.grid, self.values.iter().map(|z| z.norm()).collect(), format!("|{}|", self.role))
    }

    pub fn real_part(&self) -> RealField<T> {
        RealField::from_parts(&self.grid, self.values.iter().map(|z| z.re).collect(), format!("Re {}", self.role))
    }

    pub fn imag_part(&self) -> RealField<T> {
        RealField::from_parts(&self.grid, self.values.iter().map(|z| z.im).collect(), format!("Im {}", self.role))
    }

    /// Unnormalised Fourier coefficients.
    pub fn spectrum(&self) -> Vec<Complex<T>> {
        let mut buf = self.values.clone();
        self.grid.forward(&mut buf);
        buf
    }
}

impl<T: Real> RealField<T> {
    pub fn new(grid: &PeriodicGrid<T>, values: Vec<T>, role: impl Into<String>) -> Result<Self> {
        check_count(grid.len(), values.len())?;
        let role = role.into();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("field '{role}'"), index });
        }
        Ok(Self { grid: grid.clone(), values, role })
    }

    pub(crate) fn from_parts(grid: &PeriodicGrid<T>, values: Vec<T>, role: impl Into<String>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid: grid.clone(), values, role: role.into() }
    }

    pub fn zeros(grid: &PeriodicGrid<T>, role: impl Into<String>) -> Self {
        Self::from_parts(grid, vec![T::zero(); grid.len()], role)
    }

    pub fn from_fn(grid: &PeriodicGrid<T>, role: impl Into<String>, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self::new(grid, values, role)
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = role.into();
        self
    }

    pub fn map(&self, role: impl Into<String>, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect(), role)
    }

    pub fn zip_with(&self, other: &Self, role: impl Into<String>, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(&self.grid, values, role)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, format!("{}-{}", self.role, other.role), |a, b| a - b)
    }

    pub fn to_complex(&self) -> ComplexField<T> {
        ComplexField::from_parts(
            &self.grid,
            self.values.iter().map(|&v| Complex::new(v, T::zero())).collect(),
            self.role.clone(),
        )
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub(crate) fn ensure_same_grid<T: Real>(a: &PeriodicGrid<T>, b: &PeriodicGrid<T>) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("grids differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Derivative along `axis` by the Fourier multiplier `(ik)^order`.
///
/// `order` must be 1 or 2. The Nyquist mode is dropped for odd orders.
pub fn spectral_derivative<T: Real>(f: &ComplexField<T>, axis: usize, order: u32) -> Result<ComplexField<T>> {
    let grid = f.grid();
    if axis >= grid.dim() {
        return Err(Error::invalid(format!("axis {axis} out of range for a {}D grid", grid.dim())));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::invalid(format!("derivative order must be 1 or 2, got {order}")));
    }
    f.ensure_finite()?;
    let mut buf = f.spectrum();
    apply_derivative(grid, &mut buf, axis, order);
    grid.inverse(&mut buf);
    Ok(ComplexField::from_parts(grid, buf, format!("d{order}_{axis} {}", f.role())))
}

/// Multiplies a spectrum by `(ik_axis)^order` in place.
pub(crate) fn apply_derivative<T: Real>(grid: &PeriodicGrid<T>, spec: &mut [Complex<T>], axis: usize, order: u32) {
    let nyq = grid.points(axis) / 2;
    for (i, z) in spec.iter_mut().enumerate() {
        let idx = grid.unravel(i)[axis];
        let k = grid.wavenumbers(axis)[idx];
        *z = match order {
            1 if idx == nyq => Complex::new(T::zero(), T::zero()),
            1 => Complex::new(-k * z.im, k * z.re),
            _ => *z * (-k * k),
        };
    }
}

/// Sobolev norm with the Plancherel normalisation (`s = 0` is the L² norm).
///
/// The weight is `|k|` for the homogeneous norm and `(1 + |k|²)^{1/2}`
/// otherwise.
pub fn sobolev_norm<T: Real>(f: &ComplexField<T>, s: T, homogeneous: bool) -> Result<T> {
    if !(s >= T::zero()) {
        return Err(Error::invalid(format!("Sobolev index must be non-negative, got {s}")));
    }
    f.ensure_finite()?;
    Ok(sobolev_norm_of_spectrum(f.grid(), &f.spectrum(), s, homogeneous))
}

pub(crate) fn sobolev_norm_of_spectrum<T: Real>(grid: &PeriodicGrid<T>, spec: &[Complex<T>], s: T, homogeneous: bool) -> T {
    let n = T::from_usize_lossy(grid.len());
    let mut acc = T::zero();
    for (i, z) in spec.iter().enumerate() {
        let k = grid.wavevector(i);
        let k2 = k[0] * k[0] + k[1] * k[1];
        let w2s = if homogeneous {
            if s == T::zero() {
                T::one()
            } else {
                k2.powf(s)
            }
        } else {
            (T::one() + k2).powf(s)
        };
        acc = acc + w2s * z.norm_sqr();
    }
    (acc * grid.volume() / (n * n)).sqrt()
}

/// Lebesgue norm selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lp {
    L2,
    Inf,
}

/// `L²` (quadrature integral) or `L^∞` (max modulus) norm.
pub fn lp_norm<T: Real>(f: &ComplexField<T>, p: Lp) -> T {
    match p {
        Lp::L2 => {
            let sum: T = f.values().iter().map(|z| z.norm_sqr()).sum();
            (sum * f.grid().cell_volume()).sqrt()
        }
        Lp::Inf => f.values().iter().fold(T::zero(), |m, z| m.max(z.norm())),
    }
}

/// `‖f‖_{L²} + ‖f‖_{L^∞}`, the norm on `L² ∩ L^∞`.
pub fn l2_linf_norm<T: Real>(f: &ComplexField<T>) -> T {
    lp_norm(f, Lp::L2) + lp_norm(f, Lp::Inf)
}

/// Trigonometric interpolation of `f` at arbitrary points in the box.
///
/// The Nyquist mode is split symmetrically (a cosine), so real data give
/// real interpolants and grid nodes are reproduced.
pub fn band_limited_interpolate<T: Real, P: AsRef<[T]>>(f: &ComplexField<T>, points: &[P]) -> Result<Vec<Complex<T>>> {
    let grid = f.grid();
    for p in points {
        let p = p.as_ref();
        if p.len() < grid.dim() {
            return Err(Error::invalid(format!("point has {} coordinates, grid is {}D", p.len(), grid.dim())));
        }
        if !grid.contains(p) {
            return Err(Error::OutsideBox { point: p.iter().map(|v| v.to_f64_lossy()).collect() });
        }
    }
    f.ensure_finite()?;
    let spec = f.spectrum();
    let n = T::from_usize_lossy(grid.len());
    Ok(points
        .iter()
        .map(|p| evaluate_spectrum(grid, &spec, p.as_ref()) / n)
        .collect())
}

/// Per-axis Fourier factors `e^{ik(x - x_0)}` with the Nyquist entry
/// replaced by `cos`.
fn axis_factors<T: Real>(grid: &PeriodicGrid<T>, axis: usize, x: T) -> Vec<Complex<T>> {
    let x0 = grid.coordinate(axis, 0);
    let nyq = grid.points(axis) / 2;
    grid.wavenumbers(axis)
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let theta = k * (x - x0);
            if j == nyq {
                Complex::new(theta.cos(), T::zero())
            } else {
                cis(theta)
            }
        })
        .collect()
}

/// Unnormalised evaluation of the trigonometric interpolant.
pub(crate) fn evaluate_spectrum<T: Real>(grid: &PeriodicGrid<T>, spec: &[Complex<T>], p: &[T]) -> Complex<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let e0 = axis_factors(grid, 0, p[0]);
    if grid.dim() == 1 {
        return spec.iter().zip(&e0).fold(zero, |acc, (c, e)| acc + c * e);
    }
    let e1 = axis_factors(grid, 1, p[1]);
    let n1 = grid.points(1);
    let mut acc = zero;
    for (r, f0) in e0.iter().enumerate() {
        let row = &spec[r * n1..(r + 1) * n1];
        let inner = row.iter().zip(&e1).fold(zero, |a, (c, e)| a + c * e);
        acc = acc + inner * f0;
    }
    acc
}
