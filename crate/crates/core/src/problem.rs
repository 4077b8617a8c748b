//! The semiclassical Cauchy problem
//! `iε∂_t u + (ε²/2)Δu = V u + ε^κ |u|² u`, `u(0) = a₀^ε e^{iφ₀/ε}`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{apply_derivative, evaluate_spectrum, ComplexField, PeriodicGrid, RealField};

/// Criticality regime, i.e. the power `κ` of `ε` in front of the nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    /// `κ = 0`: phase and amplitude are coupled at leading order.
    Supercritical,
    /// `κ = 1`: nonlinear phase self-modulation.
    Critical,
    /// `κ = 2`: nonlinearity invisible at leading order.
    Subcritical,
}

impl Criticality {
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        match kappa {
            k if k == 0.0 => Ok(Self::Supercritical),
            k if k == 1.0 => Ok(Self::Critical),
            k if k == 2.0 => Ok(Self::Subcritical),
            k => Err(Error::invalid(format!("kappa must be 0, 1 or 2, got {k}"))),
        }
    }

    pub fn kappa(self) -> i32 {
        match self {
            Self::Supercritical => 0,
            Self::Critical => 1,
            Self::Subcritical => 2,
        }
    }

    /// `ε^κ`.
    pub fn coupling<T: Real>(self, eps: T) -> T {
        eps.powi(self.kappa())
    }
}

/// One term `A cos(k·x + θ)` of a bounded periodic potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct CosineMode<T> {
    pub amplitude: T,
    pub wavevector: [T; 2],
    #[serde(default)]
    pub phase: T,
}

/// External potential `V(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub enum PotentialSpec<T> {
    Zero,
    /// `V = ½ Σ ω_i² x_i²`.
    Harmonic { omega: Vec<T> },
    /// Finite cosine series; bounded with all derivatives.
    Periodic { modes: Vec<CosineMode<T>> },
}

impl<T: Real> PotentialSpec<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Harmonic { omega } => {
                if omega.len() != dim {
                    return Err(Error::invalid(format!("harmonic potential needs {dim} frequencies, got {}", omega.len())));
                }
                if omega.iter().any(|w| !w.is_finite()) {
                    return Err(Error::invalid("harmonic frequencies must be finite"));
                }
                Ok(())
            }
            Self::Periodic { modes } => {
                for m in modes {
                    let finite = m.amplitude.is_finite() && m.phase.is_finite() && m.wavevector.iter().all(|k| k.is_finite());
                    if !finite {
                        return Err(Error::invalid("periodic potential mode has non-finite parameters"));
                    }
                    if dim == 1 && m.wavevector[1] != T::zero() {
                        return Err(Error::invalid("1D periodic potential mode must have a zero second wavevector component"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Bounded on the whole space (usable by the periodic PDE solvers).
    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Harmonic { .. })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Periodic { modes } => modes.iter().all(|m| m.amplitude == T::zero()),
            Self::Harmonic { omega } => omega.iter().all(|w| *w == T::zero()),
        }
    }

    // Time-independent potentials only; `_t` keeps the evaluator signature general.
    pub fn value(&self, _t: T, x: &[T; 2]) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Harmonic { omega } => omega
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&w, &xi)| acc + T::lit(0.5) * w * w * xi * xi),
            Self::Periodic { modes } => modes.iter().fold(T::zero(), |acc, m| acc + m.amplitude * m.arg(x).cos()),
        }
    }

    pub fn gradient(&self, _t: T, x: &[T; 2]) -> [T; 2] {
        match self {
            Self::Zero => [T::zero(); 2],
            Self::Harmonic { omega } => {
                let mut g = [T::zero(); 2];
                for (i, &w) in omega.iter().enumerate() {
                    g[i] = w * w * x[i];
                }
                g
            }
            Self::Periodic { modes } => modes.iter().fold([T::zero(); 2], |g, m| {
                let s = -m.amplitude * m.arg(x).sin();
                [g[0] + s * m.wavevector[0], g[1] + s * m.wavevector[1]]
            }),
        }
    }

    pub fn hessian(&self, _t: T, x: &[T; 2]) -> [[T; 2]; 2] {
        match self {
            Self::Zero => [[T::zero(); 2]; 2],
            Self::Harmonic { omega } => {
                let mut h = [[T::zero(); 2]; 2];
                for (i, &w) in omega.iter().enumerate() {
                    h[i][i] = w * w;
                }
                h
            }
            Self::Periodic { modes } => modes.iter().fold([[T::zero(); 2]; 2], |mut h, m| {
                let c = -m.amplitude * m.arg(x).cos();
                for i in 0..2 {
                    for j in 0..2 {
                        h[i][j] = h[i][j] + c * m.wavevector[i] * m.wavevector[j];
                    }
                }
                h
            }),
        }
    }

    pub fn sample(&self, grid: &PeriodicGrid<T>) -> Result<RealField<T>> {
        RealField::from_fn(grid, "V", |x| self.value(T::zero(), &x))
    }

    /// Largest sampled second derivative on the grid (sub-quadratic check).
    pub fn max_second_derivative(&self, grid: &PeriodicGrid<T>) -> T {
        (0..grid.len()).fold(T::zero(), |m, i| {
            let h = self.hessian(T::zero(), &grid.position(i));
            h.iter().flatten().fold(m, |m, v| m.max(v.abs()))
        })
    }
}

impl<T: Real> CosineMode<T> {
    fn arg(&self, x: &[T; 2]) -> T {
        self.wavevector[0] * x[0] + self.wavevector[1] * x[1] + self.phase
    }
}

/// Precomputed spectra for a sampled periodic phase and its derivatives.
#[derive(Clone, Debug)]
pub struct SampledPhase<T: Real> {
    field: RealField<T>,
    value: Vec<Complex<T>>,
    gradient: Vec<Vec<Complex<T>>>,
    hessian: Vec<Vec<Vec<Complex<T>>>>,
}

impl<T: Real> SampledPhase<T> {
    pub fn new(field: RealField<T>) -> Self {
        let grid = field.grid().clone();
        let dim = grid.dim();
        let value = field.to_complex().spectrum();
        let gradient: Vec<_> = (0..dim)
            .map(|a| {
                let mut s = value.clone();
                apply_derivative(&grid, &mut s, a, 1);
                s
            })
            .collect();
        let hessian = (0..dim)
            .map(|a| {
                (0..dim)
                    .map(|b| {
                        let mut s = value.clone();
                        if a == b {
                            apply_derivative(&grid, &mut s, a, 2);
                        } else {
                            apply_derivative(&grid, &mut s, a, 1);
                            apply_derivative(&grid, &mut s, b, 1);
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        Self { field, value, gradient, hessian }
    }

    pub fn field(&self) -> &RealField<T> {
        &self.field
    }

    fn eval(&self, spec: &[Complex<T>], y: &[T; 2]) -> T {
        let grid = self.field.grid();
        let p = grid.wrap(y);
        evaluate_spectrum(grid, spec, &p).re / T::from_usize_lossy(grid.len())
    }
}

/// Initial phase `φ₀`.
#[derive(Clone, Debug)]
pub enum InitialPhaseSpec<T: Real> {
    Zero,
    /// `φ₀(y) = ½ yᵀ Q y` with symmetric `Q`.
    Quadratic { q: [[T; 2]; 2] },
    /// Periodic samples, evaluated by trigonometric interpolation.
    Sampled(Box<SampledPhase<T>>),
}

impl<T: Real> InitialPhaseSpec<T> {
    pub fn sampled(field: RealField<T>) -> Self {
        Self::Sampled(Box::new(SampledPhase::new(field)))
    }

    /// `φ₀ = ½ q y²` in one dimension.
    pub fn quadratic_1d(q: T) -> Self {
        Self::Quadratic { q: [[q, T::zero()], [T::zero(), T::zero()]] }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, Self::Quadratic { .. })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Quadratic { q } => q.iter().flatten().all(|v| *v == T::zero()),
            Self::Sampled(s) => s.field.max_abs() == T::zero(),
        }
    }

    pub fn value(&self, y: &[T; 2]) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Quadratic { q } => {
                let qy = [q[0][0] * y[0] + q[0][1] * y[1], q[1][0] * y[0] + q[1][1] * y[1]];
                T::lit(0.5) * (y[0] * qy[0] + y[1] * qy[1])
            }
            Self::Sampled(s) => s.eval(&s.value, y),
        }
    }

    pub fn gradient(&self, y: &[T; 2]) -> [T; 2] {
        match self {
            Self::Zero => [T::zero(); 2],
            Self::Quadratic { q } => [q[0][0] * y[0] + q[0][1] * y[1], q[1][0] * y[0] + q[1][1] * y[1]],
            Self::Sampled(s) => {
                let mut g = [T::zero(); 2];
                for (a, spec) in s.gradient.iter().enumerate() {
                    g[a] = s.eval(spec, y);
                }
                g
            }
        }
    }

    pub fn hessian(&self, y: &[T; 2]) -> [[T; 2]; 2] {
        match self {
            Self::Zero => [[T::zero(); 2]; 2],
            Self::Quadratic { q } => *q,
            Self::Sampled(s) => {
                let mut h = [[T::zero(); 2]; 2];
                for (a, row) in s.hessian.iter().enumerate() {
                    for (b, spec) in row.iter().enumerate() {
                        h[a][b] = s.eval(spec, y);
                    }
                }
                h
            }
        }
    }

    /// Samples `φ₀` on `grid`.
    pub fn sample(&self, grid: &PeriodicGrid<T>) -> Result<RealField<T>> {
        RealField::from_fn(grid, "phi0", |x| self.value(&x))
    }
}

/// Initial amplitude family `a₀^ε = a₀ + ε a₁ + ε² a₂`.
#[derive(Clone, Debug)]
pub struct AmplitudeFamily<T: Real> {
    pub a0: ComplexField<T>,
    pub a1: Option<ComplexField<T>>,
    pub a2: Option<ComplexField<T>>,
}

impl<T: Real> AmplitudeFamily<T> {
    pub fn fixed(a0: ComplexField<T>) -> Self {
        Self { a0, a1: None, a2: None }
    }

    pub fn with_corrector(a0: ComplexField<T>, a1: ComplexField<T>) -> Self {
        Self { a0, a1: Some(a1), a2: None }
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        self.a0.grid()
    }

    pub fn at(&self, eps: T) -> Result<ComplexField<T>> {
        let mut out = self.a0.clone();
        if let Some(a1) = &self.a1 {
            out = out.zip_with(a1, "a0eps", |a, b| a + b * eps)?;
        }
        if let Some(a2) = &self.a2 {
            out = out.zip_with(a2, "a0eps", |a, b| a + b * (eps * eps))?;
        }
        Ok(out.with_role("a0eps"))
    }

    fn validate(&self) -> Result<()> {
        self.a0.ensure_finite()?;
        for f in [&self.a1, &self.a2].into_iter().flatten() {
            f.ensure_finite()?;
            if f.grid() != self.a0.grid() {
                return Err(Error::ShapeMismatch("amplitude correctors live on a different grid".into()));
            }
        }
        Ok(())
    }
}

/// Full specification of the semiclassical Cauchy problem.
#[derive(Clone, Debug)]
pub struct SemiclassicalProblem<T: Real> {
    pub eps: T,
    pub regime: Criticality,
    pub potential: PotentialSpec<T>,
    pub phase: InitialPhaseSpec<T>,
    pub amplitude: AmplitudeFamily<T>,
}

impl<T: Real> SemiclassicalProblem<T> {
    pub fn new(
        eps: T,
        regime: Criticality,
        potential: PotentialSpec<T>,
        phase: InitialPhaseSpec<T>,
        amplitude: AmplitudeFamily<T>,
    ) -> Result<Self> {
        let p = Self { eps, regime, potential, phase, amplitude };
        p.validate()?;
        Ok(p)
    }

    /// `V = φ₀ = 0` with fixed data `a₀`.
    pub fn free(eps: T, regime: Criticality, a0: ComplexField<T>) -> Result<Self> {
        Self::new(eps, regime, PotentialSpec::Zero, InitialPhaseSpec::Zero, AmplitudeFamily::fixed(a0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > T::zero() && self.eps <= T::one()) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1], got {}", self.eps)));
        }
        self.amplitude.validate()?;
        self.potential.validate(self.grid().dim())?;
        if let InitialPhaseSpec::Sampled(s) = &self.phase {
            if s.field().grid() != self.grid() {
                return Err(Error::ShapeMismatch("sampled initial phase lives on a different grid".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        self.amplitude.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn with_eps(&self, eps: T) -> Result<Self> {
        let mut p = self.clone();
        p.eps = eps;
        p.validate()?;
        Ok(p)
    }

    /// `a₀^ε` at this problem's `ε`.
    pub fn initial_amplitude(&self) -> Result<ComplexField<T>> {
        self.amplitude.at(self.eps)
    }

    /// `u(0) = a₀^ε e^{iφ₀/ε}` sampled on the grid.
    pub fn initial_field(&self) -> Result<ComplexField<T>> {
        let a = self.initial_amplitude()?;
        let grid = a.grid().clone();
        let values = a
            .values()
            .iter()
            .enumerate()
            .map(|(i, &z)| z * crate::scalar::cis(self.phase.value(&grid.position(i)) / self.eps))
            .collect();
        ComplexField::new(&grid, values, "u0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criticality_from_kappa() {
        assert_eq!(Criticality::from_kappa(0.0).unwrap(), Criticality::Supercritical);
        assert_eq!(Criticality::from_kappa(2.0).unwrap().kappa(), 2);
        assert!(Criticality::from_kappa(0.5).is_err());
        assert!(Criticality::from_kappa(3.0).is_err());
    }

    #[test]
    fn harmonic_potential_derivatives() {
        let v = PotentialSpec::Harmonic { omega: vec![2.0f64, 0.5] };
        let x = [1.5, -2.0];
        assert!((v.value(0.0, &x) - (0.5 * 4.0 * 2.25 + 0.5 * 0.25 * 4.0)).abs() < 1e-14);
        assert_eq!(v.gradient(0.0, &x), [6.0, -0.5]);
        assert_eq!(v.hessian(0.0, &x), [[4.0, 0.0], [0.0, 0.25]]);
        assert!(!v.is_bounded());
    }

    #[test]
    fn periodic_potential_gradient_matches_difference() {
        let v = PotentialSpec::Periodic {
            modes: vec![CosineMode { amplitude: 0.3f64, wavevector: [0.4, 0.0], phase: 0.2 }],
        };
        let h = 1e-5;
        let x = 0.7;
        let fd = (v.value(0.0, &[x + h, 0.0]) - v.value(0.0, &[x - h, 0.0])) / (2.0 * h);
        assert!((fd - v.gradient(0.0, &[x, 0.0])[0]).abs() < 1e-9);
        let fd2 = (v.gradient(0.0, &[x + h, 0.0])[0] - v.gradient(0.0, &[x - h, 0.0])[0]) / (2.0 * h);
        assert!((fd2 - v.hessian(0.0, &[x, 0.0])[0][0]).abs() < 1e-9);
    }

    #[test]
    fn sampled_phase_matches_analytic() {
        let g = PeriodicGrid::new_1d(16.0, 256).unwrap();
        let g: PeriodicGrid<f64> = g;
        let field = RealField::from_fn(&g, "phi0", |x| (-x[0] * x[0]).exp()).unwrap();
        let p = InitialPhaseSpec::sampled(field);
        let y = [0.37f64, 0.0];
        let e = (-y[0] * y[0]).exp();
        assert!((p.value(&y) - e).abs() < 1e-12);
        assert!((p.gradient(&y)[0] + 2.0 * y[0] * e).abs() < 1e-11);
        assert!((p.hessian(&y)[0][0] - (4.0 * y[0] * y[0] - 2.0) * e).abs() < 1e-10);
    }

    #[test]
    fn problem_validation() {
        let g = PeriodicGrid::new_1d(16.0, 64).unwrap();
        let a0 = ComplexField::zeros(&g, "a0");
        assert!(SemiclassicalProblem::free(0.0, Criticality::Critical, a0.clone()).is_err());
        assert!(SemiclassicalProblem::free(1.5, Criticality::Critical, a0.clone()).is_err());
        assert!(SemiclassicalProblem::new(
            0.1,
            Criticality::Critical,
            PotentialSpec::Harmonic { omega: vec![1.0, 1.0] },
            InitialPhaseSpec::Zero,
            AmplitudeFamily::fixed(a0)
        )
        .is_err());
    }

    #[test]
    fn amplitude_family_expansion() {
        let g = PeriodicGrid::new_1d(16.0, 64).unwrap();
        let one = ComplexField::from_fn(&g, "a0", |_| Complex::new(1.0, 0.0)).unwrap();
        let i = ComplexField::from_fn(&g, "a1", |_| Complex::new(0.0, 1.0)).unwrap();
        let fam = AmplitudeFamily { a0: one, a1: Some(i.clone()), a2: Some(i) };
        let a = fam.at(0.1).unwrap();
        assert!((a.values()[3] - Complex::new(1.0, 0.11)).norm() < 1e-15);
    }
}
