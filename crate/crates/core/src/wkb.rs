//! WKB approximants.
//!
//! For `κ ≥ 1` the solution is `a e^{iε^{κ-1}G} e^{iφ_eik/ε}` with
//! `a = a₀(y)/√J_t(y)` and `G = -|a₀(y)|² ∫₀ᵗ J_s(y)⁻¹ ds`, evaluated at the
//! label `y = y(t, x)` of the ray reaching `x`.
//!
//! For `κ = 0`, `V = φ₀ = 0` the skew-free phase–amplitude system is expanded
//! in time, `Φ ~ Σ t^{2j-1} Φ_j`, `a ~ Σ t^{2j} a_j`, and
//! `u_K = a₀^ε exp(i Σ_{j≤K} t^{2j-1} Φ_j / ε)`.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::Criticality;
use crate::rays::{invert_flow, FlowInversion, RayBundle};
use crate::scalar::{cis, Real};
use crate::spectral::{apply_derivative, ensure_same_grid, evaluate_spectrum, ComplexField, PeriodicGrid, RealField};

/// Which approximation a [`WkbApproximant`] represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Subcritical,
    Critical,
    SupercriticalLeading,
    SupercriticalCorrected,
    Taylor(usize),
}

/// Components of an approximate solution at one time.
///
/// `u = a · e^{i·modulation_scale·G} · e^{i·φ/ε}`.
#[derive(Clone, Debug)]
pub struct WkbApproximant<T: Real> {
    pub regime: Regime,
    pub time: T,
    pub eps: T,
    pub amplitude: ComplexField<T>,
    /// `G` (critical/sub-critical) or `φ¹` (corrected super-critical).
    pub modulation: Option<RealField<T>>,
    /// Multiplies `modulation` in the exponent: `ε^{κ-1}` or 1.
    pub modulation_scale: T,
    /// Rapid phase, divided by `ε` in the exponent.
    pub fast_phase: RealField<T>,
    /// Caustic horizon or other end of validity, when known.
    pub validity_horizon: Option<T>,
}

impl<T: Real> WkbApproximant<T> {
    pub fn assemble(&self) -> Result<ComplexField<T>> {
        assemble_phases(&self.amplitude, self.modulation.as_ref(), self.modulation_scale, &self.fast_phase, self.eps)
    }
}

fn assemble_phases<T: Real>(
    a: &ComplexField<T>,
    slow: Option<&RealField<T>>,
    slow_scale: T,
    fast: &RealField<T>,
    eps: T,
) -> Result<ComplexField<T>> {
    ensure_same_grid(a.grid(), fast.grid())?;
    if let Some(g) = slow {
        ensure_same_grid(a.grid(), g.grid())?;
    }
    let values = a
        .values()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let slow_phase = slow.map_or(T::zero(), |g| slow_scale * g.values()[i]);
            z * cis(slow_phase + fast.values()[i] / eps)
        })
        .collect();
    ComplexField::new(a.grid(), values, "u_approx")
}

/// Evaluates `a₀` (periodically extended) at every label of the inversion.
fn pull_back<T: Real>(a0: &ComplexField<T>, inv: &FlowInversion<T>) -> Result<Vec<Complex<T>>> {
    ensure_same_grid(a0.grid(), inv.grid())?;
    let grid = a0.grid();
    let spec = a0.spectrum();
    let n = T::from_usize_lossy(grid.len());
    Ok(inv
        .labels()
        .par_iter()
        .map(|y| evaluate_spectrum(grid, &spec, &grid.wrap(y)) / n)
        .collect())
}

/// Profiles `(a, G, φ_eik)` at time `t` from a single ray-map inversion.
pub fn critical_profiles<T: Real>(
    bundle: &RayBundle<T>,
    a0: &ComplexField<T>,
    t: T,
) -> Result<(ComplexField<T>, RealField<T>, RealField<T>)> {
    let inv = invert_flow(bundle, t, a0.grid())?;
    let a0y = pull_back(a0, &inv)?;
    let jac = inv.jacobian();
    let grid = a0.grid();
    let a = a0y.iter().zip(&jac).map(|(&z, &j)| z / j.sqrt()).collect();
    let g = a0y
        .iter()
        .zip(inv.inverse_jacobian_integral())
        .map(|(z, &int)| -z.norm_sqr() * int)
        .collect();
    Ok((
        ComplexField::new(grid, a, "a")?,
        RealField::new(grid, g, "G")?,
        inv.phase(),
    ))
}

/// `a(t, x) = a₀(y) / √J_t(y)`, `y = y(t, x)`.
pub fn transport_amplitude<T: Real>(bundle: &RayBundle<T>, a0: &ComplexField<T>, t: T) -> Result<ComplexField<T>> {
    Ok(critical_profiles(bundle, a0, t)?.0)
}

/// `G(t, x) = -|a₀(y)|² ∫₀ᵗ J_s(y)⁻¹ ds` (Simpson along the ray through `x`).
pub fn self_modulation_phase<T: Real>(bundle: &RayBundle<T>, a0: &ComplexField<T>, t: T) -> Result<RealField<T>> {
    Ok(critical_profiles(bundle, a0, t)?.1)
}

/// `a · e^{iε^{κ-1}G} · e^{iφ_eik/ε}` for `κ ∈ {1, 2}`.
pub fn assemble_regime<T: Real>(
    a: &ComplexField<T>,
    g: &RealField<T>,
    phi_eik: &RealField<T>,
    eps: T,
    regime: Criticality,
) -> Result<ComplexField<T>> {
    if regime == Criticality::Supercritical {
        return Err(Error::invalid("assemble_regime covers kappa = 1 and kappa = 2 only"));
    }
    let scale = eps.powi(regime.kappa() - 1);
    assemble_phases(a, Some(g), scale, phi_eik, eps)
}

/// Builds the `κ ≥ 1` approximant of `problem` at time `t`.
pub fn build_approximant<T: Real>(
    bundle: &RayBundle<T>,
    a0: &ComplexField<T>,
    eps: T,
    regime: Criticality,
    t: T,
) -> Result<WkbApproximant<T>> {
    let (amplitude, g, fast_phase) = critical_profiles(bundle, a0, t)?;
    let tag = match regime {
        Criticality::Critical => Regime::Critical,
        Criticality::Subcritical => Regime::Subcritical,
        Criticality::Supercritical => return Err(Error::invalid("use the phase-amplitude solver for kappa = 0")),
    };
    Ok(WkbApproximant {
        regime: tag,
        time: t,
        eps,
        amplitude,
        modulation: Some(g),
        modulation_scale: eps.powi(regime.kappa() - 1),
        fast_phase,
        validity_horizon: bundle.caustic_horizon(),
    })
}

/// `u · e^{-iφ_eik/ε}`.
pub fn extract_amplitude<T: Real>(u: &ComplexField<T>, phi_eik: &RealField<T>, eps: T) -> Result<ComplexField<T>> {
    ensure_same_grid(u.grid(), phi_eik.grid())?;
    let values = u
        .values()
        .iter()
        .zip(phi_eik.values())
        .map(|(&z, &p)| z * cis(-p / eps))
        .collect();
    ComplexField::new(u.grid(), values, "a_eps")
}

/// Largest supported Taylor order.
pub const MAX_TAYLOR_ORDER: usize = 4;

/// Time-Taylor coefficients of the skew-free system with `V = φ₀ = 0`.
#[derive(Clone, Debug)]
pub struct TaylorCoefficients<T: Real> {
    order: usize,
    /// `Φ_1 … Φ_K` (coefficients of `t^{2j-1}`).
    phase: Vec<RealField<T>>,
    /// `a_1 … a_K` (coefficients of `t^{2j}`).
    amplitude: Vec<ComplexField<T>>,
    /// Every phase coefficient `p_m` of `t^m`, `m = 0..=2K`, including the
    /// even ones that vanish identically.
    phase_series: Vec<RealField<T>>,
}

impl<T: Real> TaylorCoefficients<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn phase(&self, j: usize) -> &RealField<T> {
        &self.phase[j - 1]
    }

    pub fn amplitude(&self, j: usize) -> &ComplexField<T> {
        &self.amplitude[j - 1]
    }

    /// Coefficient of `t^m` in the phase series.
    pub fn phase_power(&self, m: usize) -> &RealField<T> {
        &self.phase_series[m]
    }

    /// `Σ_{j ≤ K} t^{2j-1} Φ_j`.
    pub fn phase_sum(&self, t: T) -> RealField<T> {
        self.truncated_phase_sum(t, self.order)
    }

    /// Sum over the first `k ≤ K` terms.
    pub fn truncated_phase_sum(&self, t: T, k: usize) -> RealField<T> {
        let grid = self.phase[0].grid().clone();
        let mut out = vec![T::zero(); grid.len()];
        for (j, phi) in self.phase.iter().take(k).enumerate() {
            let w = t.powi(2 * j as i32 + 1);
            for (o, &v) in out.iter_mut().zip(phi.values()) {
                *o = *o + w * v;
            }
        }
        RealField::from_parts(&grid, out, "phase_sum")
    }
}

/// Spectral gradient components and Laplacian of one series coefficient.
struct Derivatives<T> {
    grad: Vec<Vec<Complex<T>>>,
    lap: Vec<Complex<T>>,
}

fn derivatives<T: Real>(grid: &PeriodicGrid<T>, f: &[Complex<T>]) -> Derivatives<T> {
    let mut hat = f.to_vec();
    grid.forward(&mut hat);
    let grad = (0..grid.dim())
        .map(|a| {
            let mut s = hat.clone();
            apply_derivative(grid, &mut s, a, 1);
            grid.inverse(&mut s);
            s
        })
        .collect();
    let mut lap = vec![Complex::new(T::zero(), T::zero()); f.len()];
    for a in 0..grid.dim() {
        let mut s = hat.clone();
        apply_derivative(grid, &mut s, a, 2);
        grid.inverse(&mut s);
        for (l, v) in lap.iter_mut().zip(s) {
            *l = *l + v;
        }
    }
    Derivatives { grad, lap }
}

/// Order-by-order power-series solution of
/// `∂_tΦ + ½|∇Φ|² + |a|² = 0`, `∂_t a + ∇Φ·∇a + ½ aΔΦ = 0`,
/// `Φ(0) = 0`, `a(0) = a₀^ε`.
///
/// With `p_m`, `q_m` the coefficients of `t^m`:
/// `(m+1) p_{m+1} = -(½ Σ ∇p_i·∇p_j + Σ q_i q̄_j)`,
/// `(m+1) q_{m+1} = -(Σ ∇p_i·∇q_j + ½ Σ q_i Δp_j)`, sums over `i + j = m`.
pub fn taylor_phase_coefficients<T: Real>(a0eps: &ComplexField<T>, order: usize) -> Result<TaylorCoefficients<T>> {
    if order == 0 || order > MAX_TAYLOR_ORDER {
        return Err(Error::invalid(format!("Taylor order must lie in 1..={MAX_TAYLOR_ORDER}, got {order}")));
    }
    a0eps.ensure_finite()?;
    let grid = a0eps.grid().clone();
    let n = grid.len();
    let zero = Complex::new(T::zero(), T::zero());
    let top = 2 * order;

    let mut p: Vec<Vec<Complex<T>>> = vec![vec![zero; n]];
    let mut q: Vec<Vec<Complex<T>>> = vec![a0eps.values().to_vec()];
    let mut dp = vec![derivatives(&grid, &p[0])];
    let mut dq = vec![derivatives(&grid, &q[0])];

    for m in 0..top {
        let inv = T::one() / T::from_usize_lossy(m + 1);
        let mut next_p = vec![zero; n];
        let mut next_q = vec![zero; n];
        for i in 0..=m {
            let j = m - i;
            for x in 0..n {
                let mut gpp = zero;
                let mut gpq = zero;
                for a in 0..grid.dim() {
                    gpp = gpp + dp[i].grad[a][x] * dp[j].grad[a][x];
                    gpq = gpq + dp[i].grad[a][x] * dq[j].grad[a][x];
                }
                next_p[x] = next_p[x] - (gpp * T::lit(0.5) + q[i][x] * q[j][x].conj());
                next_q[x] = next_q[x] - (gpq + q[j][x] * dp[i].lap[x] * T::lit(0.5));
            }
        }
        for v in next_p.iter_mut() {
            // the phase series is real
            *v = Complex::new(v.re * inv, T::zero());
        }
        for v in next_q.iter_mut() {
            *v = *v * inv;
        }
        dp.push(derivatives(&grid, &next_p));
        dq.push(derivatives(&grid, &next_q));
        p.push(next_p);
        q.push(next_q);
    }

    let phase_series: Vec<RealField<T>> = p
        .iter()
        .enumerate()
        .map(|(m, c)| RealField::new(&grid, c.iter().map(|z| z.re).collect(), format!("p{m}")))
        .collect::<Result<_>>()?;
    let phase = (1..=order).map(|j| phase_series[2 * j - 1].clone().with_role(format!("Phi{j}"))).collect();
    let amplitude = (1..=order)
        .map(|j| ComplexField::new(&grid, q[2 * j].clone(), format!("a{j}")))
        .collect::<Result<_>>()?;
    Ok(TaylorCoefficients { order, phase, amplitude, phase_series })
}

/// `u_K(t) = a₀^ε exp(i Σ_{j≤K} t^{2j-1} Φ_j / ε)`.
pub fn assemble_uk<T: Real>(a0eps: &ComplexField<T>, coeffs: &TaylorCoefficients<T>, eps: T, t: T) -> Result<ComplexField<T>> {
    let sum = coeffs.phase_sum(t);
    ensure_same_grid(a0eps.grid(), sum.grid())?;
    let values = a0eps
        .values()
        .iter()
        .zip(sum.values())
        .map(|(&a, &s)| a * cis(s / eps))
        .collect();
    ComplexField::new(a0eps.grid(), values, format!("u{}", coeffs.order))
}

/// Modulus of `u_1 - v_1` for data `a₀`, `ã₀`:
/// `|a₀ - ã₀ e^{-iθ}|`, `θ = (t/ε)(|ã₀|² - |a₀|²)`.
///
/// For `ã₀ = a₀ + δ b₀` this is `2|a₀ sin((tδ/ε) Re(ā₀ b₀))| + O(δ)`.
pub fn separation_profile<T: Real>(
    a0: &ComplexField<T>,
    a0_tilde: &ComplexField<T>,
    delta: T,
    eps: T,
    t: T,
) -> Result<RealField<T>> {
    if !(delta >= T::zero()) {
        return Err(Error::invalid("perturbation size delta must be non-negative"));
    }
    ensure_same_grid(a0.grid(), a0_tilde.grid())?;
    let values = a0
        .values()
        .iter()
        .zip(a0_tilde.values())
        .map(|(&a, &b)| {
            let theta = t / eps * (b.norm_sqr() - a.norm_sqr());
            (a - b * cis(-theta)).norm()
        })
        .collect();
    RealField::new(a0.grid(), values, "separation")
}
