//! JSON experiment configuration.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grenier::Variant;
use crate::problem::{AmplitudeFamily, Criticality, InitialPhaseSpec, PotentialSpec, SemiclassicalProblem};
use crate::spectral::{ComplexField, GridSpec, PeriodicGrid, RealField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Converge,
    Instability,
    Normgrowth,
    Odewindow,
    Single,
}

/// What `converge` compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Full phase–amplitude system against its `ε = 0` limit.
    Supercritical,
    /// Full system against limit plus first correctors.
    Corrector,
    /// Full against skew-free system.
    SkewFree,
    /// NLS at `κ = 1` against the self-modulated WKB profile.
    Critical,
    /// NLS at `κ = 2` against the free WKB profile.
    Subcritical,
}

impl Scenario {
    pub fn regime(self) -> Criticality {
        match self {
            Self::Critical => Criticality::Critical,
            Self::Subcritical => Criticality::Subcritical,
            _ => Criticality::Supercritical,
        }
    }

    fn default_slope(self) -> Option<f64> {
        match self {
            Self::Supercritical | Self::SkewFree => Some(1.0),
            Self::Corrector => Some(2.0),
            Self::Critical | Self::Subcritical => None,
        }
    }
}

/// Single-Gaussian building block `(re + i im) e^{-|x - center|²/width²}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTerm {
    #[serde(default = "one")]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default)]
    pub center: Vec<f64>,
}

/// Complex profile used for `a₀`, `a₁` and `b₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Zero,
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
    Gaussian(GaussianTerm),
    Sum {
        terms: Vec<GaussianTerm>,
    },
}

fn one() -> f64 {
    1.0
}

impl GaussianTerm {
    fn eval(&self, x: [f64; 2], dim: usize) -> Complex<f64> {
        let r2: f64 = (0..dim)
            .map(|a| {
                let d = x[a] - self.center.get(a).copied().unwrap_or(0.0);
                d * d
            })
            .sum();
        Complex::new(self.re, self.im) * (-r2 / (self.width * self.width)).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.width > 0.0) || !self.re.is_finite() || !self.im.is_finite() {
            return Err(Error::Config("gaussian terms need finite coefficients and a positive width".into()));
        }
        if self.center.len() > dim || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("gaussian center must have at most {dim} finite coordinates")));
        }
        Ok(())
    }
}

impl ProfileSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Constant { re, im } => {
                if re.is_finite() && im.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config("constant profile must be finite".into()))
                }
            }
            Self::Gaussian(term) => term.validate(dim),
            Self::Sum { terms } => terms.iter().try_for_each(|t| t.validate(dim)),
        }
    }

    pub fn eval(&self, x: [f64; 2], dim: usize) -> Complex<f64> {
        match self {
            Self::Zero => Complex::new(0.0, 0.0),
            Self::Constant { re, im } => Complex::new(*re, *im),
            Self::Gaussian(term) => term.eval(x, dim),
            Self::Sum { terms } => terms.iter().map(|t| t.eval(x, dim)).sum(),
        }
    }

    pub fn sample(&self, grid: &PeriodicGrid<f64>, role: &str) -> Result<ComplexField<f64>> {
        let dim = grid.dim();
        ComplexField::from_fn(grid, role, |x| self.eval(x, dim))
    }

    /// True when every value is real.
    pub fn is_real(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Constant { im, .. } => *im == 0.0,
            Self::Gaussian(term) => term.im == 0.0,
            Self::Sum { terms } => terms.iter().all(|t| t.im == 0.0),
        }
    }
}

/// Initial phase `φ₀`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseConfig {
    #[default]
    Zero,
    /// `½ yᵀQy`; not periodic, so only usable with the ray module.
    Quadratic { q: [[f64; 2]; 2] },
    /// Periodic real profile given by its real parts.
    Profile { profile: ProfileSpec },
}

impl PhaseConfig {
    pub fn build(&self, grid: &PeriodicGrid<f64>) -> Result<InitialPhaseSpec<f64>> {
        Ok(match self {
            Self::Zero => InitialPhaseSpec::Zero,
            Self::Quadratic { q } => InitialPhaseSpec::Quadratic { q: *q },
            Self::Profile { profile } => {
                profile.validate(grid.dim())?;
                let dim = grid.dim();
                InitialPhaseSpec::sampled(RealField::from_fn(grid, "phi0", |x| profile.eval(x, dim).re)?)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lengths: Vec<f64>,
    /// Base number of points per axis.
    pub points: Vec<usize>,
    /// `C` in the per-ε rule `N ≥ C·L/ε` (0 keeps the base resolution).
    #[serde(default)]
    pub oscillation_density: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lengths: vec![32.0], points: vec![1024], oscillation_density: 0.0 }
    }
}

impl GridConfig {
    /// Grid used at a given `ε`: each axis gets the next power of two above
    /// `max(points, C·L/ε)`.
    pub fn spec_for(&self, eps: f64) -> GridSpec {
        let points = self
            .points
            .iter()
            .zip(&self.lengths)
            .map(|(&n, &l)| {
                let need = (self.oscillation_density * l / eps).ceil();
                let need = if need.is_finite() && need > 0.0 { need as usize } else { 0 };
                n.max(need).next_power_of_two()
            })
            .collect();
        GridSpec { lengths: self.lengths.clone(), points }
    }

    pub fn grid_for(&self, eps: f64) -> Result<PeriodicGrid<f64>> {
        PeriodicGrid::from_spec(&self.spec_for(eps))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeStepConfig {
    /// NLS step as a fraction of `ε`.
    #[serde(default = "default_eps_fraction")]
    pub eps_fraction: f64,
    /// Upper bound on the NLS step.
    #[serde(default = "default_max_step")]
    pub max: f64,
    /// Step of the phase–amplitude and ray integrators.
    #[serde(default = "default_max_step")]
    pub transport: f64,
}

fn default_eps_fraction() -> f64 {
    0.02
}

fn default_max_step() -> f64 {
    1e-3
}

impl Default for TimeStepConfig {
    fn default() -> Self {
        Self { eps_fraction: default_eps_fraction(), max: default_max_step(), transport: default_max_step() }
    }
}

impl TimeStepConfig {
    pub fn nls_step(&self, eps: f64) -> f64 {
        (self.eps_fraction * eps).min(self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictConfig {
    /// Overrides the scenario's expected slope.
    #[serde(default)]
    pub expected_slope: Option<f64>,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
    /// `converge` at `κ ≥ 1`: final error must drop below this multiple of `‖a₀‖`.
    #[serde(default = "default_threshold")]
    pub threshold_fraction: f64,
    /// Least number of ε values needed for a slope fit.
    #[serde(default = "default_min_points")]
    pub min_points: usize,
}

fn default_slope_tolerance() -> f64 {
    0.2
}

fn default_threshold() -> f64 {
    0.05
}

fn default_min_points() -> usize {
    4
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self {
            expected_slope: None,
            slope_tolerance: default_slope_tolerance(),
            threshold_fraction: default_threshold(),
            min_points: default_min_points(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstabilityConfig {
    /// `δ = ε^α`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `t = c ε / δ`.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Order `K` of the validity window `t < ε^{1/(2K+1)}`.
    #[serde(default = "one_usize")]
    pub taylor_order: usize,
    /// Stored times in `(0, t]` used for the sup over the interval.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Sobolev index of the initial distance in the blow-up ratio.
    #[serde(default = "one")]
    pub ratio_index: f64,
    /// Separation must stay above this fraction of its largest-ε value.
    #[serde(default = "default_half")]
    pub lower_bound_fraction: f64,
    /// Allowed relative gap between measured and predicted separation.
    #[serde(default = "default_agreement")]
    pub agreement: f64,
    /// Tolerance on the ε-slope of the initial `H^1` distance.
    #[serde(default = "default_distance_tol")]
    pub distance_slope_tolerance: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_c() -> f64 {
    2.0
}

fn one_usize() -> usize {
    1
}

fn default_samples() -> usize {
    16
}

fn default_half() -> f64 {
    0.5
}

fn default_agreement() -> f64 {
    0.2
}

fn default_distance_tol() -> f64 {
    0.05
}

impl Default for InstabilityConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            c: default_c(),
            taylor_order: 1,
            samples: default_samples(),
            ratio_index: 1.0,
            lower_bound_fraction: default_half(),
            agreement: default_agreement(),
            distance_slope_tolerance: default_distance_tol(),
        }
    }
}

/// `(n, s, k)` triple for [`super::flow_exponents`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentQuery {
    pub n: u32,
    pub s: f64,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormGrowthConfig {
    #[serde(default = "default_probe")]
    pub t: f64,
    #[serde(default = "default_orders")]
    pub orders: Vec<u32>,
    #[serde(default = "default_spread")]
    pub max_spread: f64,
    #[serde(default)]
    pub exponents: Vec<ExponentQuery>,
}

fn default_probe() -> f64 {
    0.2
}

fn default_orders() -> Vec<u32> {
    vec![1, 2]
}

fn default_spread() -> f64 {
    4.0
}

impl Default for NormGrowthConfig {
    fn default() -> Self {
        Self { t: default_probe(), orders: default_orders(), max_spread: default_spread(), exponents: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeWindowConfig {
    /// Probe times `t = ε^p`, listed with decreasing `p`.
    #[serde(default = "default_powers")]
    pub powers: Vec<f64>,
}

fn default_powers() -> Vec<f64> {
    vec![0.6, 0.45, 0.3, 0.2]
}

impl Default for OdeWindowConfig {
    fn default() -> Self {
        Self { powers: default_powers() }
    }
}

/// Parameters of the single-run subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleConfig {
    #[serde(default = "one")]
    pub t_final: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Keep every `csv_stride`-th node in tables.
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
    /// Order of the Taylor approximant for `wkb` at `κ = 0`.
    #[serde(default = "one_usize")]
    pub taylor_order: usize,
}

fn default_variant() -> Variant {
    Variant::Full
}

fn default_stride() -> usize {
    10
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self { t_final: 1.0, variant: Variant::Full, csv_stride: default_stride(), taylor_order: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    /// Write raw field dumps next to the tables.
    #[serde(default)]
    pub dump_fields: bool,
}

/// Complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// `κ ∈ {0, 1, 2}`; `converge` takes it from the scenario.
    #[serde(default)]
    pub kappa: f64,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time_step: TimeStepConfig,
    #[serde(default = "zero_potential")]
    pub potential: PotentialSpec<f64>,
    #[serde(default)]
    pub phase: PhaseConfig,
    pub a0: ProfileSpec,
    #[serde(default)]
    pub a1: Option<ProfileSpec>,
    #[serde(default)]
    pub b0: Option<ProfileSpec>,
    /// Comparison times.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Sobolev indices of the reported norms.
    #[serde(default = "default_sobolev")]
    pub sobolev: Vec<f64>,
    #[serde(default)]
    pub verdict: VerdictConfig,
    #[serde(default)]
    pub instability: InstabilityConfig,
    #[serde(default)]
    pub norm_growth: NormGrowthConfig,
    #[serde(default)]
    pub ode_window: OdeWindowConfig,
    #[serde(default)]
    pub single: SingleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn zero_potential() -> PotentialSpec<f64> {
    PotentialSpec::Zero
}

fn default_times() -> Vec<f64> {
    vec![0.2]
}

fn default_sobolev() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg(format!("malformed config: {e}")))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| cfg(format!("malformed config: {e}")))
    }

    pub fn regime(&self) -> Result<Criticality> {
        match self.scenario {
            Some(s) => Ok(s.regime()),
            None => Criticality::from_kappa(self.kappa).map_err(|e| cfg(e.to_string())),
        }
    }

    pub fn expected_slope(&self) -> Option<f64> {
        self.verdict.expected_slope.or_else(|| self.scenario.and_then(Scenario::default_slope))
    }

    /// Checks that apply to every experiment kind.
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(cfg("at least one epsilon is required"));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(cfg("epsilons must lie in (0, 1]"));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg("epsilons must be strictly decreasing"));
        }
        let g = &self.grid;
        if g.lengths.len() != g.points.len() || g.lengths.is_empty() || g.lengths.len() > 2 {
            return Err(cfg("grid needs one or two axes with matching lengths and points"));
        }
        if !(g.oscillation_density >= 0.0) || !g.oscillation_density.is_finite() {
            return Err(cfg("oscillation density must be finite and non-negative"));
        }
        let base = GridSpec { lengths: g.lengths.clone(), points: g.points.clone() };
        PeriodicGrid::<f64>::from_spec(&base).map_err(|e| cfg(e.to_string()))?;
        let dim = g.lengths.len();
        let ts = &self.time_step;
        if !(ts.eps_fraction > 0.0 && ts.max > 0.0 && ts.transport > 0.0) {
            return Err(cfg("time steps must be positive"));
        }
        self.regime()?;
        self.potential.validate(dim).map_err(|e| cfg(e.to_string()))?;
        for p in [Some(&self.a0), self.a1.as_ref(), self.b0.as_ref()].into_iter().flatten() {
            p.validate(dim)?;
        }
        if let PhaseConfig::Profile { profile } = &self.phase {
            profile.validate(dim)?;
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(cfg("comparison times must be positive"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(cfg("comparison times must be strictly increasing"));
        }
        if self.sobolev.iter().any(|s| !(*s >= 0.0)) {
            return Err(cfg("Sobolev indices must be non-negative"));
        }
        let inst = &self.instability;
        if !(inst.alpha > 0.0 && inst.alpha < 1.0) {
            return Err(cfg("instability exponent alpha must lie in (0, 1)"));
        }
        if !(inst.c > 0.0) || inst.samples == 0 || inst.taylor_order == 0 {
            return Err(cfg("instability needs c > 0, samples > 0 and a Taylor order > 0"));
        }
        if self.ode_window.powers.is_empty() || self.ode_window.powers.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg("ODE-window powers must be non-empty and strictly decreasing"));
        }
        if self.single.csv_stride == 0 || !(self.single.t_final > 0.0) {
            return Err(cfg("single runs need a positive final time and stride"));
        }
        Ok(())
    }

    /// Problem at one `ε`, on the grid chosen for that `ε`.
    pub fn problem(&self, eps: f64) -> Result<SemiclassicalProblem<f64>> {
        let grid = self.grid.grid_for(eps)?;
        let a0 = self.a0.sample(&grid, "a0")?;
        let amplitude = match &self.a1 {
            Some(a1) => AmplitudeFamily::with_corrector(a0, a1.sample(&grid, "a1")?),
            None => AmplitudeFamily::fixed(a0),
        };
        SemiclassicalProblem::new(eps, self.regime()?, self.potential.clone(), self.phase.build(&grid)?, amplitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"epsilons": [0.1, 0.05], "a0": {"kind": "gaussian"}}"#
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.grid.points, vec![1024]);
        assert_eq!(c.times, vec![0.2]);
        assert_eq!(c.instability.alpha, 0.5);
        assert_eq!(c.norm_growth.max_spread, 4.0);
        let p = c.problem(0.1).unwrap();
        assert_eq!(p.grid().points(0), 1024);
        assert!((p.amplitude.a0.values()[512].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json("{").is_err());
        assert!(ExperimentConfig::from_json(r#"{"epsilons": [0.1], "a0": {"kind": "zero"}, "bogus": 1}"#).is_err());
        for patch in [
            r#"{"epsilons": [0.05, 0.1], "a0": {"kind": "zero"}}"#,
            r#"{"epsilons": [], "a0": {"kind": "zero"}}"#,
            r#"{"epsilons": [2.0], "a0": {"kind": "zero"}}"#,
            r#"{"epsilons": [0.1], "a0": {"kind": "zero"}, "kappa": 3}"#,
            r#"{"epsilons": [0.1], "a0": {"kind": "gaussian", "width": 0}}"#,
            r#"{"epsilons": [0.1], "a0": {"kind": "zero"}, "instability": {"alpha": 1.0}}"#,
            r#"{"epsilons": [0.1], "a0": {"kind": "zero"}, "grid": {"lengths": [32], "points": [100]}}"#,
            r#"{"epsilons": [0.1], "a0": {"kind": "zero"}, "times": [0.2, 0.1]}"#,
        ] {
            let c = ExperimentConfig::from_json(patch).unwrap();
            assert!(c.validate().is_err(), "{patch}");
        }
    }

    #[test]
    fn resolution_rule() {
        let g = GridConfig { lengths: vec![32.0], points: vec![1024], oscillation_density: 0.25 };
        assert_eq!(g.spec_for(0.1).points, vec![1024]);
        assert_eq!(g.spec_for(1e-3).points, vec![8192]);
        let flat = GridConfig::default();
        assert_eq!(flat.spec_for(1e-3).points, vec![1024]);
    }

    #[test]
    fn profiles() {
        let p: ProfileSpec = serde_json::from_str(
            r#"{"kind": "sum", "terms": [{"re": 1}, {"re": 0, "im": 0.5, "center": [0.5]}]}"#,
        )
        .unwrap();
        let z = p.eval([0.5, 0.0], 1);
        assert!((z.re - (-0.25f64).exp()).abs() < 1e-15 && (z.im - 0.5).abs() < 1e-15);
        assert!(!p.is_real());
        let c = ProfileSpec::Constant { re: 0.3, im: 0.0 };
        assert!(c.is_real() && c.eval([9.0, 0.0], 1) == Complex::new(0.3, 0.0));
    }
}
