//! WKB and geometric-optics approximations of the semiclassical cubic
//! defocusing NLS
//!
//! ```text
//! iε ∂_t u + (ε²/2) Δu = V u + ε^κ |u|² u,   u(0) = a₀^ε e^{iφ₀/ε}
//! ```
//!
//! in the sub-critical (`κ = 2`), critical (`κ = 1`) and super-critical
//! (`κ = 0`) regimes, together with a split-step Fourier reference solver
//! and the experiment drivers that compare them.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the experiments use.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod fit;
pub mod grenier;
pub mod nls;
pub mod problem;
pub mod rays;
pub mod scalar;
pub mod spectral;
pub mod wkb;

pub use error::{Error, Result};
pub use problem::{AmplitudeFamily, CosineMode, Criticality, InitialPhaseSpec, PotentialSpec, SemiclassicalProblem};
pub use scalar::Real;
pub use spectral::{ComplexField, GridSpec, Lp, PeriodicGrid, RealField};

/// Double-precision grid.
pub type Grid = PeriodicGrid<f64>;
/// Double-precision complex field.
pub type Field = ComplexField<f64>;
/// Double-precision real field.
pub type RField = RealField<f64>;
pub type Problem = SemiclassicalProblem<f64>;
pub type Bundle = rays::RayBundle<f64>;

pub type Grid32 = PeriodicGrid<f32>;
pub type Field32 = ComplexField<f32>;
