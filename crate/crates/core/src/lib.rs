//! Numerical laboratory for holomorphic bundles over compact Hermitian surfaces.
//!
//! The crate discretizes complex 2-tori on uniform periodic grids and provides
//! the machinery needed to study numerically flat bundles over Gauduchon
//! surfaces: Chern connections and curvature, Chern and Segre forms, degrees
//! and Chern numbers, the Hermitian-Yang-Mills heat flow with its gauge
//! equivalent connection flow, the perturbed Hermitian-Einstein continuity
//! equation, and fiber integration on the projectivized bundle.
//!
//! Conventions used throughout:
//! - real coordinates `x_0..x_{2n-1}` with `z_j = (x_{2j} + i x_{2j+1}) / sqrt(2)`,
//!   so `i dz_j ∧ dz̄_j = dx_{2j} ∧ dx_{2j+1}`;
//! - the metric form is `ω = i Σ g_{jk̄} dz_j ∧ dz̄_k` and `ω^n / n! = det(g) dx`;
//! - an endomorphism valued (1,1)-form `F` is stored by its coefficients
//!   `F_{jk̄}` of `dz_j ∧ dz̄_k`, and `iΛ_ω F = Σ g^{k̄j} F_{jk̄}`;
//! - Chern forms follow `det(Id + i t F / 2π) = Σ c_k t^k`.

// Index loops mirror the tensor formulas; `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod chern_weil;
pub mod elliptic;
pub mod endo;
mod error;
pub mod field;
pub mod flows;
pub mod forms;
pub mod geometry;
pub mod hermitian;
pub mod io;
pub mod linalg;
pub mod projectivization;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};

/// Working precision. Every tolerance in the crate assumes `f64`.
pub type Real = f64;
pub type C64 = num_complex::Complex<Real>;

pub use bundle::{BundleSpec, ExtensionClass};
pub use chern_weil::ChernReport;
pub use endo::{EndoField, EndoForm01, EndoForm10, EndoForm11};
pub use field::Field;
pub use flows::{FlowOptions, FlowTrace, PipelineReport};
pub use forms::FormField;
pub use geometry::Geometry;
pub use hermitian::{CurvatureField, HermitianField};
