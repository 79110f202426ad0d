//! Numerical toolkit for a nonlocal adhesion–reaction equation with degenerate,
//! anisotropic myopic diffusion
//!
//! ```text
//! ∂t c = ∇∇:(D c) − ∇·(c A c) + μ c (1 − c^{r−1})   in Ω × (0, T)
//! (∇·(D c) − c A c)·ν = 0                           on ∂Ω
//! ```
//!
//! on axis-aligned boxes. The crate is organised by concern:
//!
//! * [`fields`]: box grids and cell-centered scalar, vector and symmetric tensor fields.
//! * [`adhesion`]: the nonlocal adhesion operator, by kernel and by potential gradient.
//! * [`tensor`]: diffusion tensors with explicit degeneracy sets and their regularization.
//! * [`fractal`]: box counting, upper box dimension and lattice cutoff functions.
//! * [`solver`]: conservative finite-volume integrator and run diagnostics.
//! * [`weakform`]: very weak residuals and Cauchy distances between trajectories.
//!
//! All numerics are generic over [`Real`]; the `*64` aliases below fix `f64`.

pub mod adhesion;
mod error;
pub mod fields;
pub mod fractal;
pub mod initial;
pub mod io;
pub mod linalg;
pub mod num;
pub mod solver;
pub mod tensor;
pub mod weakform;

pub use error::{Error, Result};
pub use num::Real;

pub type BoxDomain64 = fields::BoxDomain<f64>;
pub type ScalarField64 = fields::ScalarField<f64>;
pub type VectorField64 = fields::VectorField<f64>;
pub type SymTensorField64 = fields::SymTensorField<f64>;
pub type SymMat64 = linalg::SymMat<f64>;
pub type AdhesionForce64 = adhesion::AdhesionForce<f64>;
pub type AdhesionKernel64 = adhesion::AdhesionKernel<f64>;
pub type TensorSpec64 = tensor::TensorSpec<f64>;
pub type CompactSet64 = fractal::CompactSet<f64>;
pub type CutoffFamily64 = fractal::CutoffFamily<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type Trajectory64 = solver::Trajectory<f64>;
pub type TestFunction64 = weakform::TestFunction<f64>;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
