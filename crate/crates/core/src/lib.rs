//! Finite element laboratory for elliptic eigenvalue problems on perturbed
//! domains.
//!
//! Every domain in a family is represented as the image of one fixed
//! reference domain under a transformation `φ`. The operator on `φ(Ω)` is
//! pulled back to `Ω`, where it becomes a weighted anisotropic form with
//! coefficients `a = (∇φ)⁻¹ A(φ) (∇φ)⁻ᵀ` and weight `g = |det ∇φ|`. Spectra of
//! different family members can then be compared on a common mesh.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: the cusp domain family, its implicit cap profile `h_ε`,
//!   and Lipschitz graph domains.
//! * [`transform`]: point maps with analytic Jacobians, pulled-back fields.
//! * [`mesh`]: graded conforming P1 meshes built by constrained Delaunay
//!   refinement.
//! * [`assembly`]: stiffness and mass matrices of the pulled-back form.
//! * [`eigensolve`]: lowest eigenpairs of `K ψ = λ M ψ`.
//! * [`vicinity`]: the vicinity measure `δ_q` between two transformations.
//! * [`metrics`]: Schatten distances, projector perturbation, eigenfunction
//!   distances, rate fits and the exponent calculus for cusp domains.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod assembly;
pub mod eigensolve;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod quadrature;
pub mod sparse;
pub mod transform;
pub mod vicinity;

pub use error::{CuspError, Result};

/// Points and small matrices of the planar reference domain.
pub type Point = nalgebra::Point2<f64>;
pub type Vector = nalgebra::Vector2<f64>;
pub type Matrix = nalgebra::Matrix2<f64>;
