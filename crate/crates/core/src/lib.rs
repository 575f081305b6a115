//! Moving-mesh finite element solver for quasi-static phase-field brittle fracture in 2D.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: triangular meshes with shared connectivity, point location and P1 interpolation.
//! * [`elasticity`]: strain kernels (2x2 spectral split, regularized eigenvalue functions,
//!   energy densities, degraded stress, history update).
//! * [`fem`]: P1 assembly of the phase-field system and the displacement residual, Dirichlet
//!   handling, sparse solves and the edge load vector.
//! * [`newton`]: Newton's method with a graph-coloured finite-difference Jacobian.
//! * [`mmpde`]: Hessian recovery, metric tensor, mesh energy and MMPDE gradient-flow mesh movement.
//! * [`driver`]: the staggered load-stepping procedure and the benchmark presets.
//! * [`io`]: run configuration, CSV and legacy VTK output.
//!
//! Element loops run through [`Execution`]; with the `parallel` feature they are evaluated with
//! rayon and reduced in element order, so serial and parallel runs are bitwise identical.

// `!(x > 0.0)` is how the validators reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod elasticity;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod mmpde;
pub mod newton;
mod par;

pub use par::Execution;

/// Vertex coordinates and 2-vectors (mm).
pub type Point = nalgebra::Vector2<f64>;
