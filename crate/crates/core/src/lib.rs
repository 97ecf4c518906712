//! fieldglue: compactly supported solutions of first-order underdetermined
//! elliptic systems P U = f on masked grids, and gluing of pairs of
//! solutions of P U = 0 across a chosen annular region.
//!
//! The construction is variational: minimize the weighted energy
//! 1/2 |phi P* u|^2_psi - <u, f> over potentials u orthogonal to ker P*,
//! with degenerate boundary weights phi = x^2 and
//! psi = x^(2a-n) exp(-s/x) built from the boundary distance x. The
//! minimizer's physical field U = psi^2 phi^2 P* u then vanishes to all
//! orders at the boundary, so it extends by zero across it. Gluing
//! interpolates two divergence-free fields with a cutoff and removes the
//! interpolation divergence with such a compactly supported correction;
//! the obstruction is the mismatch of their boundary fluxes against ker P*.
//!
//! Three operator pairs are built in: the divergence on one-forms (P* = d),
//! the divergence on symmetric 2-tensors (P* the Killing operator), and the
//! divergence on trace-free symmetric 2-tensors (P* the conformal Killing
//! operator, n >= 3).

pub mod domain;
pub mod error;
pub mod fields;
pub mod gluing;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod ops;
pub mod profile;
pub mod report;
pub mod solver;
pub mod synth;

pub use domain::{build_cutoff, build_domain, CutoffField, Domain, Shape, WeightConfig};
pub use error::{Error, Result};
pub use fields::{
    sobolev_norm, surface_flux, weighted_inner, weighted_norm, BundleKind, BundleType, Indicator,
    OperatorKind, OperatorSpec, TensorField,
};
pub use gluing::{flux_match, glue, interpolate, truncate, FluxMatchOutcome, GluingProblem,
    GluingReport};
pub use grid::Grid;
pub use kernel::{
    build_kernel_basis, flux_functionals, numeric_kernel_dim, project_off, FluxReport,
    KernelBasis,
};
pub use ops::{apply_adjoint, apply_forward};
pub use solver::{
    apply_normal_operator, decay_fit, estimate_api_constant, solve_compact_support,
    solve_projected, solve_projected_lenient, Preconditioner, Solution, SolveConfig, SolveReport,
};
