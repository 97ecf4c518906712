use crate::solver::SolveReport;

/// Errors surfaced by domain construction, field operations and solves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape does not fit inside the grid with a margin of at least 2 cells")]
    ShapeTooLarge,

    #[error("unsupported spatial dimension {0} (must be 1, 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("cell lies outside the domain")]
    OutsideDomain,

    #[error("invalid cutoff collars: {0}")]
    InvalidCollars(String),

    #[error("bundle mismatch: expected {expected:?}, got {got:?}")]
    BundleMismatch {
        expected: crate::fields::BundleType,
        got: crate::fields::BundleType,
    },

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("fields live on different grids")]
    DomainMismatch,

    #[error("Sobolev order {0} not supported (first-order operators need k <= 1)")]
    UnsupportedOrder(usize),

    #[error("indicator transition width {width} narrower than {required} (4 cells)")]
    IndicatorTooSharp { width: f64, required: f64 },

    #[error("kernel Gram matrix is numerically rank-deficient (min/max eigenvalue ratio {0:.3e})")]
    DegenerateBasis(f64),

    #[error("domain is disconnected; kernel bases require a connected domain")]
    DisconnectedDomain,

    #[error("conjugate gradient did not reach the requested tolerance")]
    NoConvergence(Box<SolveReport>),

    #[error("source is not orthogonal to kernel member {index}: |<f,v>| = {value:.3e} > {tol:.3e}")]
    IncompatibleSource { index: usize, value: f64, tol: f64 },

    #[error("boundary collar {{x < {0}}} contains no active cells")]
    EmptyCollar(f64),

    #[error("decay fit needs at least 4 usable levels, found {0}")]
    InsufficientDecayData(usize),

    #[error("interpolation data missing: {0}")]
    MissingData(String),

    #[error("flux-matching family is rank-deficient (condition number {0:.3e})")]
    FamilyDegenerate(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
