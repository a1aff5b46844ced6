use thiserror::Error;

use crate::grid::Basis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("lattice size {0} is not a power of two >= 4")]
    LatticeSize(usize),

    #[error("lattice spacing must be positive and finite, got {0}")]
    Spacing(f64),

    #[error("state is in the {found} basis, operation needs {expected}")]
    BasisMismatch { expected: Basis, found: Basis },

    #[error("states or operators live on different grids")]
    GridMismatch,

    #[error("array shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("particle index {index} out of range for {n_particles} particle(s)")]
    ParticleIndex { index: usize, n_particles: usize },

    #[error("step control violated at ds = {ds:e} (control product {product:.3}); retry with ds <= {suggested:e}")]
    StepRejected {
        ds: f64,
        product: f64,
        suggested: f64,
    },

    #[error("trajectory failed at s = {s}: {reason}")]
    TrajectoryFailed { s: f64, reason: String },

    #[error("support reaches the lattice edge: probability {0:e} within two cells of an edge")]
    Wraparound(f64),

    #[error("generator set is not mutually commuting")]
    NonCommuting,

    #[error("operator is not diagonal in the density-matrix basis")]
    NotDiagonal,

    #[error("degenerate configuration: |L-C| = |R-C| gives identical interval eigenvalues, so the collapse cannot distinguish the branches")]
    DegenerateConfiguration,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("packet does not fit the lattice: {0}")]
    LatticeOverflow(String),

    #[error("non-positive magnitude {value} at sample {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("empty time slice at t = {0}")]
    EmptySlice(f64),

    #[error("basis dimension {0} exceeds the dense-matrix limit")]
    DimensionOverflow(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
