pub mod analysis;
pub mod density;
pub mod dynamics;
pub mod error;
mod fft;
pub mod grid;
pub mod master;
pub mod operators;
pub mod oracles;

pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use grid::{make_grid, Basis, GridSpec, WaveFunction, EDGE_THRESHOLD};
pub use operators::{OperatorKind, OperatorSpec, PoincareParams};

pub use num_complex::Complex64;
