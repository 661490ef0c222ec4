//! Dense linear algebra, Kronecker products, spectral norms, the cubic root
//! solver behind certified radii, and seeded randomness.

mod cubic;
mod matrix;
mod rng;
mod spectral;

pub use cubic::{unique_positive_cubic_root, CubicBranch, CubicProblem, CubicRoot};
pub use matrix::{dot, kron_capped, norm2, norm_inf, sub_vec, Matrix, DEFAULT_SIZE_CAP};
pub use rng::{streams, SeededRng};
pub use spectral::{operator_norm, spectral_norm, SpectralNorm};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("data length mismatch: expected {expected}, got {got}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("result of shape {requested:?} exceeds the size cap of {cap} entries")]
    SizeCap {
        requested: (usize, usize),
        cap: usize,
    },
    #[error("spectral norm of a zero matrix requested")]
    ZeroMatrix,
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last}, residual {residual})")]
    NotConverged {
        iterations: usize,
        last: f64,
        residual: f64,
    },
    #[error("invalid cubic problem: a={cubic}, b={quad}, c={linear}, eps={target}")]
    InvalidCubic {
        cubic: f64,
        quad: f64,
        linear: f64,
        target: f64,
    },
}
