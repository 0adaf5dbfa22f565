//! Numerical substrate: dense arrays, unitary FFT, seeded randomness and NPY I/O.

mod array;
mod fft;
pub mod npy;
mod pgm;
mod rng;

pub use array::{ComplexArray2D, RealArray2D};
pub use fft::{fft2, ifft2};
pub use npy::{load_complex, load_real, save_complex, save_real, NpyArray, NpyData};
pub use pgm::{encode_pgm, write_pgm};
pub use rng::{RngState, SeededRng, RNG_ALGORITHM};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("FFT requires power-of-two dimensions, got {rows}x{cols}")]
    Dimension { rows: usize, cols: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("array contains non-finite values")]
    NonFinite,
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("truncated NPY payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
