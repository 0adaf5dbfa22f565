//! Binary PGM (P5, 16-bit big-endian) previews.

use std::fs;
use std::path::Path;

use super::{NumericsError, RealArray2D};

/// Encodes `img` with `[lo, hi]` mapped linearly onto `0..=65535`
/// (values outside are clamped).
pub fn encode_pgm(img: &RealArray2D, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols(), img.rows()).into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in img.data() {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm(
    path: impl AsRef<Path>,
    img: &RealArray2D,
    lo: f64,
    hi: f64,
) -> Result<(), NumericsError> {
    fs::write(path, encode_pgm(img, lo, hi))?;
    Ok(())
}
