//! Unitary 2-D FFT over power-of-two grids.
//!
//! Both directions scale by `1/sqrt(rows*cols)`, so `ifft2` is the exact
//! adjoint (and inverse) of `fft2`.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{ComplexArray2D, NumericsError};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn fft2(img: &ComplexArray2D) -> Result<ComplexArray2D, NumericsError> {
    transform(img, FftDirection::Forward)
}

pub fn ifft2(ksp: &ComplexArray2D) -> Result<ComplexArray2D, NumericsError> {
    transform(ksp, FftDirection::Inverse)
}

fn check_dims(rows: usize, cols: usize) -> Result<(), NumericsError> {
    if !rows.is_power_of_two() || !cols.is_power_of_two() {
        return Err(NumericsError::Dimension { rows, cols });
    }
    Ok(())
}

fn transform(
    input: &ComplexArray2D,
    direction: FftDirection,
) -> Result<ComplexArray2D, NumericsError> {
    let (rows, cols) = input.shape();
    check_dims(rows, cols)?;
    let mut out = input.clone();
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(cols, direction), p.plan_fft(rows, direction))
    });

    let data = out.data_mut();
    // rows are contiguous
    row_fft.process(data);

    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }

    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}
