//! Multi-coil Cartesian encoding `A = P F S`, its adjoint, sampling masks,
//! coil maps and noisy k-space simulation.
//!
//! Images are real; `A` embeds them into complex k-space and `A^H` takes the
//! real part, which makes `<Ax, y> = <x, A^H y>` hold for the real inner
//! product `Re sum(a conj(b))`.

mod io;

pub use io::{load_kspace, save_kspace, AcquisitionMeta, ACQUISITION_SCHEMA};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::{fft2, ifft2, ComplexArray2D, NumericsError, RealArray2D, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum MriError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("infeasible mask: {0}")]
    InfeasibleMask(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("acquisition metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coil sensitivities, normalized so that `sum_c |S_c|^2 = 1` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SenseMaps {
    pub coils: Vec<ComplexArray2D>,
}

impl SenseMaps {
    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coils[0].shape()
    }
}

/// Smooth synthetic coil maps: Gaussian magnitude lobes centred around the
/// field of view with low-order polynomial phase, then sum-of-squares
/// normalized.
pub fn make_sense(
    rows: usize,
    cols: usize,
    num_coils: usize,
    seed: u64,
) -> Result<SenseMaps, MriError> {
    if num_coils == 0 {
        return Err(MriError::Invalid("need at least one coil".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut coils: Vec<ComplexArray2D> = (0..num_coils)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / num_coils as f64
                + rng.uniform_range(-0.2, 0.2);
            let (cx, cy) = (1.1 * angle.cos(), 1.1 * angle.sin());
            let width = rng.uniform_range(0.7, 1.0);
            let phase: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            ComplexArray2D::from_fn(rows, cols, |r, k| {
                let y = (r as f64 + 0.5) / rows as f64 * 2.0 - 1.0;
                let x = (k as f64 + 0.5) / cols as f64 * 2.0 - 1.0;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let ph = phase[0]
                    + phase[1] * x
                    + phase[2] * y
                    + 0.5 * phase[3] * x * x
                    + 0.5 * phase[4] * x * y;
                Complex64::from_polar(mag, ph)
            })
        })
        .collect();
    for p in 0..rows * cols {
        let sos = coils
            .iter()
            .map(|s| s.data()[p].norm_sqr())
            .sum::<f64>()
            .sqrt();
        for s in &mut coils {
            s.data_mut()[p] /= sos;
        }
    }
    Ok(SenseMaps { coils })
}

/// Cartesian line mask: row `r` of k-space (a phase-encode line, unshifted
/// FFT layout) is either fully sampled along the frequency-encode axis or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub rows: usize,
    pub cols: usize,
    pub lines: Vec<bool>,
    pub acceleration: f64,
    pub acs: usize,
}

/// Rows holding the `acs` lowest frequencies `-acs/2 .. acs - acs/2 - 1`.
pub fn acs_rows(rows: usize, acs: usize) -> Vec<usize> {
    let lo = -((acs / 2) as isize);
    (0..acs as isize)
        .map(|k| (lo + k).rem_euclid(rows as isize) as usize)
        .collect()
}

impl SamplingMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            lines: vec![true; rows],
            acceleration: 1.0,
            acs: rows,
        }
    }

    pub fn sampled_lines(&self) -> usize {
        self.lines.iter().filter(|&&l| l).count()
    }

    #[inline]
    pub fn get(&self, r: usize, _c: usize) -> bool {
        self.lines[r]
    }

    pub fn to_array(&self) -> RealArray2D {
        RealArray2D::from_fn(
            self.rows,
            self.cols,
            |r, _| if self.lines[r] { 1.0 } else { 0.0 },
        )
    }

    pub fn from_array(a: &RealArray2D, acceleration: f64, acs: usize) -> Result<Self, MriError> {
        let (rows, cols) = a.shape();
        let mut lines = Vec::with_capacity(rows);
        for r in 0..rows {
            let v = a.get(r, 0);
            if !(v == 0.0 || v == 1.0) || (0..cols).any(|c| a.get(r, c) != v) {
                return Err(MriError::Invalid(format!(
                    "row {r} is not a constant 0/1 line"
                )));
            }
            lines.push(v == 1.0);
        }
        Ok(Self {
            rows,
            cols,
            lines,
            acceleration,
            acs,
        })
    }

    /// `P y`: zeroes every unsampled entry.
    pub fn apply(&self, k: &mut ComplexArray2D) {
        let cols = self.cols;
        for (r, &on) in self.lines.iter().enumerate() {
            if !on {
                k.data_mut()[r * cols..(r + 1) * cols].fill(Complex64::new(0.0, 0.0));
            }
        }
    }
}

/// Random line mask with the ACS band forced on and `round(rows / R)` lines
/// in total (`R = 1` gives the full mask).
pub fn make_mask(
    rows: usize,
    cols: usize,
    acceleration: f64,
    acs: usize,
    seed: u64,
) -> Result<SamplingMask, MriError> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(MriError::Invalid(format!(
            "acceleration {acceleration} must be >= 1"
        )));
    }
    if acs == 0 || acs >= rows {
        return Err(MriError::Invalid(format!(
            "acs {acs} must lie in 1..{rows}"
        )));
    }
    let target = (rows as f64 / acceleration).round() as usize;
    if acs > target {
        return Err(MriError::InfeasibleMask(format!(
            "{acs} ACS lines exceed the {target} lines allowed at R = {acceleration}"
        )));
    }
    let mut lines = vec![false; rows];
    for r in acs_rows(rows, acs) {
        lines[r] = true;
    }
    let mut rest: Vec<usize> = (0..rows).filter(|&r| !lines[r]).collect();
    SeededRng::new(seed).shuffle(&mut rest);
    for &r in rest.iter().take(target - acs) {
        lines[r] = true;
    }
    Ok(SamplingMask {
        rows,
        cols,
        lines,
        acceleration,
        acs,
    })
}

/// Multi-coil k-space samples; entries off the mask are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub coils: Vec<ComplexArray2D>,
    pub mask: SamplingMask,
    pub gamma: f64,
}

/// Sense maps and mask bundled as one linear operator.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub sense: SenseMaps,
    pub mask: SamplingMask,
}

impl Encoding {
    pub fn new(sense: SenseMaps, mask: SamplingMask) -> Result<Self, MriError> {
        if sense.coils.is_empty() {
            return Err(MriError::Shape("no coil maps".into()));
        }
        if sense.shape() != (mask.rows, mask.cols) {
            return Err(MriError::Shape(format!(
                "coil maps {:?} vs mask {}x{}",
                sense.shape(),
                mask.rows,
                mask.cols
            )));
        }
        Ok(Self { sense, mask })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mask.rows, self.mask.cols)
    }

    pub fn forward(&self, x: &RealArray2D) -> Result<Vec<ComplexArray2D>, MriError> {
        if x.shape() != self.shape() {
            return Err(MriError::Shape(format!(
                "image {:?} vs operator {:?}",
                x.shape(),
                self.shape()
            )));
        }
        self.sense
            .coils
            .iter()
            .map(|s| {
                let weighted = ComplexArray2D::from_vec(
                    x.rows(),
                    x.cols(),
                    s.data().iter().zip(x.data()).map(|(a, &v)| a * v).collect(),
                )?;
                let mut k = fft2(&weighted)?;
                self.mask.apply(&mut k);
                Ok(k)
            })
            .collect()
    }

    pub fn adjoint(&self, y: &[ComplexArray2D]) -> Result<RealArray2D, MriError> {
        if y.len() != self.sense.num_coils() || y.iter().any(|k| k.shape() != self.shape()) {
            return Err(MriError::Shape(
                "k-space does not match coils/geometry".into(),
            ));
        }
        let (rows, cols) = self.shape();
        let mut out = RealArray2D::zeros(rows, cols);
        for (s, k) in self.sense.coils.iter().zip(y) {
            let mut k = k.clone();
            self.mask.apply(&mut k);
            let img = ifft2(&k)?;
            for ((o, a), b) in out.data_mut().iter_mut().zip(s.data()).zip(img.data()) {
                *o += (a.conj() * b).re;
            }
        }
        Ok(out)
    }

    /// Gradient of `0.5 |A x - y|^2`, i.e. `A^H (A x - y)`.
    pub fn residual_gradient(
        &self,
        x: &RealArray2D,
        y: &[ComplexArray2D],
    ) -> Result<(RealArray2D, f64), MriError> {
        let mut r = self.forward(x)?;
        let mut norm2 = 0.0;
        for (rc, yc) in r.iter_mut().zip(y) {
            for (a, b) in rc.data_mut().iter_mut().zip(yc.data()) {
                *a -= b;
                norm2 += a.norm_sqr();
            }
        }
        Ok((self.adjoint(&r)?, norm2.sqrt()))
    }
}

pub fn apply_a(
    x: &RealArray2D,
    sense: &SenseMaps,
    mask: &SamplingMask,
) -> Result<KSpaceData, MriError> {
    let enc = Encoding::new(sense.clone(), mask.clone())?;
    Ok(KSpaceData {
        coils: enc.forward(x)?,
        mask: mask.clone(),
        gamma: 0.0,
    })
}

pub fn apply_ah(
    y: &KSpaceData,
    sense: &SenseMaps,
    mask: &SamplingMask,
) -> Result<RealArray2D, MriError> {
    Encoding::new(sense.clone(), mask.clone())?.adjoint(&y.coils)
}

/// `y = A x + n`, with independent `N(0, gamma^2)` noise on the real and
/// imaginary parts of every sampled entry.
pub fn simulate_acquisition(
    x05: &RealArray2D,
    sense: &SenseMaps,
    mask: &SamplingMask,
    gamma: f64,
    rng: &mut SeededRng,
) -> Result<KSpaceData, MriError> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(MriError::Invalid(format!("gamma {gamma} must be >= 0")));
    }
    let mut y = apply_a(x05, sense, mask)?;
    if gamma > 0.0 {
        let cols = mask.cols;
        for k in &mut y.coils {
            for (r, &on) in mask.lines.iter().enumerate() {
                if on {
                    for v in &mut k.data_mut()[r * cols..(r + 1) * cols] {
                        *v += Complex64::new(
                            gamma * rng.standard_normal(),
                            gamma * rng.standard_normal(),
                        );
                    }
                }
            }
        }
    }
    y.gamma = gamma;
    Ok(y)
}
