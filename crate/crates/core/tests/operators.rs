use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

use fieldshift::mri::{make_mask, make_sense, Encoding};
use fieldshift::numerics::{ComplexArray2D, RealArray2D, SeededRng};

fn random_kspace(
    coils: usize,
    rows: usize,
    cols: usize,
    rng: &mut SeededRng,
) -> Vec<ComplexArray2D> {
    (0..coils)
        .map(|_| {
            ComplexArray2D::from_fn(rows, cols, |_, _| {
                Complex64::new(rng.standard_normal(), rng.standard_normal())
            })
        })
        .collect()
}

fn flatten(y: &[ComplexArray2D]) -> Vec<f64> {
    y.iter()
        .flat_map(|c| c.data().iter().flat_map(|z| [z.re, z.im]))
        .collect()
}

// Dense real matrix of the operator, one column per pixel.
fn dense(enc: &Encoding) -> DMatrix<f64> {
    let (rows, cols) = enc.shape();
    let n = rows * cols;
    let mut cols_out = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = RealArray2D::zeros(rows, cols);
        e.data_mut()[j] = 1.0;
        cols_out.push(DVector::from_vec(flatten(&enc.forward(&e).unwrap())));
    }
    DMatrix::from_columns(&cols_out)
}

#[test]
fn adjoint_matches_dense_transpose() {
    let (rows, cols) = (8, 8);
    let enc = Encoding::new(
        make_sense(rows, cols, 3, 5).unwrap(),
        make_mask(rows, cols, 2.0, 2, 6).unwrap(),
    )
    .unwrap();
    let a = dense(&enc);
    let mut rng = SeededRng::new(7);
    let y = random_kspace(3, rows, cols, &mut rng);
    let expected = a.transpose() * DVector::from_vec(flatten(&y));
    let got = enc.adjoint(&y).unwrap();
    for (g, e) in got.data().iter().zip(expected.iter()) {
        assert!((g - e).abs() < 1e-10, "{g} vs {e}");
    }
}

#[test]
fn normal_operator_is_identity_when_fully_sampled() {
    // Sum-of-squares normalized maps and a unitary FFT give A^H A = I at R = 1.
    let (rows, cols) = (16, 16);
    let enc = Encoding::new(
        make_sense(rows, cols, 4, 1).unwrap(),
        make_mask(rows, cols, 1.0, 4, 2).unwrap(),
    )
    .unwrap();
    let mut rng = SeededRng::new(3);
    let x = rng.gaussian(rows, cols);
    let back = enc.adjoint(&enc.forward(&x).unwrap()).unwrap();
    for (a, b) in x.data().iter().zip(back.data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_gradient_matches_finite_differences(
        coils in 1usize..4,
        accel in prop::sample::select(vec![1.0f64, 2.0, 3.0]),
        seed in any::<u64>(),
    ) {
        let (rows, cols) = (16, 16);
        let enc = Encoding::new(
            make_sense(rows, cols, coils, seed).unwrap(),
            make_mask(rows, cols, accel, 2, seed ^ 1).unwrap(),
        ).unwrap();
        let mut rng = SeededRng::new(seed);
        let x = rng.gaussian(rows, cols);
        let y = random_kspace(coils, rows, cols, &mut rng);
        let loss = |x: &RealArray2D| {
            let (_, r) = enc.residual_gradient(x, &y).unwrap();
            0.5 * r * r
        };
        let (g, _) = enc.residual_gradient(&x, &y).unwrap();
        let h = 1e-5;
        for _ in 0..6 {
            let j = rng.below(rows * cols);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            prop_assert!((fd - g.data()[j]).abs() < 1e-5 * (1.0 + fd.abs()), "pixel {j}: fd {fd} vs {}", g.data()[j]);
        }
    }

    #[test]
    fn adjoint_identity_holds(coils in 1usize..5, accel in 1.0f64..4.0, seed in any::<u64>()) {
        let (rows, cols) = (32, 16);
        let enc = Encoding::new(
            make_sense(rows, cols, coils, seed).unwrap(),
            make_mask(rows, cols, accel, 4, seed.wrapping_add(1)).unwrap(),
        ).unwrap();
        let mut rng = SeededRng::new(seed);
        let x = rng.gaussian(rows, cols);
        let y = random_kspace(coils, rows, cols, &mut rng);
        let lhs: f64 = enc.forward(&x).unwrap().iter().zip(&y).map(|(a, b)| b.inner(a).re).sum();
        let rhs = x.dot(&enc.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
