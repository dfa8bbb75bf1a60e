#![allow(dead_code)]

use aisc_core::{Aisc, LandmarkShape, Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_shape(rng: &mut ChaCha8Rng, m: usize) -> LandmarkShape {
    loop {
        if let Ok(s) = LandmarkShape::new(random_matrix(rng, m, 2)) {
            return s;
        }
    }
}

/// Random 2×2 matrix with |det| bounded away from zero.
pub fn random_invertible_2x2(rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let a = Matrix::from_vec(2, 2, (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        if det.abs() > 0.1 {
            return a;
        }
    }
}

/// Central differences of a scalar function of a matrix, written here so the
/// tests do not depend on the library's own gradcheck helpers.
pub fn numeric_gradient(x: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut plus = x.clone();
            plus[(r, c)] += h;
            let mut minus = x.clone();
            minus[(r, c)] -= h;
            g[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    g
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    let d = a.sub(b).unwrap().frobenius_norm();
    if scale == 0.0 {
        d
    } else {
        d / scale
    }
}

/// `Σ upstream ∘ B(S₀, S₁)`.
pub fn probe_loss(aisc: &Aisc, s0: &Matrix, s1: &Matrix, upstream: &Matrix) -> Result<f64> {
    let b = aisc.forward(&LandmarkShape::new(s0.clone())?, &LandmarkShape::new(s1.clone())?)?;
    b.b.inner(upstream)
}

/// Shape whose centred copy has orthogonal, equal-norm columns, so both
/// singular values coincide.
pub fn repeated_singular_value_shape(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> LandmarkShape {
    let raw = random_matrix(rng, m, 2).center_columns();
    let mut c0 = raw.column(0);
    let mut c1 = raw.column(1);
    let n0 = c0.iter().map(|x| x * x).sum::<f64>().sqrt();
    c0.iter_mut().for_each(|x| *x /= n0);
    let p: f64 = c0.iter().zip(&c1).map(|(a, b)| a * b).sum();
    c1.iter_mut().zip(&c0).for_each(|(x, y)| *x -= p * y);
    let n1 = c1.iter().map(|x| x * x).sum::<f64>().sqrt();
    c1.iter_mut().for_each(|x| *x /= n1);
    let cols = vec![
        c0.iter().map(|x| x * scale).collect(),
        c1.iter().map(|x| x * scale).collect(),
    ];
    LandmarkShape::new(Matrix::from_columns(&cols).unwrap()).unwrap()
}
