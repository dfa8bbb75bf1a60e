mod common;

use aisc_core::kernels::{sym_eigen, thin_svd};
use aisc_core::{Aisc, LandmarkShape, Matrix};
use common::*;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(seed in any::<u64>(), m in 2usize..40, k in 1usize..3) {
        prop_assume!(m >= k);
        let a = random_matrix(&mut rng(seed), m, k).scale(10.0);
        let svd = thin_svd(&a).unwrap();
        let resid = svd.reconstruct().sub(&a).unwrap().frobenius_norm();
        prop_assert!(resid <= 1e-10 * a.frobenius_norm().max(1.0));
        let utu = svd.u.t_matmul(&svd.u).unwrap();
        prop_assert!(utu.sub(&Matrix::identity(k)).unwrap().frobenius_norm() < 1e-10);
        prop_assert!(svd.d.windows(2).all(|w| w[0] >= w[1]));
        // sign convention: largest-magnitude entry of each U column is positive
        for c in 0..k {
            let col = svd.u.column(c);
            let big = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            prop_assert!(big > 0.0);
        }
        prop_assert_eq!(thin_svd(&a).unwrap(), svd);
    }

    #[test]
    fn sym_eigen_vectors_are_orthonormal(seed in any::<u64>(), n in 1usize..25) {
        let r = random_matrix(&mut rng(seed), n, n);
        let a = r.add(&r.transpose()).unwrap();
        let e = sym_eigen(&a).unwrap();
        let q = &e.vectors;
        prop_assert!(q.t_matmul(q).unwrap().sub(&Matrix::identity(n)).unwrap().frobenius_norm() <= 1e-9);
        let rebuilt = q.matmul(&Matrix::from_diag(&e.values)).unwrap().matmul(&q.transpose()).unwrap();
        prop_assert!(rebuilt.sub(&a).unwrap().frobenius_norm() < 1e-9 * a.frobenius_norm().max(1.0));
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projector_laws(seed in any::<u64>(), m in 3usize..70, centering in any::<bool>()) {
        let s = random_shape(&mut rng(seed), m);
        let Ok(d) = Aisc::new(centering).shape_to_projector(&s) else {
            // centring can remove rank from a random 3-point shape
            prop_assume!(false);
            unreachable!()
        };
        let p = &d.projector;
        prop_assert!(p.asymmetry().unwrap() <= 1e-12);
        prop_assert!(p.matmul(p).unwrap().sub(p).unwrap().frobenius_norm() < 1e-9);
        prop_assert!((p.trace() - 2.0).abs() < 1e-9);
        if centering {
            // the all-ones vector lies in the null space
            let ones = vec![1.0; m];
            prop_assert!(p.matvec(&ones).unwrap().iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn affine_invariance(seed in any::<u64>(), m in 3usize..70, tx in -100.0f64..100.0, ty in -100.0f64..100.0) {
        let mut r = rng(seed);
        let s = random_shape(&mut r, m);
        let a = random_invertible_2x2(&mut r);
        let moved = s.transform(&a).unwrap();
        prop_assert!(Aisc::new(false).forward(&s, &moved).unwrap().frobenius_norm() <= 1e-8);

        // with centring, translations are absorbed too
        let shifted: Vec<[f64; 2]> = (0..m)
            .map(|i| [moved.points()[(i, 0)] + tx, moved.points()[(i, 1)] + ty])
            .collect();
        let shifted = LandmarkShape::from_points(&shifted).unwrap();
        if let Ok(f) = Aisc::new(true).forward(&s, &shifted) {
            prop_assert!(f.frobenius_norm() <= 1e-8);
        }
    }

    #[test]
    fn feature_invariants(seed in any::<u64>(), m in 4usize..70) {
        let mut r = rng(seed);
        let (s0, s1) = (random_shape(&mut r, m), random_shape(&mut r, m));
        let aisc = Aisc::new(true);
        let Ok((f, d0, d1)) = aisc.forward_with_decompositions(&s0, &s1) else {
            prop_assume!(false);
            unreachable!()
        };
        let b = &f.b;
        prop_assert!(b.asymmetry().unwrap() <= 1e-12);
        prop_assert!(b.trace().abs() < 1e-9);

        let back = aisc.forward(&s1, &s0).unwrap();
        prop_assert!(b.add(&back.b).unwrap().max_abs() <= 1e-12);

        let info = aisc.geodesic_info(&f, &d0, &d1).unwrap();
        let eig = &info.geodesic_generator_eigenvalues;
        prop_assert!(eig.iter().all(|&l| l.abs() <= 1.0 + 1e-9));
        // ± pairing: the sorted spectrum is symmetric about zero
        for i in 0..eig.len() {
            prop_assert!((eig[i] + eig[eig.len() - 1 - i]).abs() < 1e-9);
        }
        // the nonzero eigenvalues are ± the sines of the principal angles
        let mut sines: Vec<f64> = info.principal_angles().iter().map(|t| t.sin()).collect();
        sines.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert!((eig[0] - sines[0]).abs() < 1e-7);
        prop_assert!((eig[1] - sines[1]).abs() < 1e-7);
        prop_assert!(eig[2..eig.len() - 2].iter().all(|l| l.abs() < 1e-9));
        let norm2: f64 = sines.iter().map(|s| 2.0 * s * s).sum();
        prop_assert!((b.frobenius_norm().powi(2) - norm2).abs() < 1e-9);
        for (c, t) in info.principal_cosines.iter().zip(info.principal_angles()) {
            prop_assert!((c - t.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients(seed in any::<u64>(), m in 4usize..20) {
        let mut r = rng(seed);
        let (s0, s1) = (random_shape(&mut r, m), random_shape(&mut r, m));
        let aisc = Aisc::default();
        let (_, d0, d1) = aisc.forward_with_decompositions(&s0, &s1).unwrap();
        let zero = Matrix::zeros(m, m);
        let (p0, p1) = aisc.backward_projector(&d0, &d1, &zero).unwrap();
        prop_assert_eq!(p0.max_abs() + p1.max_abs(), 0.0);
        if let Ok((g0, g1)) = aisc.backward_svd(&d0, &d1, &zero) {
            prop_assert_eq!(g0.max_abs() + g1.max_abs(), 0.0);
        }
    }
}

#[test]
fn kernel_examples() {
    let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let svd = thin_svd(&a).unwrap();
    assert_eq!(svd.d, vec![1.0, 1.0]);
    assert!(svd.u.row(2).iter().all(|&v| v == 0.0));

    let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    assert_eq!(thin_svd(&a).unwrap().d, vec![2.0, 0.0]);

    assert_eq!(sym_eigen(&Matrix::identity(3)).unwrap().values, vec![1.0, 1.0, 1.0]);
    let e = sym_eigen(&Matrix::from_diag(&[3.0, 1.0, -2.0])).unwrap();
    assert_eq!(e.values, vec![3.0, 1.0, -2.0]);

    let mut r = rng(3);
    let (x, y) = (random_matrix(&mut r, 3, 4), random_matrix(&mut r, 4, 2));
    let lhs = x.matmul(&y).unwrap().transpose();
    let rhs = y.transpose().matmul(&x.transpose()).unwrap();
    assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-15);
    assert_eq!(Matrix::identity(3).matmul(&x).unwrap(), x);
    assert_eq!(Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap().frobenius_norm(), 5.0);
}

#[test]
fn projector_examples() {
    let s = LandmarkShape::from_points(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
    let p = Aisc::new(false).shape_to_projector(&s).unwrap().projector;
    assert!(p.sub(&Matrix::from_diag(&[1.0, 1.0, 0.0])).unwrap().max_abs() < 1e-15);

    let mut r = rng(21);
    let s = random_shape(&mut r, 68);
    let aisc = Aisc::new(false);
    let p = aisc.shape_to_projector(&s).unwrap().projector;
    let q = aisc
        .shape_to_projector(&s.transform(&random_invertible_2x2(&mut r)).unwrap())
        .unwrap()
        .projector;
    assert!(p.sub(&q).unwrap().max_abs() < 1e-9);
    assert!((p.trace() - 2.0).abs() < 1e-12);
    assert!(p.matmul(&p).unwrap().sub(&p).unwrap().frobenius_norm() < 1e-9);
    assert_eq!(aisc.forward(&s, &s).unwrap().b.max_abs(), 0.0);
}

#[test]
fn rank_deficient_and_malformed_shapes_are_rejected() {
    assert!(LandmarkShape::from_points(&[[0.0, 0.0], [1.0, 1.0]]).is_err());
    assert!(LandmarkShape::from_points(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    assert!(LandmarkShape::from_points(&[[0.0, 0.0], [1.0, f64::INFINITY], [2.0, 0.0]]).is_err());
    assert!(LandmarkShape::new(Matrix::zeros(5, 3)).is_err());
    let a = LandmarkShape::from_points(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let b = LandmarkShape::from_points(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    assert!(Aisc::new(false).forward(&a, &b).is_err());
    // three non-collinear points keep rank 2 once centred
    assert!(Aisc::new(true).shape_to_projector(&LandmarkShape::from_points(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.1]]).unwrap()).is_ok());
    let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
    assert!(a.transform(&singular).is_err());
}
