mod common;

use common::{random_matrix, rng};
use nhqt::linalg::{c64, herm_eigenvalues, herm_psd_sqrt, mat_exp, svd_2x2, CMatrix, DEFAULT_PSD_TOL};
use proptest::prelude::*;

fn taylor_exp(a: &CMatrix, terms: usize) -> CMatrix {
    let mut sum = CMatrix::identity(a.dim());
    let mut term = CMatrix::identity(a.dim());
    for k in 1..terms {
        term = (&term * a).scale_real(1.0 / k as f64);
        sum = &sum + &term;
    }
    sum
}

fn scaled_to_norm(m: CMatrix, norm: f64) -> CMatrix {
    let f = m.frobenius_norm();
    m.scale_real(norm / f)
}

#[test]
fn mat_exp_matches_taylor_series() {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let dim = 2 + k % 3 * 2;
        let a = scaled_to_norm(random_matrix(&mut r, dim), 2.0 * (k as f64 + 1.0) / 100.0);
        let e = mat_exp(&a).unwrap();
        let t = taylor_exp(&a, 30);
        worst = worst.max(e.max_abs_diff(&t));
    }
    assert!(worst < 1e-10, "max deviation {worst:e}");
}

#[test]
fn mat_exp_pauli_rotation() {
    let sx = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let e = mat_exp(&sx.scale(c64(0.0, -std::f64::consts::FRAC_PI_2))).unwrap();
    assert!(e.max_abs_diff(&sx.scale(c64(0.0, -1.0))) < 1e-14);
}

#[test]
fn mat_exp_relative_accuracy_at_large_norm() {
    // Anti-Hermitian generator: e^A is unitary, so compare against the
    // eigen-decomposition route.
    let mut r = rng(2);
    for _ in 0..20 {
        let g = random_matrix(&mut r, 4);
        let h = scaled_to_norm(g.hermitian_part(), 50.0);
        let e = mat_exp(&h.scale(c64(0.0, -1.0))).unwrap();
        let (vals, vecs) = nhqt::linalg::herm_eigen(&h).unwrap();
        let d = CMatrix::from_diagonal(&vals.iter().map(|&l| unit(-l)).collect::<Vec<_>>());
        let exact = &(&vecs * &d) * &vecs.adjoint();
        assert!(e.max_abs_diff(&exact) < 1e-10);
    }
}

fn unit(theta: f64) -> nhqt::C64 {
    nhqt::C64::from_polar(1.0, theta)
}

#[test]
fn psd_sqrt_reconstructs() {
    let mut r = rng(3);
    for k in 0..200 {
        let dim = [2, 4, 8, 16][k % 4];
        let g = random_matrix(&mut r, dim);
        let a = (&g * &g.adjoint()).hermitian_part();
        let s = herm_psd_sqrt(&a, DEFAULT_PSD_TOL).unwrap();
        let scale = a.frobenius_norm().max(1.0);
        assert!((&s * &s).max_abs_diff(&a) / scale < 1e-9);
        assert!(s.hermiticity_error() < 1e-10);
        assert!(*herm_eigenvalues(&s).unwrap().last().unwrap() > -1e-10);
    }
}

#[test]
fn svd_reconstructs_random_matrices() {
    let mut r = rng(4);
    let id = CMatrix::identity(2);
    for _ in 0..500 {
        let m = random_matrix(&mut r, 2);
        let svd = svd_2x2(&m).unwrap();
        let [s1, s2] = svd.singular_values;
        assert!(s1 >= s2 && s2 >= 0.0);
        let sigma = CMatrix::from_diagonal(&[c64(s1, 0.0), c64(s2, 0.0)]);
        let back = &(&svd.u * &sigma) * &svd.v.adjoint();
        assert!(back.max_abs_diff(&m) < 1e-10);
        assert!((&svd.u.adjoint() * &svd.u).max_abs_diff(&id) < 1e-10);
        assert!((&svd.v.adjoint() * &svd.v).max_abs_diff(&id) < 1e-10);
    }
}

#[test]
fn svd_examples() {
    let x = CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let s = svd_2x2(&x).unwrap().singular_values;
    assert!((s[0] - 1.0).abs() < 1e-15 && (s[1] - 1.0).abs() < 1e-15);
    let s = svd_2x2(&CMatrix::identity(2)).unwrap().singular_values;
    assert_eq!(s, [1.0, 1.0]);
}

fn matrix_strategy(dim: usize, bound: f64) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-bound..bound, -bound..bound), dim * dim)
        .prop_map(move |v| CMatrix::from_fn(dim, |r, c| c64(v[r * dim + c].0, v[r * dim + c].1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_times_inverse_is_identity(a in matrix_strategy(4, 2.5)) {
        let a = if a.norm_one() > 10.0 { a.scale_real(10.0 / a.norm_one()) } else { a };
        let p = &mat_exp(&a).unwrap() * &mat_exp(&a.scale_real(-1.0)).unwrap();
        prop_assert!(p.max_abs_diff(&CMatrix::identity(4)) < 1e-9);
    }

    #[test]
    fn svd_factors_are_unitary(m in matrix_strategy(2, 5.0)) {
        let svd = svd_2x2(&m).unwrap();
        let id = CMatrix::identity(2);
        prop_assert!((&svd.u.adjoint() * &svd.u).max_abs_diff(&id) < 1e-10);
        prop_assert!((&svd.v.adjoint() * &svd.v).max_abs_diff(&id) < 1e-10);
    }

    #[test]
    fn psd_sqrt_is_hermitian_psd(g in matrix_strategy(4, 3.0)) {
        let a = (&g * &g.adjoint()).hermitian_part();
        let s = herm_psd_sqrt(&a, DEFAULT_PSD_TOL).unwrap();
        prop_assert!(s.hermiticity_error() < 1e-10);
        prop_assert!(*herm_eigenvalues(&s).unwrap().last().unwrap() >= -1e-10);
    }
}
