mod common;

use common::rng;
use nhqt::linalg::{c64, eigenvalues, herm_eigenvalues, CMatrix};
use nhqt::model::{
    block_eigenvalues, build_hamiltonian, effective_block, excitation_number, jump_operators, single_excitation_indices,
    spectrum_scan,
};
use nhqt::{SystemSpec, Topology};
use proptest::prelude::*;
use rand::Rng;

fn spec_strategy() -> impl Strategy<Value = SystemSpec> {
    (2usize..=4, 0.01f64..1.0, prop::collection::vec(0.0f64..3.0, 4), prop::collection::vec(0.0f64..1.0, 4)).prop_map(
        |(n, j, g, noise)| SystemSpec {
            n_qubits: n,
            coupling: j,
            dissipation: g[..n].to_vec(),
            noise: noise[..n].to_vec(),
            topology: Topology::for_qubits(n),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_conserves_excitation_number(spec in spec_strategy()) {
        let h = build_hamiltonian(&spec).unwrap();
        for r in 0..spec.dim() {
            for c in 0..spec.dim() {
                if excitation_number(r) != excitation_number(c) {
                    prop_assert_eq!(h[(r, c)], c64(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn anti_hermitian_part_is_dissipative(spec in spec_strategy()) {
        let h = build_hamiltonian(&spec).unwrap();
        let k = h.anti_hermitian_part();
        let top = herm_eigenvalues(&k).unwrap()[0];
        prop_assert!(top <= 1e-12);
    }

    #[test]
    fn jump_operators_are_diagonal_psd(spec in spec_strategy()) {
        for l in jump_operators(&spec).unwrap() {
            prop_assert!(l.is_diagonal());
            prop_assert!(l.diagonal().iter().all(|z| z.im == 0.0 && z.re >= 0.0));
        }
    }

    #[test]
    fn spectrum_trace_identity(g1 in 0.0f64..3.0, g2 in 0.0f64..3.0, j in 0.01f64..1.0) {
        let (ev, _) = block_eigenvalues(j, g1, g2);
        let sum = ev[0] + ev[1];
        prop_assert!((sum - c64(0.0, -(g1 + g2))).norm() < 1e-12);
    }
}

#[test]
fn effective_block_is_the_single_excitation_sub_block() {
    let mut r = rng(10);
    for _ in 0..50 {
        let spec = SystemSpec::pair(r.random_range(0.01..1.0), r.random_range(0.0..3.0), r.random_range(0.0..3.0), 0.0);
        let h = build_hamiltonian(&spec).unwrap();
        // rows |10⟩, |01⟩
        let sub = h.submatrix(&[2, 1]);
        assert_eq!(sub, effective_block(&spec).unwrap());
    }
}

#[test]
fn scan_matches_generic_eigen_solver() {
    let spec = SystemSpec::pair(0.1, 0.0, 0.5, 0.0);
    let grid: Vec<f64> = (0..=120).map(|k| k as f64 * 0.01).collect();
    let scan = spectrum_scan(&spec, &grid).unwrap();
    for p in &scan.points {
        let block = effective_block(&SystemSpec::pair(0.1, p.gamma1, 0.5, 0.0)).unwrap();
        let generic = eigenvalues(&block).unwrap();
        // At a coalescence the eigenvalues are only defined to √ε.
        let tol = if p.discriminant.abs() < 1e-12 { 1e-7 } else { 1e-10 };
        let mut found = p.eigenvalues.to_vec();
        nhqt::linalg::sort_eigenvalues(&mut found);
        for (a, b) in found.iter().zip(&generic) {
            assert!((a - b).norm() < tol, "Γ₁ = {}: {a} vs {b}", p.gamma1);
        }
    }
}

#[test]
fn discriminant_vanishes_at_exceptional_points() {
    let spec = SystemSpec::pair(0.1, 0.0, 0.5, 0.0);
    let scan = spectrum_scan(&spec, &[]).unwrap();
    assert_eq!(scan.exceptional_points.len(), 2);
    for &g in &scan.exceptional_points {
        let (_, d) = block_eigenvalues(0.1, g, 0.5);
        assert!(d.abs() < 1e-14, "{d:e}");
    }
    assert!((scan.exceptional_points[0] - 0.3).abs() < 1e-12);
    assert!((scan.exceptional_points[1] - 0.7).abs() < 1e-12);
}

/// Gap between the two eigenvalues of the single-excitation sector that
/// involve qubit 1, for a three-qubit star.
fn star3_gap(gamma1: f64) -> f64 {
    let spec = SystemSpec::star(3, 0.1, gamma1, 0.5, 0.0);
    let h = build_hamiltonian(&spec).unwrap();
    let block = h.submatrix(&single_excitation_indices(3));
    let mut ev = eigenvalues(&block).unwrap();
    // The antisymmetric combination of qubits 2 and 3 decouples at −iΓ₂.
    let dark = c64(0.0, -0.5);
    ev.sort_by(|a, b| (a - dark).norm().total_cmp(&(b - dark).norm()));
    (ev[1] - ev[2]).norm()
}

#[test]
fn three_qubit_exceptional_point_from_generic_solver() {
    let (mut lo, mut hi) = (0.6, 1.0);
    for _ in 0..80 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if star3_gap(m1) < star3_gap(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let ep = 0.5 * (lo + hi);
    let effective = 0.5 + 2.0 * 2f64.sqrt() * 0.1;
    assert!((ep - effective).abs() < 1e-4, "{ep} vs {effective}");
}

#[test]
fn jump_operator_examples() {
    let spec = SystemSpec::pair(0.1, 2.0, 0.5, 0.5);
    let ls = jump_operators(&spec).unwrap();
    // γ_φ1 = 2·0.5·2² = 4, so L_φ1 = 2 on qubit-1-excited states.
    assert_eq!(ls[0].diagonal(), vec![c64(0.0, 0.0), c64(0.0, 0.0), c64(2.0, 0.0), c64(2.0, 0.0)]);
    let spec = SystemSpec::pair(0.1, 0.5, 0.5, 0.1);
    let ls = jump_operators(&spec).unwrap();
    assert!((ls[1][(1, 1)].re - 0.05f64.sqrt()).abs() < 1e-15);
    assert!((ls[1][(1, 1)].re - 0.22360).abs() < 1e-5);
    let quiet = jump_operators(&SystemSpec::pair(0.1, 0.5, 0.5, 0.0)).unwrap();
    assert!(quiet.iter().all(|l| *l == CMatrix::zeros(4)));
}

#[test]
fn spectrum_examples() {
    let (ev, _) = block_eigenvalues(0.1, 0.5, 0.5);
    assert!((ev[0] - c64(0.1, -0.5)).norm() < 1e-15);
    assert!((ev[1] - c64(-0.1, -0.5)).norm() < 1e-15);
    let (ev, d) = block_eigenvalues(0.1, 0.9, 0.5);
    assert!(d < 0.0);
    assert!((ev[0].re - ev[1].re).abs() < 1e-15);
    let split = 0.03f64.sqrt();
    let mut ims = [ev[0].im, ev[1].im];
    ims.sort_by(f64::total_cmp);
    assert!((ims[0] - (-0.7 - split)).abs() < 1e-14);
    assert!((ims[1] - (-0.7 + split)).abs() < 1e-14);
}
