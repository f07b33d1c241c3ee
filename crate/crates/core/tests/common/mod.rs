#![allow(dead_code)]

use nhqt::linalg::{c64, CMatrix, C64};
use nhqt::{DensityMatrix, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    c64(gaussian(rng), gaussian(rng))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, |_, _| complex_gaussian(rng))
}

pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> StateVector {
    StateVector::normalized((0..dim).map(|_| complex_gaussian(rng)).collect()).unwrap()
}

/// ρ = G·G† / tr, with G of shape dim × rank.
pub fn random_density(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> DensityMatrix {
    let mut m = CMatrix::zeros(dim);
    for _ in 0..rank {
        let v: Vec<C64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
        m = &m + &CMatrix::outer(&v, &v);
    }
    let tr = m.trace().re;
    DensityMatrix::try_from_matrix(m.scale_real(1.0 / tr).hermitian_part()).unwrap()
}

/// Haar-ish random 2×2 unitary from the QR-free parametrization.
pub fn random_unitary2(rng: &mut ChaCha8Rng) -> CMatrix {
    let a = complex_gaussian(rng);
    let b = complex_gaussian(rng);
    let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / n, b / n);
    let phase = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    CMatrix::from_rows(&[&[a, -b.conj() * phase], &[b, a.conj() * phase]])
}
