//! Hamiltonians, jump operators and spectra of coupled non-Hermitian qubits.
//!
//! Basis convention: a computational basis state |b₁b₂…bₙ⟩ has index
//! Σⱼ bⱼ·2^(n−j), so qubit 1 is the most significant bit and |10⟩ sits at
//! index 2 for two qubits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c64, CMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("n_qubits must be 2, 3 or 4 (got {0})")]
    QubitCount(usize),
    #[error("coupling J must be positive and finite (got {0})")]
    Coupling(f64),
    #[error("{field} has {found} entries, expected one per qubit ({expected})")]
    Length { field: &'static str, expected: usize, found: usize },
    #[error("{field}[{index}] = {value} must be finite and non-negative")]
    Negative { field: &'static str, index: usize, value: f64 },
    #[error("topology {topology:?} is incompatible with {n_qubits} qubits")]
    Topology { topology: Topology, n_qubits: usize },
    #[error("operation requires exactly two qubits (got {0})")]
    Unsupported(usize),
}

/// How the qubits are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Two qubits with a single flip-flop coupling.
    Pair,
    /// Qubit 1 coupled to every other qubit with the same strength.
    Star,
}

impl Topology {
    /// The only topology that is valid for `n_qubits`.
    pub fn for_qubits(n_qubits: usize) -> Topology {
        if n_qubits == 2 {
            Topology::Pair
        } else {
            Topology::Star
        }
    }
}

/// Physical parameters of the coupled-qubit system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_qubits: usize,
    /// Flip-flop coupling J.
    pub coupling: f64,
    /// Dissipation rates Γⱼ.
    pub dissipation: Vec<f64>,
    /// Noise strengths γⱼ.
    pub noise: Vec<f64>,
    pub topology: Topology,
}

impl SystemSpec {
    /// Two coupled qubits with the same noise strength on both.
    pub fn pair(coupling: f64, gamma1: f64, gamma2: f64, noise: f64) -> Self {
        SystemSpec {
            n_qubits: 2,
            coupling,
            dissipation: vec![gamma1, gamma2],
            noise: vec![noise, noise],
            topology: Topology::Pair,
        }
    }

    /// Star of `n` qubits: qubit 1 has dissipation `gamma1`, the others `gamma_rest`.
    pub fn star(n: usize, coupling: f64, gamma1: f64, gamma_rest: f64, noise: f64) -> Self {
        let mut dissipation = vec![gamma_rest; n];
        dissipation[0] = gamma1;
        SystemSpec { n_qubits: n, coupling, dissipation, noise: vec![noise; n], topology: Topology::Star }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_qubits;
        if !(2..=4).contains(&n) {
            return Err(ModelError::QubitCount(n));
        }
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(ModelError::Coupling(self.coupling));
        }
        for (field, values) in [("dissipation", &self.dissipation), ("noise", &self.noise)] {
            if values.len() != n {
                return Err(ModelError::Length { field, expected: n, found: values.len() });
            }
            if let Some((index, &value)) =
                values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0))
            {
                return Err(ModelError::Negative { field, index, value });
            }
        }
        let ok = match self.topology {
            Topology::Pair => n == 2,
            Topology::Star => n >= 3,
        };
        if !ok {
            return Err(ModelError::Topology { topology: self.topology, n_qubits: n });
        }
        Ok(())
    }

    /// Effective dephasing rate γ_φⱼ = 2γⱼΓⱼ².
    pub fn dephasing_rate(&self, qubit: usize) -> f64 {
        2.0 * self.noise[qubit] * self.dissipation[qubit].powi(2)
    }
}

/// Whether qubit `j` (0-based) is excited in basis state `index`.
#[inline]
pub fn excited(n_qubits: usize, index: usize, j: usize) -> bool {
    (index >> (n_qubits - 1 - j)) & 1 == 1
}

/// Index of the basis state with a single excitation on qubit `j` (0-based).
pub fn single_excitation_index(n_qubits: usize, j: usize) -> usize {
    1 << (n_qubits - 1 - j)
}

/// Indices of the single-excitation states, ordered qubit 1 first
/// (|10…0⟩, |01…0⟩, …).
pub fn single_excitation_indices(n_qubits: usize) -> Vec<usize> {
    (0..n_qubits).map(|j| single_excitation_index(n_qubits, j)).collect()
}

pub fn excitation_number(index: usize) -> u32 {
    index.count_ones()
}

/// Bit-string label of a basis state, e.g. `"10"` for index 2 with n = 2.
pub fn basis_label(n_qubits: usize, index: usize) -> String {
    (0..n_qubits).map(|j| if excited(n_qubits, index, j) { '1' } else { '0' }).collect()
}

/// Parses a bit-string label back to a basis index.
pub fn parse_basis_label(label: &str) -> Option<(usize, usize)> {
    if label.is_empty() || !label.chars().all(|c| c == '0' || c == '1') {
        return None;
    }
    Some((label.len(), usize::from_str_radix(label, 2).ok()?))
}

/// H = H_int − i Σⱼ Γⱼ |1⟩ⱼ⟨1|, with flip-flop couplings between qubit 1
/// and every other qubit.
pub fn build_hamiltonian(spec: &SystemSpec) -> Result<CMatrix, ModelError> {
    spec.validate()?;
    let n = spec.n_qubits;
    let dim = spec.dim();
    let mut h = CMatrix::zeros(dim);
    for b in 0..dim {
        let loss: f64 = (0..n).filter(|&j| excited(n, b, j)).map(|j| spec.dissipation[j]).sum();
        h[(b, b)] = c64(0.0, -loss);
        // σ₁⁺σⱼ⁻ maps |0…1ⱼ…⟩ → |1…0ⱼ…⟩; add it together with its adjoint.
        if !excited(n, b, 0) {
            continue;
        }
        for j in 1..n {
            if !excited(n, b, j) {
                let partner = b ^ single_excitation_index(n, 0) ^ single_excitation_index(n, j);
                h[(b, partner)] = c64(spec.coupling, 0.0);
                h[(partner, b)] = c64(spec.coupling, 0.0);
            }
        }
    }
    Ok(h)
}

/// Diagonals of the jump operators L_φⱼ = √(2γⱼΓⱼ²)·|1⟩ⱼ⟨1|, one per qubit.
pub fn jump_diagonals(spec: &SystemSpec) -> Result<Vec<Vec<f64>>, ModelError> {
    spec.validate()?;
    let n = spec.n_qubits;
    Ok((0..n)
        .map(|j| {
            let amp = spec.dephasing_rate(j).sqrt();
            (0..spec.dim()).map(|b| if excited(n, b, j) { amp } else { 0.0 }).collect()
        })
        .collect())
}

/// Jump operators L_φⱼ embedded in the full 2ⁿ space.
pub fn jump_operators(spec: &SystemSpec) -> Result<Vec<CMatrix>, ModelError> {
    Ok(jump_diagonals(spec)?
        .into_iter()
        .map(|d| CMatrix::from_diagonal(&d.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>()))
        .collect())
}

/// The two-level block H₁ = [[−iΓ₁, J], [J, −iΓ₂]] on span{|10⟩, |01⟩}.
pub fn effective_block(spec: &SystemSpec) -> Result<CMatrix, ModelError> {
    spec.validate()?;
    if spec.n_qubits != 2 {
        return Err(ModelError::Unsupported(spec.n_qubits));
    }
    Ok(block_from_rates(spec.coupling, spec.dissipation[0], spec.dissipation[1]))
}

pub(crate) fn block_from_rates(coupling: f64, gamma1: f64, gamma2: f64) -> CMatrix {
    CMatrix::from_rows(&[
        &[c64(0.0, -gamma1), c64(coupling, 0.0)],
        &[c64(coupling, 0.0), c64(0.0, -gamma2)],
    ])
}

/// Eigenvalues of the two-level block at one value of Γ₁.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    pub gamma1: f64,
    /// (λ₊, λ₋), ordered by descending real part, ties by descending imaginary part.
    pub eigenvalues: [C64; 2],
    /// J² − (Γ₁ − Γ₂)²/4; zero at an exceptional point.
    pub discriminant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumScan {
    pub points: Vec<SpectrumPoint>,
    /// Γ₁ values of the exceptional points, Γ₂ ± 2J, keeping only non-negative ones.
    pub exceptional_points: Vec<f64>,
}

/// λ± = −i(Γ₁+Γ₂)/2 ± √(J² − (Γ₁−Γ₂)²/4) using the principal complex root.
pub fn block_eigenvalues(coupling: f64, gamma1: f64, gamma2: f64) -> ([C64; 2], f64) {
    let half_diff = 0.5 * (gamma1 - gamma2);
    let disc = coupling * coupling - half_diff * half_diff;
    let centre = c64(0.0, -0.5 * (gamma1 + gamma2));
    let root = c64(disc, 0.0).sqrt();
    let mut pair = [centre + root, centre - root];
    crate::linalg::sort_eigenvalues(&mut pair);
    (pair, disc)
}

/// Scans Γ₁ over `gamma1_grid`, holding J and Γ₂ from `spec` fixed.
pub fn spectrum_scan(spec: &SystemSpec, gamma1_grid: &[f64]) -> Result<SpectrumScan, ModelError> {
    spec.validate()?;
    if spec.n_qubits != 2 {
        return Err(ModelError::Unsupported(spec.n_qubits));
    }
    let (j, g2) = (spec.coupling, spec.dissipation[1]);
    let points = gamma1_grid
        .iter()
        .map(|&g1| {
            let (eigenvalues, discriminant) = block_eigenvalues(j, g1, g2);
            SpectrumPoint { gamma1: g1, eigenvalues, discriminant }
        })
        .collect();
    let exceptional_points = [g2 - 2.0 * j, g2 + 2.0 * j].into_iter().filter(|&g| g >= 0.0).collect();
    Ok(SpectrumScan { points, exceptional_points })
}

/// The n-qubit W state (|10…0⟩ + |01…0⟩ + … + |0…01⟩)/√n.
pub fn w_state(n_qubits: usize) -> Vec<C64> {
    let mut psi = vec![c64(0.0, 0.0); 1 << n_qubits];
    let amp = 1.0 / (n_qubits as f64).sqrt();
    for idx in single_excitation_indices(n_qubits) {
        psi[idx] = c64(amp, 0.0);
    }
    psi
}
