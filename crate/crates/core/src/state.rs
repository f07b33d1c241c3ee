//! Pure and mixed states over the 2ⁿ computational basis.

use thiserror::Error;

use crate::linalg::{c64, herm_eigenvalues, CMatrix, LinalgError, C64, DEFAULT_PSD_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("state vector has zero norm")]
    ZeroNorm,
    #[error("basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("density matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace {0} differs from 1")]
    Trace(f64),
    #[error("density matrix has eigenvalue {0:e} below tolerance")]
    Negative(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Normalized pure state |ψ⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<C64>);

impl StateVector {
    /// Normalizes `amplitudes` to unit length.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self, StateError> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(StateError::ZeroNorm);
        }
        amplitudes.iter_mut().for_each(|z| *z /= norm);
        Ok(StateVector(amplitudes))
    }

    /// Computational basis state |index⟩.
    pub fn basis(dim: usize, index: usize) -> Result<Self, StateError> {
        if index >= dim {
            return Err(StateError::IndexOutOfRange { index, dim });
        }
        let mut v = vec![c64(0.0, 0.0); dim];
        v[index] = c64(1.0, 0.0);
        Ok(StateVector(v))
    }

    /// |10…0⟩: the first qubit excited, the default initial state.
    pub fn first_excited(n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        Self::basis(dim, dim >> 1).expect("index is in range")
    }

    pub(crate) fn from_normalized_unchecked(v: Vec<C64>) -> Self {
        StateVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix(CMatrix::outer(&self.0, &self.0))
    }
}

/// Mixed state ρ: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Validates `m` as a density matrix: Hermitian within 1e-10, unit trace
    /// within 1e-9, eigenvalues ≥ -`tol`.
    pub fn new(m: CMatrix, tol: f64) -> Result<Self, StateError> {
        let dev = m.hermiticity_error();
        if dev > 1e-10 {
            return Err(StateError::NotHermitian(dev));
        }
        let tr = m.trace().re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(StateError::Trace(tr));
        }
        let m = m.hermitian_part();
        let lowest = herm_eigenvalues(&m)?.last().copied().unwrap_or(0.0);
        if lowest < -tol {
            return Err(StateError::Negative(lowest));
        }
        Ok(DensityMatrix(m))
    }

    /// Like [`DensityMatrix::new`] with the default clamp tolerance.
    pub fn try_from_matrix(m: CMatrix) -> Result<Self, StateError> {
        Self::new(m, DEFAULT_PSD_TOL)
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        DensityMatrix(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix(CMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// tr(ρ²).
    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn min_eigenvalue(&self) -> Result<f64, StateError> {
        Ok(herm_eigenvalues(&self.0)?.last().copied().unwrap_or(0.0))
    }
}

impl From<&StateVector> for DensityMatrix {
    fn from(psi: &StateVector) -> Self {
        psi.projector()
    }
}

/// Anything whose computational-basis populations can be read off.
pub trait QuantumState {
    fn populations(&self) -> Vec<f64>;
}

impl QuantumState for StateVector {
    fn populations(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }
}

impl QuantumState for DensityMatrix {
    fn populations(&self) -> Vec<f64> {
        self.0.diagonal().iter().map(|z| z.re).collect()
    }
}
