//! Small dense complex-matrix kernels.
//!
//! Every operator in this crate lives in a Hilbert space of at most four
//! qubits, so matrices are capped at 16×16 and all routines favour clarity
//! over asymptotic speed.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Largest supported matrix dimension (four qubits).
pub const MAX_DIM: usize = 16;

/// Default clamp tolerance for slightly negative eigenvalues of
/// Monte Carlo-averaged density matrices.
pub const DEFAULT_PSD_TOL: f64 = 1e-8;

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimension {dim} exceeds the supported maximum of {MAX_DIM}")]
    TooLarge { dim: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not Hermitian (max |A - A^dag| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below -{tol:e})")]
    NotPsd { eigenvalue: f64, tol: f64 },
    #[error("expected a {expected}x{expected} matrix, got {found}x{found}")]
    WrongDimension { expected: usize, found: usize },
    #[error("matrix is singular")]
    Singular,
}

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Square complex matrix of dimension at most [`MAX_DIM`].
#[derive(Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        CMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        CMatrix(DMatrix::from_fn(dim, dim, f))
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged or
    /// not square.
    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim), "rows must form a square matrix");
        Self::from_fn(dim, |r, c| rows[r][c])
    }

    /// Real-valued convenience constructor.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim), "rows must form a square matrix");
        Self::from_fn(dim, |r, c| c64(rows[r][c], 0.0))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let dim = diag.len();
        Self::from_fn(dim, |r, c| if r == c { diag[r] } else { C64::new(0.0, 0.0) })
    }

    /// Outer product |a⟩⟨b|.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |r, c| a[r] * b[c].conj())
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::WrongDimension { expected: m.nrows(), found: m.ncols() });
        }
        Ok(CMatrix(m))
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn adjoint(&self) -> Self {
        CMatrix(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        CMatrix(self.0.transpose())
    }

    pub fn conj(&self) -> Self {
        CMatrix(self.0.map(|z| z.conj()))
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        CMatrix(self.0.map(|z| z * s))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// max |A - A†| over all entries.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self.0[(r, c)] - self.0[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() < tol
    }

    /// (A + A†)/2.
    pub fn hermitian_part(&self) -> Self {
        CMatrix((&self.0 + self.0.adjoint()) * c64(0.5, 0.0))
    }

    /// (A - A†)/(2i), so that A = hermitian_part + i·anti_hermitian_part.
    pub fn anti_hermitian_part(&self) -> Self {
        CMatrix((&self.0 - self.0.adjoint()) * c64(0.0, -0.5))
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_one(&self) -> f64 {
        self.0.column_iter().map(|col| col.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Restriction to the rows and columns listed in `indices`, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        Self::from_fn(indices.len(), |r, c| self.0[(indices[r], indices[c])])
    }

    /// Block-diagonal direct sum `self ⊕ other`.
    pub fn direct_sum(&self, other: &CMatrix) -> Self {
        let (a, b) = (self.dim(), other.dim());
        Self::from_fn(a + b, |r, c| {
            if r < a && c < a {
                self.0[(r, c)]
            } else if r >= a && c >= a {
                other.0[(r - a, c - a)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn kron(&self, other: &CMatrix) -> Self {
        let (a, b) = (self.dim(), other.dim());
        Self::from_fn(a * b, |r, c| self.0[(r / b, c / b)] * other.0[(r % b, c % b)])
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        // column-major storage: accumulate column by column
        let data = self.0.as_slice();
        for (c, xc) in x.iter().enumerate() {
            let col = &data[c * n..(c + 1) * n];
            for (yr, a) in y.iter_mut().zip(col) {
                *yr += a * xc;
            }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|r| (0..n).all(|c| r == c || self.0[(r, c)] == C64::new(0.0, 0.0)))
    }

    fn check_size(&self) -> Result<(), LinalgError> {
        if self.dim() > MAX_DIM {
            return Err(LinalgError::TooLarge { dim: self.dim() });
        }
        if !self.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        Ok(())
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.dim(), self.dim())?;
        for r in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|c| {
                    let z = self.0[(r, c)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.0[idx]
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 * &rhs.0)
    }
}

impl Mul for CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: CMatrix) -> CMatrix {
        CMatrix(self.0 * rhs.0)
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 + &rhs.0)
    }
}

impl Add for CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: CMatrix) -> CMatrix {
        CMatrix(self.0 + rhs.0)
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &'a CMatrix) -> CMatrix {
        CMatrix(&self.0 - &rhs.0)
    }
}

impl Sub for CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: CMatrix) -> CMatrix {
        CMatrix(self.0 - rhs.0)
    }
}

// Padé(13) coefficients for scaling and squaring (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential e^A by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn mat_exp(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    a.check_size()?;
    let n = a.dim();
    let norm = a.norm_one();
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a.0.clone() * c64(0.5_f64.powi(s), 0.0);

    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| c64(PADE13[k], 0.0);

    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(LinalgError::Singular)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(CMatrix(r))
}

/// Eigen-decomposition of a Hermitian matrix: eigenvalues in descending
/// order and the matching eigenvectors as columns.
pub fn herm_eigen(a: &CMatrix) -> Result<(Vec<f64>, CMatrix), LinalgError> {
    a.check_size()?;
    let dev = a.hermiticity_error();
    if dev > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { deviation: dev });
    }
    let eig = SymmetricEigen::new(a.hermitian_part().0);
    let mut order: Vec<usize> = (0..a.dim()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(a.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Eigenvalues of a Hermitian matrix in descending order.
pub fn herm_eigenvalues(a: &CMatrix) -> Result<Vec<f64>, LinalgError> {
    herm_eigen(a).map(|(v, _)| v)
}

/// Principal square root of a Hermitian positive semidefinite matrix.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero before taking the root.
pub fn herm_psd_sqrt(a: &CMatrix, tol: f64) -> Result<CMatrix, LinalgError> {
    let (values, vectors) = herm_eigen(a)?;
    if let Some(&lowest) = values.last() {
        if lowest < -tol {
            return Err(LinalgError::NotPsd { eigenvalue: lowest, tol });
        }
    }
    let roots: Vec<C64> = values.iter().map(|&l| c64(l.max(0.0).sqrt(), 0.0)).collect();
    let d = CMatrix::from_diagonal(&roots);
    Ok((&(&vectors * &d) * &vectors.adjoint()).hermitian_part())
}

/// Singular values of a square complex matrix, descending.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>, LinalgError> {
    a.check_size()?;
    let mut s: Vec<f64> = a.0.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Projects a Hermitian matrix onto the positive semidefinite cone by
/// zeroing its negative eigenvalues.
pub fn psd_projection(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    let (values, vectors) = herm_eigen(a)?;
    let clipped: Vec<C64> = values.iter().map(|&l| c64(l.max(0.0), 0.0)).collect();
    let d = CMatrix::from_diagonal(&clipped);
    Ok((&(&vectors * &d) * &vectors.adjoint()).hermitian_part())
}

/// Eigenvalues of a general complex matrix via the complex Schur form,
/// ordered by descending real part, ties by descending imaginary part.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>, LinalgError> {
    a.check_size()?;
    let schur = nalgebra::Schur::new(a.0.clone());
    let (_, t) = schur.unpack();
    let mut vals: Vec<C64> = (0..a.dim()).map(|i| t[(i, i)]).collect();
    sort_eigenvalues(&mut vals);
    Ok(vals)
}

/// Sorts by descending real part, ties broken by descending imaginary part.
pub fn sort_eigenvalues(vals: &mut [C64]) {
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Singular value decomposition of a 2×2 complex matrix.
#[derive(Debug, Clone)]
pub struct Svd2 {
    pub u: CMatrix,
    pub singular_values: [f64; 2],
    pub v: CMatrix,
}

/// Unit vector orthogonal to the unit vector `v` in C².
fn complement(v: [C64; 2]) -> [C64; 2] {
    [-v[1].conj(), v[0].conj()]
}

/// Closed-form SVD `M = U·diag(s₁, s₂)·V†` of a 2×2 matrix, s₁ ≥ s₂ ≥ 0.
///
/// The leading left singular vector comes from the 2×2 Hermitian eigenproblem
/// of M·M†; the second singular pair is built as the orthogonal complement,
/// which keeps both U and V unitary to rounding even when s₂ ≪ s₁.
pub fn svd_2x2(m: &CMatrix) -> Result<Svd2, LinalgError> {
    if m.dim() != 2 {
        return Err(LinalgError::WrongDimension { expected: 2, found: m.dim() });
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mmh = m * &m.adjoint();
    let a = mmh[(0, 0)].re;
    let d = mmh[(1, 1)].re;
    let b = mmh[(0, 1)];
    let half_gap = 0.5 * (a - d);
    let radius = (half_gap * half_gap + b.norm_sqr()).sqrt();
    let top = 0.5 * (a + d) + radius;

    // Eigenvector of [[a, b], [b*, d]] for the top eigenvalue. Both candidate
    // forms are valid; pick the better-conditioned one.
    let u1 = if b.norm() <= f64::EPSILON * (a.abs() + d.abs()) {
        if a >= d {
            [c64(1.0, 0.0), c64(0.0, 0.0)]
        } else {
            [c64(0.0, 0.0), c64(1.0, 0.0)]
        }
    } else {
        let cand1 = [b, c64(top - a, 0.0)];
        let cand2 = [c64(top - d, 0.0), b.conj()];
        let n1 = (cand1[0].norm_sqr() + cand1[1].norm_sqr()).sqrt();
        let n2 = (cand2[0].norm_sqr() + cand2[1].norm_sqr()).sqrt();
        if n1 >= n2 {
            [cand1[0] / n1, cand1[1] / n1]
        } else {
            [cand2[0] / n2, cand2[1] / n2]
        }
    };

    // v1 = M† u1 / s1
    let mh = m.adjoint();
    let w = mh.mul_vec(&u1);
    let s1 = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    let v1 = if s1 > 0.0 {
        [w[0] / s1, w[1] / s1]
    } else {
        [c64(1.0, 0.0), c64(0.0, 0.0)]
    };
    let v2 = complement(v1);
    let c = complement(u1);
    let mv2 = m.mul_vec(&v2);
    let proj = c[0].conj() * mv2[0] + c[1].conj() * mv2[1];
    let s2 = proj.norm();
    let phase = if s2 > 0.0 { proj / s2 } else { c64(1.0, 0.0) };
    let u2 = [c[0] * phase, c[1] * phase];

    let u = CMatrix::from_rows(&[&[u1[0], u2[0]], &[u1[1], u2[1]]]);
    let v = CMatrix::from_rows(&[&[v1[0], v2[0]], &[v1[1], v2[1]]]);
    Ok(Svd2 { u, singular_values: [s1, s2], v })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_x() -> CMatrix {
        CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&CMatrix::zeros(4)).unwrap();
        assert!(e.max_abs_diff(&CMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let a = CMatrix::from_diagonal(&[c64(-1.0, 0.0), c64(-2.0, 0.0)]);
        let e = mat_exp(&a).unwrap();
        assert!((e[(0, 0)].re - (-1.0_f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)].re - (-2.0_f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn exp_of_quarter_turn_about_x() {
        let a = pauli_x().scale(c64(0.0, -std::f64::consts::FRAC_PI_2));
        let e = mat_exp(&a).unwrap();
        let expected = pauli_x().scale(c64(0.0, -1.0));
        assert!(e.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn exp_rejects_oversized_and_nonfinite() {
        assert_eq!(mat_exp(&CMatrix::zeros(17)), Err(LinalgError::TooLarge { dim: 17 }));
        let mut a = CMatrix::zeros(2);
        a[(0, 1)] = c64(f64::NAN, 0.0);
        assert_eq!(mat_exp(&a), Err(LinalgError::NonFinite));
    }

    #[test]
    fn exp_handles_large_norm_by_scaling() {
        let a = CMatrix::from_diagonal(&[c64(-40.0, 3.0), c64(10.0, -2.0)]);
        let e = mat_exp(&a).unwrap();
        let want = c64(10.0, -2.0).exp();
        assert!((e[(1, 1)] - want).norm() / want.norm() < 1e-12);
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let s = herm_psd_sqrt(&CMatrix::identity(3), DEFAULT_PSD_TOL).unwrap();
        assert!(s.max_abs_diff(&CMatrix::identity(3)) < 1e-14);
        let d = CMatrix::from_real_rows(&[&[4.0, 0.0], &[0.0, 9.0]]);
        let s = herm_psd_sqrt(&d, DEFAULT_PSD_TOL).unwrap();
        assert!(s.max_abs_diff(&CMatrix::from_real_rows(&[&[2.0, 0.0], &[0.0, 3.0]])) < 1e-14);
    }

    #[test]
    fn sqrt_clamps_small_negative_eigenvalues() {
        let d = CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1e-10]]);
        let s = herm_psd_sqrt(&d, 1e-8).unwrap();
        assert!(s[(1, 1)].norm() < 1e-15);
    }

    #[test]
    fn sqrt_rejects_negative_and_non_hermitian() {
        let d = CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1e-3]]);
        assert!(matches!(herm_psd_sqrt(&d, 1e-8), Err(LinalgError::NotPsd { .. })));
        let nh = CMatrix::from_real_rows(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(herm_psd_sqrt(&nh, 1e-8), Err(LinalgError::NotHermitian { .. })));
    }

    #[test]
    fn svd_of_identity_and_swap() {
        let id = svd_2x2(&CMatrix::identity(2)).unwrap();
        assert_eq!(id.singular_values, [1.0, 1.0]);
        let x = svd_2x2(&pauli_x()).unwrap();
        assert!((x.singular_values[0] - 1.0).abs() < 1e-15);
        assert!((x.singular_values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_of_rank_one() {
        let m = CMatrix::from_rows(&[&[c64(1.0, 1.0), c64(2.0, 0.0)], &[c64(0.5, 0.5), c64(1.0, 0.0)]]);
        let svd = svd_2x2(&m).unwrap();
        assert!(svd.singular_values[1] < 1e-14);
        let s = CMatrix::from_diagonal(&[c64(svd.singular_values[0], 0.0), c64(svd.singular_values[1], 0.0)]);
        let back = &(&svd.u * &s) * &svd.v.adjoint();
        assert!(back.max_abs_diff(&m) < 1e-14);
    }

    #[test]
    fn svd_rejects_wrong_dimension() {
        assert!(matches!(svd_2x2(&CMatrix::identity(3)), Err(LinalgError::WrongDimension { .. })));
    }

    #[test]
    fn general_eigenvalues_of_triangular() {
        let m = CMatrix::from_rows(&[&[c64(1.0, 2.0), c64(5.0, 0.0)], &[c64(0.0, 0.0), c64(3.0, -1.0)]]);
        let ev = eigenvalues(&m).unwrap();
        assert!((ev[0] - c64(3.0, -1.0)).norm() < 1e-12);
        assert!((ev[1] - c64(1.0, 2.0)).norm() < 1e-12);
    }
}
