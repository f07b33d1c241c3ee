//! Compilation of the two-qubit evolution onto a single-photon
//! interferometer built from beam displacers and wave plates.
//!
//! The photon's path (rails L, R) and polarization (H, V) carry the two
//! qubits. Optical mode `2·rail + pol` (L = 0, R = 1, H = 0, V = 1) is
//! identified with the computational basis index of the same value, so the
//! single-excitation subspace span{|01⟩, |10⟩} lives on modes (L,V) and (R,H).
//!
//! Each step propagator is written as K·T·M·T·P, where K, P and T are fixed
//! permutation-like gates and M = |L⟩⟨L|⊗A + |R⟩⟨R|⊗V. The L-arm operator
//! A = U_L·X is the 2×2 block propagator followed by a polarization flip;
//! with that arm the product reproduces the block exactly. A is then split
//! into two QWP–HWP–QWP rotations around a polarization-dependent loss.
//!
//! Matrix comparisons here ignore global phase.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c64, mat_exp, svd_2x2, CMatrix, LinalgError, C64};
use crate::model::{block_from_rates, build_hamiltonian, jump_diagonals, ModelError, SystemSpec};
use crate::trajectory::NoiseStream;

pub const FORMAT_VERSION: u32 = 1;
/// Largest tolerated block residual of a factorization.
pub const FACTOR_TOL: f64 = 1e-6;
/// Largest tolerated residual of a wave-plate fit.
pub const FIT_TOL: f64 = 1e-8;
const CONTRACTION_TOL: f64 = 1e-9;

/// Modes spanned by |01⟩ and |10⟩.
pub const SINGLE_EXCITATION_MODES: [usize; 2] = [1, 2];
/// Optical mode carrying each computational basis state for full-space
/// verification: |00⟩ and |11⟩ trade places, the single-excitation states
/// keep theirs.
pub const FULL_SPACE_ENCODING: [usize; 4] = [3, 1, 2, 0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotonicError {
    #[error("photonic compilation requires two qubits (got {0})")]
    Unsupported(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("singular value {0} exceeds 1: loss plates cannot amplify")]
    NotPhysical(f64),
    #[error("wave-plate fit residual {0:e} above tolerance")]
    FitFailure(f64),
    #[error("factorization residual {residual:e} exceeds tolerance")]
    Mismatch { residual: f64, network: CMatrix, target: CMatrix },
    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<PhotonicError> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Quarter-wave plate with fast axis at θ (radians).
pub fn qwp(theta: f64) -> CMatrix {
    let (s, c) = theta.sin_cos();
    let off = c64(1.0, -1.0) * (c * s);
    CMatrix::from_rows(&[&[c64(c * c, s * s), off], &[off, c64(s * s, c * c)]])
}

/// Half-wave plate at φ (radians).
pub fn hwp(phi: f64) -> CMatrix {
    let (s, c) = (2.0 * phi).sin_cos();
    CMatrix::from_real_rows(&[&[c, s], &[s, -c]])
}

/// Polarization-dependent loss [[0, sin 2θ_V], [sin 2θ_H, 0]].
pub fn loss(theta_v: f64, theta_h: f64) -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, (2.0 * theta_v).sin()], &[(2.0 * theta_h).sin(), 0.0]])
}

/// Q(θ)·H(φ)·Q(α): light meets Q(α) first.
pub fn rotation(theta: f64, phi: f64, alpha: f64) -> CMatrix {
    &(&qwp(theta) * &hwp(phi)) * &qwp(alpha)
}

fn pauli_x() -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

/// max |e^{iχ}·a − b| with χ chosen to align the largest-magnitude entry of
/// `b` with the matching entry of `a`.
pub fn phase_aligned_residual(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = b.dim();
    let (mut best, mut best_abs) = ((0, 0), -1.0);
    for r in 0..n {
        for c in 0..n {
            if b[(r, c)].norm() > best_abs {
                best_abs = b[(r, c)].norm();
                best = (r, c);
            }
        }
    }
    let (ea, eb) = (a[best], b[best]);
    let phase = if ea.norm() > 0.0 && eb.norm() > 0.0 { (eb / ea) / (eb / ea).norm() } else { c64(1.0, 0.0) };
    a.scale(phase).max_abs_diff(b)
}

fn require_pair(spec: &SystemSpec) -> Result<(), PhotonicError> {
    spec.validate()?;
    if spec.n_qubits != 2 {
        return Err(PhotonicError::Unsupported(spec.n_qubits));
    }
    Ok(())
}

/// Effective dissipation rates under the noise sample ξ:
/// Γ′ⱼ = Γⱼ − ℓⱼ²/2 + ξⱼℓⱼ with ℓⱼ² = 2γⱼΓⱼ².
pub fn effective_rates(spec: &SystemSpec, xi: &[f64]) -> Vec<f64> {
    (0..spec.n_qubits)
        .map(|j| {
            let ell2 = spec.dephasing_rate(j);
            spec.dissipation[j] - 0.5 * ell2 + xi[j] * ell2.sqrt()
        })
        .collect()
}

/// H_ξ = H + (i/2)Σⱼ Lⱼ†Lⱼ − iΣⱼ ξⱼLⱼ.
pub fn hxi_matrix(spec: &SystemSpec, xi: &[f64]) -> Result<CMatrix, PhotonicError> {
    require_pair(spec)?;
    if xi.len() != spec.n_qubits {
        return Err(PhotonicError::InvalidArgument(format!(
            "expected {} noise samples, got {}",
            spec.n_qubits,
            xi.len()
        )));
    }
    let mut h = build_hamiltonian(spec)?;
    for (j, d) in jump_diagonals(spec)?.iter().enumerate() {
        for (b, &l) in d.iter().enumerate() {
            h[(b, b)] += c64(0.0, 0.5 * l * l - xi[j] * l);
        }
    }
    Ok(h)
}

/// U_ξ(τ) = Π_k exp(−i H_ξ(t_k) δt), later factors on the left. Row `k` of
/// `noise` is the sample used on the k-th slice.
pub fn trotter_product(spec: &SystemSpec, noise: &[Vec<f64>], tau: f64, n_steps: usize) -> Result<CMatrix, PhotonicError> {
    if n_steps == 0 || !(tau.is_finite() && tau > 0.0) {
        return Err(PhotonicError::InvalidArgument(format!("need N ≥ 1 and τ > 0 (got N = {n_steps}, τ = {tau})")));
    }
    if noise.len() != n_steps {
        return Err(PhotonicError::InvalidArgument(format!("expected {n_steps} noise rows, got {}", noise.len())));
    }
    let dt = tau / n_steps as f64;
    let mut u = CMatrix::identity(spec.dim());
    for xi in noise {
        let step = mat_exp(&hxi_matrix(spec, xi)?.scale(c64(0.0, -dt)))?;
        u = &step * &u;
    }
    Ok(u)
}

/// P: HWP(90°) on rail L, HWP(45°) on rail R.
pub fn gate_p() -> CMatrix {
    CMatrix::from_real_rows(&[
        &[-1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[0.0, 0.0, 1.0, 0.0],
    ])
}

/// K: HWP(45°) on rail L, HWP(0°) on rail R.
pub fn gate_k() -> CMatrix {
    CMatrix::from_real_rows(&[
        &[0.0, 1.0, 0.0, 0.0],
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0],
        &[0.0, 0.0, 0.0, -1.0],
    ])
}

/// T: HWP(45°) on rail L, a beam displacer exchanging the V modes, then
/// HWP(45°) on rail R.
pub fn gate_t() -> CMatrix {
    CMatrix::from_real_rows(&[
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0],
    ])
}

/// V = −[[0, 1], [e^{−(Γ₁+Γ₂)τ}, 0]] acting on rail R.
pub fn v_operator(gamma1: f64, gamma2: f64, tau: f64) -> CMatrix {
    CMatrix::from_real_rows(&[&[0.0, -1.0], &[-(-(gamma1 + gamma2) * tau).exp(), 0.0]])
}

/// Network K·T·M·T·P with M = A ⊕ V.
pub fn ksp_network(arm: &CMatrix, v: &CMatrix) -> CMatrix {
    let t = gate_t();
    &(&(&(&gate_k() * &t) * &arm.direct_sum(v)) * &t) * &gate_p()
}

/// Residual on the single-excitation modes.
pub fn block_residual(network: &CMatrix, target: &CMatrix) -> f64 {
    phase_aligned_residual(&network.submatrix(&SINGLE_EXCITATION_MODES), &target.submatrix(&SINGLE_EXCITATION_MODES))
}

/// Residual on the full space, reading the network through [`FULL_SPACE_ENCODING`].
pub fn full_space_residual(network: &CMatrix, target: &CMatrix) -> f64 {
    phase_aligned_residual(&network.submatrix(&FULL_SPACE_ENCODING), target)
}

#[derive(Debug, Clone)]
pub struct KspFactorization {
    pub k: CMatrix,
    pub p: CMatrix,
    pub t: CMatrix,
    pub m: CMatrix,
    pub u_l: CMatrix,
    pub v: CMatrix,
    /// e^{−iHτ}.
    pub target: CMatrix,
    pub network: CMatrix,
    pub residual: f64,
    pub full_space_residual: f64,
}

/// Factors e^{−iHτ} of a noiseless pair as K·T·M·T·P.
pub fn ksp_factor(spec: &SystemSpec, tau: f64) -> Result<KspFactorization, PhotonicError> {
    require_pair(spec)?;
    if spec.noise.iter().any(|&g| g != 0.0) {
        return Err(PhotonicError::InvalidArgument(
            "ksp_factor handles the noiseless case; use emit_program for noisy evolution".into(),
        ));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(PhotonicError::InvalidArgument(format!("τ must be non-negative (got {tau})")));
    }
    let (j, g1, g2) = (spec.coupling, spec.dissipation[0], spec.dissipation[1]);
    let target = mat_exp(&build_hamiltonian(spec)?.scale(c64(0.0, -tau)))?;
    let u_l = mat_exp(&block_from_rates(j, g1, g2).scale(c64(0.0, -tau)))?;
    let v = v_operator(g1, g2, tau);
    let arm = &u_l * &pauli_x();
    let m = arm.direct_sum(&v);
    let network = ksp_network(&arm, &v);
    let residual = block_residual(&network, &target);
    let full = full_space_residual(&network, &target);
    if !(residual <= FACTOR_TOL) {
        return Err(PhotonicError::Mismatch { residual, network, target });
    }
    Ok(KspFactorization {
        k: gate_k(),
        p: gate_p(),
        t: gate_t(),
        m,
        u_l,
        v,
        target,
        network,
        residual,
        full_space_residual: full,
    })
}

/// Plate angles in degrees realizing R(θ₂,φ₂,α₂)·L(θ_V,θ_H)·R(θ₁,φ₁,α₁).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePlateFit {
    pub theta1: f64,
    pub phi1: f64,
    pub alpha1: f64,
    pub theta_v: f64,
    pub theta_h: f64,
    pub theta2: f64,
    pub phi2: f64,
    pub alpha2: f64,
    pub residual: f64,
}

impl WavePlateFit {
    pub fn recompose(&self) -> CMatrix {
        let r1 = rotation(rad(self.theta1), rad(self.phi1), rad(self.alpha1));
        let r2 = rotation(rad(self.theta2), rad(self.phi2), rad(self.alpha2));
        &(&r2 * &loss(rad(self.theta_v), rad(self.theta_h))) * &r1
    }
}

fn wrap_degrees(deg: f64) -> f64 {
    let w = (deg + 90.0).rem_euclid(180.0) - 90.0;
    if w == -90.0 && deg > 0.0 {
        90.0
    } else {
        w
    }
}

/// Residual vector of Q(θ)H(φ)Q(α) − e^{iχ}W (real and imaginary parts).
fn rotation_residual(p: &Vector4<f64>, w: &CMatrix) -> [f64; 8] {
    let r = rotation(p[0], p[1], p[2]);
    let ph = C64::from_polar(1.0, p[3]);
    let mut out = [0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            let d = r[(i, j)] - ph * w[(i, j)];
            out[4 * i + 2 * j] = d.re;
            out[4 * i + 2 * j + 1] = d.im;
        }
    }
    out
}

fn sq_norm(r: &[f64; 8]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Levenberg–Marquardt on the 8 real residuals from one start.
fn lm_fit(w: &CMatrix, start: Vector4<f64>) -> (Vector4<f64>, f64) {
    let mut p = start;
    let mut r = rotation_residual(&p, w);
    let mut cost = sq_norm(&r);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if cost < 1e-30 {
            break;
        }
        let h = 1e-7;
        let mut jac = [[0.0; 4]; 8];
        for k in 0..4 {
            let mut pp = p;
            let mut pm = p;
            pp[k] += h;
            pm[k] -= h;
            let (rp, rm) = (rotation_residual(&pp, w), rotation_residual(&pm, w));
            for i in 0..8 {
                jac[i][k] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for i in 0..8 {
            for a in 0..4 {
                jtr[a] += jac[i][a] * r[i];
                for b in 0..4 {
                    jtj[(a, b)] += jac[i][a] * jac[i][b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj;
            for a in 0..4 {
                lhs[(a, a)] += lambda * (jtj[(a, a)] + 1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = p + step;
            let rc = rotation_residual(&cand, w);
            let cc = sq_norm(&rc);
            if cc < cost {
                p = cand;
                r = rc;
                let small = step.norm() < 1e-15;
                cost = cc;
                lambda = (lambda * 0.3).max(1e-15);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost.sqrt())
}

/// Plate angles (θ, φ, α) in radians with Q(θ)H(φ)Q(α) = e^{iχ}W.
fn fit_rotation(w: &CMatrix) -> (f64, f64, f64, f64) {
    let mut best = (Vector4::zeros(), f64::INFINITY);
    for &t in &[10.0, 55.0] {
        for &f in &[5.0, 30.0] {
            for &a in &[-20.0, 25.0] {
                let mut start = Vector4::new(rad(t), rad(f), rad(a), 0.0);
                // Start χ at its optimum for the initial angles.
                let r = rotation(start[0], start[1], start[2]);
                let overlap: C64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|ij| w[ij].conj() * r[ij]).sum();
                start[3] = overlap.arg();
                let (p, res) = lm_fit(w, start);
                if res < best.1 {
                    best = (p, res);
                }
                if best.1 < 1e-13 {
                    return (best.0[0], best.0[1], best.0[2], best.1);
                }
            }
        }
    }
    (best.0[0], best.0[1], best.0[2], best.1)
}

/// Splits a 2×2 contraction into QWP–HWP–QWP rotations around a
/// polarization-dependent loss, modulo global phase.
pub fn waveplate_fit(m2: &CMatrix) -> Result<WavePlateFit, PhotonicError> {
    if m2.dim() != 2 {
        return Err(LinalgError::WrongDimension { expected: 2, found: m2.dim() }.into());
    }
    let svd = svd_2x2(m2)?;
    let [s1, s2] = svd.singular_values;
    if s1 > 1.0 + CONTRACTION_TOL {
        return Err(PhotonicError::NotPhysical(s1));
    }
    // Diagonal phases D leave U·Σ·V† unchanged; pick them so that U·D has
    // a real non-negative diagonal.
    let d: Vec<C64> = (0..2)
        .map(|c| {
            let pivot = if svd.u[(c, c)].norm() > 1e-12 { svd.u[(c, c)] } else { svd.u[(1 - c, c)] };
            if pivot.norm() > 0.0 {
                pivot.conj() / pivot.norm()
            } else {
                c64(1.0, 0.0)
            }
        })
        .collect();
    let dm = CMatrix::from_diagonal(&d);
    let r2 = &svd.u * &dm;
    // L·X = diag(sin 2θ_V, sin 2θ_H), so R₁ = X·(V·D)† completes the SVD.
    let r1 = &pauli_x() * &(&svd.v * &dm).adjoint();
    let (t1, f1, a1, e1) = fit_rotation(&r1);
    let (t2, f2, a2, e2) = fit_rotation(&r2);
    let deg = |x: f64| wrap_degrees(x.to_degrees());
    let mut fit = WavePlateFit {
        theta1: deg(t1),
        phi1: deg(f1),
        alpha1: deg(a1),
        theta_v: 0.5 * s1.min(1.0).asin().to_degrees(),
        theta_h: 0.5 * s2.min(1.0).asin().to_degrees(),
        theta2: deg(t2),
        phi2: deg(f2),
        alpha2: deg(a2),
        residual: 0.0,
    };
    fit.residual = phase_aligned_residual(&fit.recompose(), m2);
    if !(fit.residual <= FIT_TOL) {
        return Err(PhotonicError::FitFailure(fit.residual.max(e1).max(e2)));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ElementKind {
    Qwp,
    Hwp,
    Bd,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rail {
    L,
    R,
    /// Elements spanning both rails (beam displacers).
    LR,
}

/// One optical element. Angles are in degrees: one for a wave plate,
/// (θ_V, θ_H) for a loss element, none for a beam displacer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalElement {
    pub kind: ElementKind,
    pub angles: Vec<f64>,
    pub rail: Rail,
    /// Position along the beam within the step, starting at 0.
    pub order: usize,
}

impl OpticalElement {
    /// 4×4 action on the optical modes.
    pub fn matrix(&self) -> CMatrix {
        let a = |i: usize| rad(self.angles[i]);
        let local = match self.kind {
            ElementKind::Qwp => qwp(a(0)),
            ElementKind::Hwp => hwp(a(0)),
            ElementKind::Loss => loss(a(0), a(1)),
            // Exchanges the V modes of the two rails.
            ElementKind::Bd => {
                return CMatrix::from_real_rows(&[
                    &[1.0, 0.0, 0.0, 0.0],
                    &[0.0, 0.0, 0.0, 1.0],
                    &[0.0, 0.0, 1.0, 0.0],
                    &[0.0, 1.0, 0.0, 0.0],
                ])
            }
        };
        let id = CMatrix::identity(2);
        match self.rail {
            Rail::L => local.direct_sum(&id),
            Rail::R => id.direct_sum(&local),
            Rail::LR => local.direct_sum(&local),
        }
    }
}

/// Verification mode for emitted steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verification {
    /// Compare on span{|01⟩, |10⟩}; V may be left as the identity.
    #[default]
    Block,
    /// Compare on the whole space through [`FULL_SPACE_ENCODING`]; V is realized.
    FullSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProgramOptions {
    /// Emit V as LOSS(θ_V, θ_H) followed by HWP(0°), HWP(90°) on rail R
    /// instead of leaving rail R empty.
    pub realize_v: bool,
    pub verification: Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramStep {
    pub step_index: usize,
    /// t_k = (k − ½)δt.
    pub midpoint: f64,
    /// Noise sample ξ per qubit used on this slice.
    pub xi: Vec<f64>,
    /// Uniform transmission factor applied when the slice would otherwise
    /// need gain; the step realizes attenuation × exp(−iH_ξδt).
    pub attenuation: f64,
    pub elements: Vec<OpticalElement>,
    pub residual: f64,
}

impl ProgramStep {
    /// Product of the element matrices in beam order.
    pub fn network(&self) -> CMatrix {
        self.elements.iter().fold(CMatrix::identity(4), |acc, e| &e.matrix() * &acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePlateProgram {
    pub format_version: u32,
    pub spec: SystemSpec,
    pub tau: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub options: ProgramOptions,
    pub steps: Vec<ProgramStep>,
}

impl WavePlateProgram {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("program is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Product of all step networks, later steps on the left.
    pub fn network(&self) -> CMatrix {
        self.steps.iter().fold(CMatrix::identity(4), |acc, s| &s.network() * &acc)
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

struct Emitter {
    elements: Vec<OpticalElement>,
}

impl Emitter {
    fn push(&mut self, kind: ElementKind, angles: &[f64], rail: Rail) {
        let order = self.elements.len();
        self.elements.push(OpticalElement { kind, angles: angles.to_vec(), rail, order });
    }

    fn gate_p(&mut self) {
        self.push(ElementKind::Hwp, &[90.0], Rail::L);
        self.push(ElementKind::Hwp, &[45.0], Rail::R);
    }

    fn gate_t(&mut self) {
        self.push(ElementKind::Hwp, &[45.0], Rail::L);
        self.push(ElementKind::Bd, &[], Rail::LR);
        self.push(ElementKind::Hwp, &[45.0], Rail::R);
    }

    fn gate_k(&mut self) {
        self.push(ElementKind::Hwp, &[45.0], Rail::L);
        self.push(ElementKind::Hwp, &[0.0], Rail::R);
    }

    fn arm(&mut self, f: &WavePlateFit) {
        self.push(ElementKind::Qwp, &[f.alpha1], Rail::L);
        self.push(ElementKind::Hwp, &[f.phi1], Rail::L);
        self.push(ElementKind::Qwp, &[f.theta1], Rail::L);
        self.push(ElementKind::Loss, &[f.theta_v, f.theta_h], Rail::L);
        self.push(ElementKind::Qwp, &[f.alpha2], Rail::L);
        self.push(ElementKind::Hwp, &[f.phi2], Rail::L);
        self.push(ElementKind::Qwp, &[f.theta2], Rail::L);
    }

    /// a·V = −L(θ_V, θ_H) with sin 2θ_V = a, sin 2θ_H = a·e^{−(Γ₁+Γ₂)δt}.
    /// HWP(90°)·HWP(0°) = −I supplies the sign when `negate` is set.
    fn v_arm(&mut self, scale: f64, decay: f64, negate: bool) {
        let half_asin = |x: f64| 0.5 * x.clamp(-1.0, 1.0).asin().to_degrees();
        self.push(ElementKind::Loss, &[half_asin(scale), half_asin(scale * decay)], Rail::R);
        if negate {
            self.push(ElementKind::Hwp, &[0.0], Rail::R);
            self.push(ElementKind::Hwp, &[90.0], Rail::R);
        }
    }
}

/// Compiles one slice exp(−iH_ξ δt) into optical elements.
pub fn compile_step(
    spec: &SystemSpec,
    xi: &[f64],
    dt: f64,
    step_index: usize,
    options: &ProgramOptions,
) -> Result<ProgramStep, PhotonicError> {
    let rates = effective_rates(spec, xi);
    let target = mat_exp(&hxi_matrix(spec, xi)?.scale(c64(0.0, -dt)))?;
    let u_l = mat_exp(&block_from_rates(spec.coupling, rates[0], rates[1]).scale(c64(0.0, -dt)))?;
    let arm = &u_l * &pauli_x();
    let decay = (-(rates[0] + rates[1]) * dt).exp();
    let realize_v = options.realize_v || options.verification == Verification::FullSpace;

    let mut gain = svd_2x2(&arm)?.singular_values[0];
    if realize_v {
        gain = gain.max(decay);
    }
    let attenuation = 1.0 / gain.max(1.0);
    let arm = arm.scale_real(attenuation);
    let fit = waveplate_fit(&arm)?;
    // Both rotations lie in SU(2) and L is real, so the fitted arm equals
    // ±A exactly. The R rail has to carry the same sign.
    let sign = arm_sign(&fit.recompose(), &arm);

    let mut em = Emitter { elements: Vec::new() };
    em.gate_p();
    em.gate_t();
    em.arm(&fit);
    if realize_v {
        em.v_arm(attenuation, decay, sign > 0.0);
    }
    em.gate_t();
    em.gate_k();
    let mut step = ProgramStep {
        step_index,
        midpoint: (step_index as f64 + 0.5) * dt,
        xi: xi.to_vec(),
        attenuation,
        elements: em.elements,
        residual: 0.0,
    };
    let network = step.network();
    let scaled = target.scale_real(attenuation);
    step.residual = match options.verification {
        Verification::Block => block_residual(&network, &scaled),
        Verification::FullSpace => full_space_residual(&network, &scaled),
    };
    if !(step.residual <= FACTOR_TOL) {
        return Err(PhotonicError::Mismatch { residual: step.residual, network, target: scaled });
    }
    Ok(step)
}

fn arm_sign(realized: &CMatrix, arm: &CMatrix) -> f64 {
    let (mut best, mut best_abs) = ((0, 0), -1.0);
    for r in 0..2 {
        for c in 0..2 {
            if arm[(r, c)].norm() > best_abs {
                best_abs = arm[(r, c)].norm();
                best = (r, c);
            }
        }
    }
    (realized[best] / arm[best]).re.signum()
}

/// Per-slice noise samples ξ = dW/δt for the path keyed by `seed`.
pub fn noise_samples(spec: &SystemSpec, tau: f64, n_steps: usize, seed: u64) -> Vec<Vec<f64>> {
    let dt = tau / n_steps as f64;
    let mut stream = NoiseStream::new(seed, 0, spec.n_qubits, dt);
    (0..n_steps)
        .map(|_| {
            let mut dw = vec![0.0; spec.n_qubits];
            stream.next_step(&mut dw);
            dw.iter().map(|w| w / dt).collect()
        })
        .collect()
}

/// Compiles U_ξ(τ) over `n_steps` slices along the noise path keyed by `seed`.
pub fn emit_program(
    spec: &SystemSpec,
    tau: f64,
    n_steps: usize,
    seed: u64,
    options: &ProgramOptions,
) -> Result<WavePlateProgram, PhotonicError> {
    require_pair(spec)?;
    if n_steps == 0 || !(tau.is_finite() && tau > 0.0) {
        return Err(PhotonicError::InvalidArgument(format!("need N ≥ 1 and τ > 0 (got N = {n_steps}, τ = {tau})")));
    }
    let dt = tau / n_steps as f64;
    let steps = noise_samples(spec, tau, n_steps, seed)
        .iter()
        .enumerate()
        .map(|(k, xi)| compile_step(spec, xi, dt, k, options).map_err(|e| PhotonicError::Step { step: k, source: Box::new(e) }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WavePlateProgram {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        tau,
        n_steps,
        seed,
        options: *options,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plate_matrices() {
        assert!(hwp(0.0).max_abs_diff(&CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])) < 1e-15);
        assert!(hwp(rad(45.0)).max_abs_diff(&pauli_x()) < 1e-15);
        assert!(qwp(0.0).max_abs_diff(&CMatrix::from_diagonal(&[c64(1.0, 0.0), c64(0.0, 1.0)])) < 1e-15);
        let l = loss(rad(45.0), rad(45.0));
        assert!(l.max_abs_diff(&pauli_x()) < 1e-15);
    }

    #[test]
    fn fixed_gates_match_their_plate_realizations() {
        let mut em = Emitter { elements: Vec::new() };
        em.gate_p();
        let p = ProgramStep { step_index: 0, midpoint: 0.0, xi: vec![], attenuation: 1.0, elements: em.elements, residual: 0.0 };
        assert!(p.network().max_abs_diff(&gate_p()) < 1e-15);
        let mut em = Emitter { elements: Vec::new() };
        em.gate_t();
        let t = ProgramStep { elements: em.elements, ..p.clone() };
        assert!(t.network().max_abs_diff(&gate_t()) < 1e-15);
        let mut em = Emitter { elements: Vec::new() };
        em.gate_k();
        let k = ProgramStep { elements: em.elements, ..p };
        assert!(k.network().max_abs_diff(&gate_k()) < 1e-15);
    }

    #[test]
    fn involutions() {
        let id = CMatrix::identity(4);
        assert_eq!(&gate_p() * &gate_p(), id);
        assert_eq!(&gate_k() * &gate_k(), id);
    }

    #[test]
    fn v_operator_entry() {
        let v = v_operator(2.0, 0.5, 1.0);
        assert!((v[(1, 0)].re + (-2.5f64).exp()).abs() < 1e-15);
        assert!((v[(1, 0)].re + 0.08208).abs() < 1e-5);
    }

    #[test]
    fn hxi_examples() {
        let quiet = SystemSpec::pair(0.1, 2.0, 0.5, 0.0);
        assert_eq!(hxi_matrix(&quiet, &[0.3, -0.2]).unwrap(), build_hamiltonian(&quiet).unwrap());
        let spec = SystemSpec::pair(0.1, 2.0, 0.5, 0.5);
        let h = hxi_matrix(&spec, &[1.0, 0.0]).unwrap();
        // |10⟩: −2i + (i/2)·4 − i·2
        assert!((h[(2, 2)] - c64(0.0, -2.0 + 2.0 - 2.0)).norm() < 1e-14);
        let h2 = hxi_matrix(&spec, &[-0.7, 3.0]).unwrap();
        assert_eq!(h[(1, 2)], h2[(1, 2)]);
        assert_eq!(h[(2, 1)], c64(0.1, 0.0));
    }

    #[test]
    fn trotter_commuting_case() {
        let spec = SystemSpec::pair(0.1, 1.1, 0.5, 0.0);
        let exact = mat_exp(&build_hamiltonian(&spec).unwrap().scale(c64(0.0, -3.0))).unwrap();
        for n in [1, 7, 50] {
            let u = trotter_product(&spec, &vec![vec![0.0, 0.0]; n], 3.0, n).unwrap();
            assert!(u.max_abs_diff(&exact) < 1e-10);
        }
    }

    #[test]
    fn ksp_reference_point() {
        let f = ksp_factor(&SystemSpec::pair(0.1, 1.1, 0.5, 0.0), 5.0).unwrap();
        assert!(f.residual < 1e-12);
        assert!(f.full_space_residual < 1e-12);
        assert!(ksp_factor(&SystemSpec::pair(0.1, 1.1, 0.5, 0.2), 5.0).is_err());
    }

    #[test]
    fn antidiagonal_fit() {
        let f = waveplate_fit(&pauli_x()).unwrap();
        assert!((f.theta_v - 45.0).abs() < 1e-9 && (f.theta_h - 45.0).abs() < 1e-9);
        assert!(f.residual < 1e-8);
    }

    #[test]
    fn fit_rejects_gain() {
        let m = CMatrix::identity(2).scale_real(1.1);
        assert!(matches!(waveplate_fit(&m), Err(PhotonicError::NotPhysical(_))));
    }

    #[test]
    fn block_propagator_fit() {
        let h1 = block_from_rates(0.1, 1.1, 0.5);
        let m = mat_exp(&h1.scale(c64(0.0, -2.0))).unwrap();
        let f = waveplate_fit(&m).unwrap();
        assert!(f.residual < 1e-8);
        assert!(phase_aligned_residual(&f.recompose(), &m) < 1e-8);
        for a in [f.theta1, f.phi1, f.alpha1, f.theta2, f.phi2, f.alpha2, f.theta_v, f.theta_h] {
            assert!((-90.0..=90.0).contains(&a));
        }
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_degrees(100.0), -80.0);
        assert_eq!(wrap_degrees(-100.0), 80.0);
        assert_eq!(wrap_degrees(90.0), 90.0);
        assert_eq!(wrap_degrees(-90.0), -90.0);
    }

    #[test]
    fn single_step_program_matches_propagator() {
        let spec = SystemSpec::pair(0.1, 1.1, 0.5, 0.0);
        let prog = emit_program(&spec, 2.0, 1, 3, &ProgramOptions::default()).unwrap();
        let exact = mat_exp(&build_hamiltonian(&spec).unwrap().scale(c64(0.0, -2.0))).unwrap();
        assert!(block_residual(&prog.network(), &exact) < 1e-6);
    }

    #[test]
    fn realized_v_passes_full_space_check() {
        let spec = SystemSpec::pair(0.1, 1.1, 0.5, 0.3);
        let opts = ProgramOptions { realize_v: true, verification: Verification::FullSpace };
        let prog = emit_program(&spec, 1.0, 8, 11, &opts).unwrap();
        assert!(prog.max_residual() < 1e-6);
    }

    #[test]
    fn json_round_trip() {
        let spec = SystemSpec::pair(0.1, 1.1, 0.5, 0.2);
        let prog = emit_program(&spec, 1.0, 4, 9, &ProgramOptions::default()).unwrap();
        let text = prog.to_json();
        assert_eq!(WavePlateProgram::from_json(&text).unwrap(), prog);
        assert_eq!(emit_program(&spec, 1.0, 4, 9, &ProgramOptions::default()).unwrap().to_json(), text);
    }
}
