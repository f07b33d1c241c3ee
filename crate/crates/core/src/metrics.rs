//! Observables: populations, concurrence, fidelity, reference evolutions
//! and timescale extraction from sampled series.

use thiserror::Error;

use crate::linalg::{c64, herm_psd_sqrt, mat_exp, singular_values, CMatrix, LinalgError, C64, DEFAULT_PSD_TOL};
use crate::model::{build_hamiltonian, w_state, ModelError, SystemSpec};
use crate::state::{DensityMatrix, QuantumState, StateVector};

/// Default absolute population spread below which populations count as equal.
pub const DEFAULT_BALANCE_TOL: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("expected dimension {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("trace {0} differs from 1")]
    Trace(f64),
    #[error("state fully decayed at t = {time} (norm {norm:e})")]
    Degenerate { time: f64, norm: f64 },
    #[error("t must be finite and non-negative (got {0})")]
    Time(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A sampled observable with one standard error per time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ObservableSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        let stderr = vec![f64::NAN; values.len()];
        ObservableSeries { times, values, stderr }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation at `t`, clamped to the sampled range.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        interpolate(&self.times, &self.values, t)
    }
}

pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> Option<f64> {
    let (first, last) = (*times.first()?, *times.last()?);
    if t <= first {
        return values.first().copied();
    }
    if t >= last {
        return values.last().copied();
    }
    let k = times.partition_point(|&x| x <= t);
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    Some(values[k - 1] * (1.0 - w) + values[k] * w)
}

pub fn populations<S: QuantumState + ?Sized>(state: &S) -> Vec<f64> {
    state.populations()
}

fn check_trace(rho: &DensityMatrix) -> Result<(), MetricsError> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-9 {
        return Err(MetricsError::Trace(tr));
    }
    Ok(())
}

/// ρ̃ = (σ_y⊗σ_y) ρ* (σ_y⊗σ_y).
pub fn spin_flip(rho: &CMatrix) -> CMatrix {
    let sy = CMatrix::from_rows(&[&[c64(0.0, 0.0), c64(0.0, -1.0)], &[c64(0.0, 1.0), c64(0.0, 0.0)]]);
    let yy = sy.kron(&sy);
    &(&yy * &rho.conj()) * &yy
}

/// Wootters concurrence max{0, τ₁ − τ₂ − τ₃ − τ₄}, with τᵢ the descending
/// eigenvalues of R = √(√ρ ρ̃ √ρ).
pub fn concurrence(rho: &DensityMatrix) -> Result<f64, MetricsError> {
    if rho.dim() != 4 {
        return Err(MetricsError::Dimension { expected: 4, found: rho.dim() });
    }
    check_trace(rho)?;
    // R² = (√ρ √ρ̃)(√ρ √ρ̃)†, so the eigenvalues of R are the singular
    // values of √ρ √ρ̃. Avoids a second square root near zero.
    let sqrt_rho = herm_psd_sqrt(rho.matrix(), DEFAULT_PSD_TOL)?;
    let tau = singular_values(&(&sqrt_rho * &spin_flip(&sqrt_rho)))?;
    Ok((tau[0] - tau[1] - tau[2] - tau[3]).max(0.0))
}

/// Uhlmann fidelity F = (Tr √(√ρ_t ρ √ρ_t))².
pub fn uhlmann_fidelity(rho_t: &DensityMatrix, rho: &DensityMatrix) -> Result<f64, MetricsError> {
    if rho_t.dim() != rho.dim() {
        return Err(MetricsError::Dimension { expected: rho_t.dim(), found: rho.dim() });
    }
    // Tr √(√ρ_t ρ √ρ_t) is the trace norm of √ρ_t √ρ.
    let a = herm_psd_sqrt(rho_t.matrix(), DEFAULT_PSD_TOL)?;
    let b = herm_psd_sqrt(rho.matrix(), DEFAULT_PSD_TOL)?;
    let root_sum: f64 = singular_values(&(&a * &b))?.iter().sum();
    Ok(root_sum * root_sum)
}

/// ⟨W|ρ|W⟩ for the n-qubit W state.
pub fn w_state_fidelity(rho: &DensityMatrix, n_qubits: usize) -> Result<f64, MetricsError> {
    let w = w_state(n_qubits);
    if rho.dim() != w.len() {
        return Err(MetricsError::Dimension { expected: w.len(), found: rho.dim() });
    }
    let rw = rho.matrix().mul_vec(&w);
    Ok(w.iter().zip(&rw).map(|(a, b)| a.conj() * b).sum::<C64>().re)
}

/// |φ(t)⟩ = e^{−iHt}ψ₀ / ‖e^{−iHt}ψ₀‖, the evolution without noise or jumps.
pub fn no_jump_state(spec: &SystemSpec, t: f64, psi0: &StateVector) -> Result<StateVector, MetricsError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(MetricsError::Time(t));
    }
    let h = build_hamiltonian(spec)?;
    no_jump_state_with(&h, t, psi0)
}

fn no_jump_state_with(h: &CMatrix, t: f64, psi0: &StateVector) -> Result<StateVector, MetricsError> {
    if psi0.dim() != h.dim() {
        return Err(MetricsError::Dimension { expected: h.dim(), found: psi0.dim() });
    }
    let u = mat_exp(&h.scale(c64(0.0, -t)))?;
    let phi = u.mul_vec(psi0.amplitudes());
    let norm = phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm >= 1e-300) {
        return Err(MetricsError::Degenerate { time: t, norm });
    }
    Ok(StateVector::normalized(phi).expect("norm checked above"))
}

pub fn no_jump_reference(spec: &SystemSpec, t: f64, psi0: &StateVector) -> Result<DensityMatrix, MetricsError> {
    Ok(no_jump_state(spec, t, psi0)?.projector())
}

/// No-jump reference states at every time in `times`.
pub fn no_jump_series(spec: &SystemSpec, times: &[f64], psi0: &StateVector) -> Result<Vec<StateVector>, MetricsError> {
    let h = build_hamiltonian(spec)?;
    times
        .iter()
        .map(|&t| {
            if !(t.is_finite() && t >= 0.0) {
                return Err(MetricsError::Time(t));
            }
            no_jump_state_with(&h, t, psi0)
        })
        .collect()
}

/// Earliest time at which the populations listed in `subset` differ by less
/// than `tol`, refined by linear interpolation of the spread between the
/// bracketing samples.
pub fn balance_time(series: &[ObservableSeries], subset: &[usize], tol: f64) -> Option<f64> {
    let first = series.get(*subset.first()?)?;
    let rows: Vec<&[f64]> = subset.iter().map(|&i| series.get(i).map(|s| s.values.as_slice())).collect::<Option<_>>()?;
    balance_time_values(&first.times, &rows, tol)
}

/// [`balance_time`] on raw value rows sharing one time grid.
pub fn balance_time_values(times: &[f64], rows: &[&[f64]], tol: f64) -> Option<f64> {
    let spread = |k: usize| {
        let (lo, hi) = rows
            .iter()
            .map(|r| r[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        hi - lo
    };
    let k = (0..times.len()).find(|&k| spread(k) < tol)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (s0, s1) = (spread(k - 1), spread(k));
    let w = (s0 - tol) / (s0 - s1);
    Some(times[k - 1] + w * (times[k] - times[k - 1]))
}

/// Balance time read directly off a density-matrix series.
pub fn balance_time_states(times: &[f64], states: &[DensityMatrix], subset: &[usize], tol: f64) -> Option<f64> {
    let rows: Vec<Vec<f64>> = subset
        .iter()
        .map(|&i| states.iter().map(|r| r.matrix()[(i, i)].re).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    balance_time_values(times, &refs, tol)
}

/// Maximum of a sampled curve, refined by the vertex of the parabola through
/// the maximal sample and its two neighbours. Ties go to the earliest sample.
pub fn peak_concurrence(series: &ObservableSeries) -> Option<(f64, f64)> {
    peak_of(&series.times, &series.values)
}

pub fn peak_of(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let mut k = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[k] {
            k = i;
        }
    }
    let y1 = *values.get(k)?;
    if k == 0 || k + 1 >= values.len() {
        return Some((times[k], y1));
    }
    let (x0, x1, x2) = (times[k - 1], times[k], times[k + 1]);
    let (y0, y2) = (values[k - 1], values[k + 1]);
    // Vertex of the Lagrange parabola through the three points.
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let a = (d1 - d0) / (x2 - x0);
    if !(a < 0.0) {
        return Some((x1, y1));
    }
    let b = d0 - a * (x0 + x1);
    let xv = -b / (2.0 * a);
    let yv = y1 + a * (xv - x1) * (xv - x1) + (2.0 * a * x1 + b) * (xv - x1);
    Some((xv, yv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bell() -> StateVector {
        StateVector::normalized(vec![c64(0.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]).unwrap()
    }

    fn werner(p: f64) -> DensityMatrix {
        let phi = StateVector::normalized(vec![c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0)]).unwrap();
        let m = &phi.projector().matrix().scale_real(p) + &CMatrix::identity(4).scale_real((1.0 - p) / 4.0);
        DensityMatrix::try_from_matrix(m).unwrap()
    }

    #[test]
    fn population_examples() {
        assert_eq!(populations(&StateVector::first_excited(2)), vec![0.0, 0.0, 1.0, 0.0]);
        let p = populations(&bell());
        assert!((p[1] - 0.5).abs() < 1e-15 && (p[2] - 0.5).abs() < 1e-15);
        assert_eq!(populations(&DensityMatrix::maximally_mixed(4)), vec![0.25; 4]);
    }

    #[test]
    fn concurrence_examples() {
        assert!((concurrence(&bell().projector()).unwrap() - 1.0).abs() < 1e-7);
        assert!(concurrence(&StateVector::first_excited(2).projector()).unwrap() < 1e-7);
        // (3p − 1)/2 at p = 0.8
        assert!((concurrence(&werner(0.8)).unwrap() - 0.7).abs() < 1e-8);
        assert!(matches!(
            concurrence(&DensityMatrix::maximally_mixed(2)),
            Err(MetricsError::Dimension { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn fidelity_examples() {
        let a = StateVector::first_excited(2).projector();
        assert!((uhlmann_fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = StateVector::basis(4, 1).unwrap().projector();
        assert!(uhlmann_fidelity(&a, &b).unwrap().abs() < 1e-12);
        assert!((uhlmann_fidelity(&a, &bell().projector()).unwrap() - 0.5).abs() < 1e-9);
        assert!(uhlmann_fidelity(&a, &DensityMatrix::maximally_mixed(2)).is_err());
    }

    #[test]
    fn w_fidelity() {
        let w = StateVector::normalized(w_state(3)).unwrap();
        assert!((w_state_fidelity(&w.projector(), 3).unwrap() - 1.0).abs() < 1e-14);
        let e = StateVector::first_excited(3).projector();
        assert!((w_state_fidelity(&e, 3).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn reference_at_zero_is_initial_state() {
        let spec = SystemSpec::pair(0.1, 2.0, 0.5, 0.0);
        let psi0 = StateVector::first_excited(2);
        let r = no_jump_reference(&spec, 0.0, &psi0).unwrap();
        assert!(r.matrix().max_abs_diff(psi0.projector().matrix()) < 1e-15);
        assert!(matches!(no_jump_reference(&spec, -1.0, &psi0), Err(MetricsError::Time(_))));
    }

    #[test]
    fn equal_rates_reach_a_bell_state() {
        let j = 0.1;
        let spec = SystemSpec::pair(j, 0.5, 0.5, 0.0);
        let psi0 = StateVector::first_excited(2);
        let t = PI / (4.0 * j);
        let r = no_jump_reference(&spec, t, &psi0).unwrap();
        // (|10⟩ − i|01⟩)/√2
        let bell = StateVector::normalized(vec![c64(0.0, 0.0), c64(0.0, -1.0), c64(1.0, 0.0), c64(0.0, 0.0)]).unwrap();
        assert!(r.matrix().max_abs_diff(bell.projector().matrix()) < 1e-12);
        assert!((concurrence(&r).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn decay_to_zero_is_reported() {
        let spec = SystemSpec::pair(0.1, 2.0, 0.5, 0.0);
        let err = no_jump_reference(&spec, 1e4, &StateVector::first_excited(2)).unwrap_err();
        assert!(matches!(err, MetricsError::Degenerate { .. }));
    }

    #[test]
    fn balance_time_constructed_crossing() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let p1 = ObservableSeries::new(times.clone(), times.iter().map(|t| t / 10.0).collect());
        let p2 = ObservableSeries::new(times.clone(), times.iter().map(|t| 1.0 - t / 10.0).collect());
        let t = balance_time(&[p1, p2], &[0, 1], DEFAULT_BALANCE_TOL).unwrap();
        assert!((t - 5.0).abs() <= 0.5, "{t}");
        let lo = ObservableSeries::new(times.clone(), vec![0.2; times.len()]);
        let hi = ObservableSeries::new(times.clone(), vec![0.7; times.len()]);
        assert_eq!(balance_time(&[lo, hi], &[0, 1], DEFAULT_BALANCE_TOL), None);
    }

    #[test]
    fn balance_time_of_equal_rate_exchange() {
        // Populations cos²(Jt) and sin²(Jt) meet at Jt = π/4.
        let j = 0.1;
        let spec = SystemSpec::pair(j, 0.5, 0.5, 0.0);
        let times: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.01).collect();
        let states: Vec<DensityMatrix> = no_jump_series(&spec, &times, &StateVector::first_excited(2))
            .unwrap()
            .iter()
            .map(StateVector::projector)
            .collect();
        let t = balance_time_states(&times, &states, &[1, 2], DEFAULT_BALANCE_TOL).unwrap();
        let exact = PI / (4.0 * j);
        assert!((t / exact - 1.0).abs() < 0.02, "{t} vs {exact}");
    }

    #[test]
    fn peak_examples() {
        let single = ObservableSeries::new(vec![1.5], vec![0.4]);
        assert_eq!(peak_concurrence(&single), Some((1.5, 0.4)));
        let times: Vec<f64> = (0..=60).map(|k| k as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 - (t - 3.3).powi(2)).collect();
        let (tp, cp) = peak_concurrence(&ObservableSeries::new(times, values)).unwrap();
        assert!((tp - 3.3).abs() < 1e-3);
        assert!((cp - 1.0).abs() < 1e-9);
        let tie = ObservableSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(peak_concurrence(&tie).unwrap().0, 1.0);
    }

    #[test]
    fn equal_rate_peak_concurrence() {
        let j = 0.1;
        let spec = SystemSpec::pair(j, 0.5, 0.5, 0.0);
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.02).collect();
        let values = no_jump_series(&spec, &times, &StateVector::first_excited(2))
            .unwrap()
            .iter()
            .map(|s| concurrence(&s.projector()).unwrap())
            .collect();
        let (tp, cp) = peak_concurrence(&ObservableSeries::new(times, values)).unwrap();
        assert!((cp - 1.0).abs() < 1e-3);
        assert!((tp - PI / (4.0 * j)).abs() < 0.05);
    }

    #[test]
    fn interpolation() {
        let s = ObservableSeries::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0]);
        assert_eq!(s.interpolate(0.5), Some(1.0));
        assert_eq!(s.interpolate(-1.0), Some(0.0));
        assert_eq!(s.interpolate(5.0), Some(4.0));
    }
}
