//! Stochastic Schrödinger and master equation integrators and ensemble
//! averaging.
//!
//! Both equations are integrated with Euler–Maruyama in the Itô convention
//! and renormalized after every step. Noise for trajectory `k` is a pure
//! function of `(master_seed, k)`, and ensemble sums are reduced in a fixed
//! pairwise order, so results do not depend on how many workers run.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c64, psd_projection, CMatrix, LinalgError, C64};
use crate::metrics::ObservableSeries;
use crate::model::{build_hamiltonian, jump_operators, ModelError, SystemSpec};
use crate::state::{DensityMatrix, QuantumState, StateVector};

/// Number of contiguous trajectory batches used for jackknife error bars.
pub const DEFAULT_BATCHES: usize = 16;

/// Fraction of failed trajectories above which an ensemble is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("state norm {0:e} collapsed below 1e-12 before renormalization")]
    DegenerateNorm(f64),
    #[error("density-matrix trace {0:e} collapsed below 1e-12 before renormalization")]
    DegenerateTrace(f64),
    #[error("dimension mismatch: state has {state}, operator has {operator}")]
    Dimension { state: usize, operator: usize },
    #[error("expected {expected} noise increments, got {found}")]
    NoiseChannels { expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trajectory {traj_index} failed at t = {time}: {source}")]
pub struct TrajectoryError {
    pub traj_index: u64,
    pub time: f64,
    pub source: StepError,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial state has dimension {found}, system needs {expected}")]
    InitialState { expected: usize, found: usize },
    #[error("{failed} of {total} trajectories failed (limit 1%); first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: TrajectoryError },
}

/// Which stochastic equation to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sse,
    Sme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_traj: usize,
    pub master_seed: u64,
    pub scheme: Scheme,
    /// Include the deterministic ½L†L (SSE) or ½{L,{L,ρ}} (SME) drift.
    pub deterministic_channel: bool,
    pub sample_stride: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            dt: 1e-3,
            t_max: 20.0,
            n_traj: 1,
            master_seed: 0,
            scheme: Scheme::Sse,
            deterministic_channel: false,
            sample_stride: 10,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EnsembleError::Config(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(EnsembleError::Config(format!("t_max must be non-negative (got {})", self.t_max)));
        }
        if self.n_traj == 0 {
            return Err(EnsembleError::Config("n_traj must be at least 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(EnsembleError::Config("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// ceil(t_max / dt), tolerant to rounding in the quotient.
    pub fn n_steps(&self) -> usize {
        let q = self.t_max / self.dt;
        let r = q.round();
        if (q - r).abs() < 1e-9 * q.max(1.0) {
            r as usize
        } else {
            q.ceil() as usize
        }
    }

    /// Times at which states are recorded.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.n_steps())
            .step_by(self.sample_stride)
            .map(|k| k as f64 * self.dt)
            .collect()
    }
}

/// Per-trajectory source of Wiener increments dWⱼ ~ N(0, dt).
///
/// The generator is a ChaCha8 stream keyed by the master seed and selected
/// by the trajectory index; increments are drawn step by step, channel by
/// channel, so the value at (step, channel) is fixed by the key alone.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    n_channels: usize,
}

impl NoiseStream {
    pub fn new(master_seed: u64, traj_index: u64, n_channels: usize, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(traj_index);
        NoiseStream { rng, sqrt_dt: dt.sqrt(), n_channels }
    }

    pub fn next_step(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_channels);
        for dw in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *dw = self.sqrt_dt * z;
        }
    }
}

/// A fully materialized noise path for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    pub master_seed: u64,
    pub traj_index: u64,
    pub n_channels: usize,
    pub dt: f64,
    /// Row-major `[step][channel]`.
    pub increments: Vec<f64>,
}

impl WienerPath {
    pub fn n_steps(&self) -> usize {
        if self.n_channels == 0 {
            0
        } else {
            self.increments.len() / self.n_channels
        }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_channels..(k + 1) * self.n_channels]
    }

    /// The same Brownian path sampled on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> WienerPath {
        assert!(factor >= 1);
        let steps = self.n_steps() / factor;
        let mut increments = vec![0.0; steps * self.n_channels];
        for k in 0..steps {
            for f in 0..factor {
                for (acc, dw) in increments[k * self.n_channels..(k + 1) * self.n_channels]
                    .iter_mut()
                    .zip(self.step(k * factor + f))
                {
                    *acc += dw;
                }
            }
        }
        WienerPath { dt: self.dt * factor as f64, increments, ..self.clone() }
    }
}

pub fn wiener_path(master_seed: u64, traj_index: u64, n_channels: usize, n_steps: usize, dt: f64) -> WienerPath {
    let mut stream = NoiseStream::new(master_seed, traj_index, n_channels, dt);
    let mut increments = vec![0.0; n_steps * n_channels];
    if n_channels > 0 {
        for chunk in increments.chunks_mut(n_channels) {
            stream.next_step(chunk);
        }
    }
    WienerPath { master_seed, traj_index, n_channels, dt, increments }
}

/// Noise operator, stored as a diagonal when it is one.
#[derive(Debug, Clone)]
enum NoiseOp {
    Diagonal(Vec<C64>),
    Dense(CMatrix),
}

impl NoiseOp {
    fn new(l: &CMatrix) -> Self {
        if l.is_diagonal() {
            NoiseOp::Diagonal(l.diagonal())
        } else {
            NoiseOp::Dense(l.clone())
        }
    }

    fn dim(&self) -> usize {
        match self {
            NoiseOp::Diagonal(d) => d.len(),
            NoiseOp::Dense(m) => m.dim(),
        }
    }

    /// out -= scale · L x
    fn sub_apply(&self, x: &[C64], scale: f64, out: &mut [C64], scratch: &mut [C64]) {
        match self {
            NoiseOp::Diagonal(d) => {
                for ((o, l), xi) in out.iter_mut().zip(d).zip(x) {
                    *o -= l * xi * scale;
                }
            }
            NoiseOp::Dense(m) => {
                m.mul_vec_into(x, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o -= s * scale;
                }
            }
        }
    }

    fn to_matrix(&self) -> CMatrix {
        match self {
            NoiseOp::Diagonal(d) => CMatrix::from_diagonal(d),
            NoiseOp::Dense(m) => m.clone(),
        }
    }
}

/// Precomputed SSE generator: ψ′ = ψ + Aψ dt − Σⱼ Lⱼψ dWⱼ, with
/// A = −iH + c·½Σⱼ Lⱼ†Lⱼ.
#[derive(Debug, Clone)]
pub struct SseStepper {
    drift: CMatrix,
    noise: Vec<NoiseOp>,
}

impl SseStepper {
    pub fn new(h: &CMatrix, ls: &[CMatrix], deterministic_channel: bool) -> Self {
        let mut drift = h.scale(c64(0.0, -1.0));
        if deterministic_channel {
            for l in ls {
                drift = &drift + &(&l.adjoint() * l).scale_real(0.5);
            }
        }
        SseStepper { drift, noise: ls.iter().map(NoiseOp::new).collect() }
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Unnormalized Euler–Maruyama update written into `out`.
    pub fn raw_step(&self, psi: &[C64], dt: f64, dw: &[f64], out: &mut [C64], scratch: &mut [C64]) {
        self.drift.mul_vec_into(psi, scratch);
        for ((o, p), a) in out.iter_mut().zip(psi).zip(scratch.iter()) {
            *o = p + a * dt;
        }
        for (op, &w) in self.noise.iter().zip(dw) {
            op.sub_apply(psi, w, out, scratch);
        }
    }

    /// One normalized step.
    pub fn step(&self, psi: &StateVector, dt: f64, dw: &[f64]) -> Result<StateVector, StepError> {
        self.check(psi.dim(), dw.len())?;
        let n = self.dim();
        let mut out = vec![c64(0.0, 0.0); n];
        let mut scratch = vec![c64(0.0, 0.0); n];
        self.raw_step(psi.amplitudes(), dt, dw, &mut out, &mut scratch);
        normalize_in_place(&mut out)?;
        Ok(StateVector::from_normalized_unchecked(out))
    }

    fn check(&self, dim: usize, channels: usize) -> Result<(), StepError> {
        if dim != self.dim() || self.noise.iter().any(|op| op.dim() != dim) {
            return Err(StepError::Dimension { state: dim, operator: self.dim() });
        }
        if channels != self.noise.len() {
            return Err(StepError::NoiseChannels { expected: self.noise.len(), found: channels });
        }
        Ok(())
    }
}

fn normalize_in_place(v: &mut [C64]) -> Result<(), StepError> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(StepError::DegenerateNorm(norm));
    }
    let inv = 1.0 / norm;
    v.iter_mut().for_each(|z| *z *= inv);
    Ok(())
}

/// One Euler–Maruyama step of the SSE followed by renormalization.
pub fn sse_step(
    psi: &StateVector,
    h: &CMatrix,
    ls: &[CMatrix],
    dt: f64,
    dw: &[f64],
    deterministic_channel: bool,
) -> Result<StateVector, StepError> {
    SseStepper::new(h, ls, deterministic_channel).step(psi, dt, dw)
}

/// Precomputed SME generator.
///
/// The raw update is
/// ρ′ = ρ + [−i(Hρ − ρH†) + c·½Σⱼ{Lⱼ,{Lⱼ,ρ}}]dt − Σⱼ{Lⱼ,ρ}dWⱼ.
/// A single Euler–Maruyama step can leave ρ′ with small negative
/// eigenvalues, so after re-Hermitizing the result is projected back onto
/// the positive cone before the trace is renormalized.
#[derive(Debug, Clone)]
pub struct SmeStepper {
    h: CMatrix,
    h_adj: CMatrix,
    noise: Vec<NoiseOp>,
    deterministic_channel: bool,
}

impl SmeStepper {
    pub fn new(h: &CMatrix, ls: &[CMatrix], deterministic_channel: bool) -> Self {
        SmeStepper {
            h: h.clone(),
            h_adj: h.adjoint(),
            noise: ls.iter().map(NoiseOp::new).collect(),
            deterministic_channel,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Unnormalized, un-Hermitized update.
    pub fn raw_step(&self, rho: &CMatrix, dt: f64, dw: &[f64]) -> CMatrix {
        let n = self.dim();
        let comm = &(&self.h * rho) - &(rho * &self.h_adj);
        let mut out = rho + &comm.scale(c64(0.0, -dt));
        let c = if self.deterministic_channel { 0.5 * dt } else { 0.0 };
        for (op, &w) in self.noise.iter().zip(dw) {
            match op {
                NoiseOp::Diagonal(d) => {
                    for r in 0..n {
                        for col in 0..n {
                            let s = d[r] + d[col];
                            let x = rho[(r, col)];
                            out[(r, col)] += x * (s * s * c - s * w);
                        }
                    }
                }
                NoiseOp::Dense(l) => {
                    let anti = &(l * rho) + &(rho * l);
                    let double = &(l * &anti) + &(&anti * l);
                    out = &(&out + &double.scale_real(c)) - &anti.scale_real(w);
                }
            }
        }
        out
    }

    pub fn step(&self, rho: &DensityMatrix, dt: f64, dw: &[f64]) -> Result<DensityMatrix, StepError> {
        if rho.dim() != self.dim() || self.noise.iter().any(|op| op.dim() != rho.dim()) {
            return Err(StepError::Dimension { state: rho.dim(), operator: self.dim() });
        }
        if dw.len() != self.noise.len() {
            return Err(StepError::NoiseChannels { expected: self.noise.len(), found: dw.len() });
        }
        let raw = self.raw_step(rho.matrix(), dt, dw).hermitian_part();
        let tr = raw.trace().re;
        if !(tr >= DEGENERATE_NORM) {
            return Err(StepError::DegenerateTrace(tr));
        }
        let projected = psd_projection(&raw)?;
        let tr = projected.trace().re;
        if !(tr >= DEGENERATE_NORM) {
            return Err(StepError::DegenerateTrace(tr));
        }
        Ok(DensityMatrix::from_matrix_unchecked(projected.scale_real(1.0 / tr)))
    }

    pub fn noise_operators(&self) -> Vec<CMatrix> {
        self.noise.iter().map(NoiseOp::to_matrix).collect()
    }
}

/// One Euler–Maruyama step of the SME, followed by re-Hermitization,
/// positivity projection and trace renormalization.
pub fn sme_step(
    rho: &DensityMatrix,
    h: &CMatrix,
    ls: &[CMatrix],
    dt: f64,
    dw: &[f64],
    deterministic_channel: bool,
) -> Result<DensityMatrix, StepError> {
    SmeStepper::new(h, ls, deterministic_channel).step(rho, dt, dw)
}

/// States recorded along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum SampledStates {
    Pure(Vec<StateVector>),
    Mixed(Vec<DensityMatrix>),
}

impl SampledStates {
    pub fn len(&self) -> usize {
        match self {
            SampledStates::Pure(v) => v.len(),
            SampledStates::Mixed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Density matrix of sample `k`.
    pub fn rho(&self, k: usize) -> CMatrix {
        match self {
            SampledStates::Pure(v) => CMatrix::outer(v[k].amplitudes(), v[k].amplitudes()),
            SampledStates::Mixed(v) => v[k].matrix().clone(),
        }
    }

    pub fn populations(&self, k: usize) -> Vec<f64> {
        match self {
            SampledStates::Pure(v) => v[k].populations(),
            SampledStates::Mixed(v) => v[k].populations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySamples {
    pub traj_index: u64,
    pub times: Vec<f64>,
    pub states: SampledStates,
}

/// Integrates a single trajectory whose noise is keyed by
/// `(cfg.master_seed, traj_index)`.
pub fn run_trajectory(
    spec: &SystemSpec,
    cfg: &TrajectoryConfig,
    psi0: &StateVector,
    traj_index: u64,
) -> Result<TrajectorySamples, TrajectoryError> {
    let mut stream = NoiseStream::new(cfg.master_seed, traj_index, spec.n_qubits, cfg.dt);
    integrate(spec, cfg, psi0, traj_index, |out| stream.next_step(out))
}

/// Integrates a trajectory along an explicit noise path. The path's `dt`
/// overrides `cfg.dt`; it must hold at least `n_steps` increments.
pub fn run_trajectory_with_path(
    spec: &SystemSpec,
    cfg: &TrajectoryConfig,
    psi0: &StateVector,
    path: &WienerPath,
) -> Result<TrajectorySamples, TrajectoryError> {
    let cfg = TrajectoryConfig { dt: path.dt, ..cfg.clone() };
    assert!(path.n_steps() >= cfg.n_steps(), "noise path is shorter than the integration window");
    let mut k = 0;
    integrate(spec, &cfg, psi0, path.traj_index, |out| {
        out.copy_from_slice(path.step(k));
        k += 1;
    })
}

fn integrate(
    spec: &SystemSpec,
    cfg: &TrajectoryConfig,
    psi0: &StateVector,
    traj_index: u64,
    mut next_noise: impl FnMut(&mut [f64]),
) -> Result<TrajectorySamples, TrajectoryError> {
    let fail = |time: f64, source: StepError| TrajectoryError { traj_index, time, source };
    let h = build_hamiltonian(spec).map_err(|e| fail(0.0, e.into()))?;
    let ls = jump_operators(spec).map_err(|e| fail(0.0, e.into()))?;
    if psi0.dim() != spec.dim() {
        return Err(fail(0.0, StepError::Dimension { state: psi0.dim(), operator: spec.dim() }));
    }
    let n_steps = cfg.n_steps();
    let stride = cfg.sample_stride;
    let mut times = Vec::with_capacity(n_steps / stride + 1);
    let mut dw = vec![0.0; spec.n_qubits];

    let states = match cfg.scheme {
        Scheme::Sse => {
            let stepper = SseStepper::new(&h, &ls, cfg.deterministic_channel);
            let dim = spec.dim();
            let mut psi = psi0.amplitudes().to_vec();
            let mut next = vec![c64(0.0, 0.0); dim];
            let mut scratch = vec![c64(0.0, 0.0); dim];
            let mut samples = Vec::with_capacity(n_steps / stride + 1);
            for step in 0..=n_steps {
                if step % stride == 0 {
                    times.push(step as f64 * cfg.dt);
                    samples.push(StateVector::from_normalized_unchecked(psi.clone()));
                }
                if step == n_steps {
                    break;
                }
                next_noise(&mut dw);
                stepper.raw_step(&psi, cfg.dt, &dw, &mut next, &mut scratch);
                normalize_in_place(&mut next).map_err(|e| fail((step + 1) as f64 * cfg.dt, e))?;
                std::mem::swap(&mut psi, &mut next);
            }
            SampledStates::Pure(samples)
        }
        Scheme::Sme => {
            let stepper = SmeStepper::new(&h, &ls, cfg.deterministic_channel);
            let mut rho = psi0.projector();
            let mut samples = Vec::with_capacity(n_steps / stride + 1);
            for step in 0..=n_steps {
                if step % stride == 0 {
                    times.push(step as f64 * cfg.dt);
                    samples.push(rho.clone());
                }
                if step == n_steps {
                    break;
                }
                next_noise(&mut dw);
                rho = stepper.step(&rho, cfg.dt, &dw).map_err(|e| fail((step + 1) as f64 * cfg.dt, e))?;
            }
            SampledStates::Mixed(samples)
        }
    };
    Ok(TrajectorySamples { traj_index, times, states })
}

/// Mean density-matrix series of one contiguous batch of trajectories.
#[derive(Debug, Clone)]
pub struct Batch {
    pub traj_range: Range<u64>,
    /// Number of successful trajectories in the batch.
    pub count: usize,
    pub rho: Vec<CMatrix>,
}

/// Ensemble-averaged density matrices with batch means for error bars.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub rho: Vec<DensityMatrix>,
    pub batches: Vec<Batch>,
    pub n_success: usize,
    pub failures: Vec<TrajectoryError>,
}

/// Point estimate with a standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl EnsembleResult {
    pub fn dim(&self) -> usize {
        self.rho.first().map_or(0, |r| r.dim())
    }

    fn usable_batches(&self) -> impl Iterator<Item = &Batch> {
        self.batches.iter().filter(move |b| b.count > 0 && b.count < self.n_success)
    }

    /// Ensemble mean at sample `k` with batch `b` left out.
    pub fn leave_one_out(&self, b: &Batch, k: usize) -> DensityMatrix {
        let total = self.n_success as f64;
        let nb = b.count as f64;
        let m = &self.rho[k].matrix().scale_real(total) - &b.rho[k].scale_real(nb);
        DensityMatrix::from_matrix_unchecked(m.scale_real(1.0 / (total - nb)).hermitian_part())
    }

    /// Per-time observable with delete-one-batch jackknife standard errors.
    pub fn observable<E>(
        &self,
        f: impl Fn(&DensityMatrix) -> Result<f64, E>,
    ) -> Result<ObservableSeries, E> {
        self.observable_at(|_, rho| f(rho))
    }

    /// Like [`observable`](Self::observable), for observables that also
    /// depend on the sample index (a time-dependent reference state, say).
    pub fn observable_at<E>(
        &self,
        f: impl Fn(usize, &DensityMatrix) -> Result<f64, E>,
    ) -> Result<ObservableSeries, E> {
        let values = self.rho.iter().enumerate().map(|(k, r)| f(k, r)).collect::<Result<Vec<_>, E>>()?;
        let batches: Vec<&Batch> = self.usable_batches().collect();
        let mut stderr = Vec::with_capacity(values.len());
        for k in 0..values.len() {
            let reps = batches
                .iter()
                .map(|b| f(k, &self.leave_one_out(b, k)))
                .collect::<Result<Vec<_>, E>>()?;
            stderr.push(jackknife_stderr(&reps));
        }
        Ok(ObservableSeries { times: self.times.clone(), values, stderr })
    }

    /// Jackknife estimate of a functional of the whole mean series
    /// (a crossing time, a peak height, ...). Returns `None` when the
    /// functional is undefined on the full ensemble.
    pub fn series_functional(&self, f: impl Fn(&[f64], &[DensityMatrix]) -> Option<f64>) -> Option<Estimate> {
        let value = f(&self.times, &self.rho)?;
        let reps: Vec<f64> = self
            .usable_batches()
            .filter_map(|b| {
                let series: Vec<DensityMatrix> = (0..self.times.len()).map(|k| self.leave_one_out(b, k)).collect();
                f(&self.times, &series)
            })
            .collect();
        Some(Estimate { value, stderr: jackknife_stderr(&reps) })
    }

    /// Population series of every basis state, with standard errors.
    pub fn populations(&self) -> Vec<ObservableSeries> {
        let dim = self.dim();
        (0..dim)
            .map(|i| {
                self.observable(|r| Ok::<f64, std::convert::Infallible>(r.matrix()[(i, i)].re))
                    .expect("infallible")
            })
            .collect()
    }
}

/// Delete-one jackknife standard error from replicate estimates.
pub fn jackknife_stderr(reps: &[f64]) -> f64 {
    let b = reps.len();
    if b < 2 {
        return f64::NAN;
    }
    let mean = reps.iter().sum::<f64>() / b as f64;
    let ss: f64 = reps.iter().map(|r| (r - mean).powi(2)).sum();
    ((b as f64 - 1.0) / b as f64 * ss).sqrt()
}

/// Contiguous batch ranges covering `0..n`.
pub fn batch_ranges(n: usize, n_batches: usize) -> Vec<Range<u64>> {
    let b = n_batches.clamp(1, n.max(1));
    (0..b).map(|i| ((i * n / b) as u64)..(((i + 1) * n / b) as u64)).collect()
}

fn pairwise_sum(items: &[TrajectorySamples], n_samples: usize) -> Vec<CMatrix> {
    match items.len() {
        0 => unreachable!("pairwise_sum is never called on an empty slice"),
        1 => (0..n_samples).map(|k| items[0].states.rho(k)).collect(),
        len => {
            let (l, r) = items.split_at(len / 2);
            let mut left = pairwise_sum(l, n_samples);
            let right = pairwise_sum(r, n_samples);
            for (a, b) in left.iter_mut().zip(&right) {
                *a = &*a + b;
            }
            left
        }
    }
}

fn pairwise_sum_series(items: &[Vec<CMatrix>]) -> Vec<CMatrix> {
    match items.len() {
        0 => unreachable!("pairwise_sum_series is never called on an empty slice"),
        1 => items[0].clone(),
        len => {
            let (l, r) = items.split_at(len / 2);
            let mut left = pairwise_sum_series(l);
            let right = pairwise_sum_series(r);
            for (a, b) in left.iter_mut().zip(&right) {
                *a = &*a + b;
            }
            left
        }
    }
}

/// Runs `cfg.n_traj` trajectories and averages their density matrices.
///
/// Trajectories are grouped into [`DEFAULT_BATCHES`] contiguous index
/// ranges; each batch runs on the current rayon pool and is summed in a
/// fixed pairwise order, so the output is bit-identical for any worker count.
pub fn run_ensemble(spec: &SystemSpec, cfg: &TrajectoryConfig, psi0: &StateVector) -> Result<EnsembleResult, EnsembleError> {
    run_ensemble_batched(spec, cfg, psi0, DEFAULT_BATCHES)
}

pub fn run_ensemble_batched(
    spec: &SystemSpec,
    cfg: &TrajectoryConfig,
    psi0: &StateVector,
    n_batches: usize,
) -> Result<EnsembleResult, EnsembleError> {
    spec.validate()?;
    cfg.validate()?;
    if psi0.dim() != spec.dim() {
        return Err(EnsembleError::InitialState { expected: spec.dim(), found: psi0.dim() });
    }
    let times = cfg.sample_times();
    let n_samples = times.len();
    let mut failures = Vec::new();
    let mut batches = Vec::new();
    let mut batch_sums = Vec::new();

    for range in batch_ranges(cfg.n_traj, n_batches) {
        let results: Vec<Result<TrajectorySamples, TrajectoryError>> =
            range.clone().into_par_iter().map(|k| run_trajectory(spec, cfg, psi0, k)).collect();
        let mut ok = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(s) => ok.push(s),
                Err(e) => failures.push(e),
            }
        }
        if ok.is_empty() {
            batches.push(Batch { traj_range: range, count: 0, rho: Vec::new() });
            continue;
        }
        let sum = pairwise_sum(&ok, n_samples);
        let inv = 1.0 / ok.len() as f64;
        batches.push(Batch { traj_range: range, count: ok.len(), rho: sum.iter().map(|m| m.scale_real(inv)).collect() });
        batch_sums.push(sum);
    }

    if failures.len() as f64 > MAX_FAILURE_FRACTION * cfg.n_traj as f64 || batch_sums.is_empty() {
        return Err(EnsembleError::TooManyFailures {
            failed: failures.len(),
            total: cfg.n_traj,
            first: failures[0].clone(),
        });
    }
    let n_success = cfg.n_traj - failures.len();
    let total = pairwise_sum_series(&batch_sums);
    let inv = 1.0 / n_success as f64;
    let rho = total
        .into_iter()
        .map(|m| DensityMatrix::from_matrix_unchecked(m.scale_real(inv).hermitian_part()))
        .collect();
    Ok(EnsembleResult { times, rho, batches, n_success, failures })
}
