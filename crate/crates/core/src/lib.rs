//! Trajectory simulation of coupled non-Hermitian qubits under noisy
//! dissipation, with entanglement metrics and a photonic compiler.

pub mod linalg;
pub mod metrics;
pub mod model;
pub mod photonic;
pub mod state;
pub mod trajectory;

pub use linalg::{c64, CMatrix, LinalgError, C64};
pub use metrics::{concurrence, uhlmann_fidelity, MetricsError, ObservableSeries};
pub use model::{ModelError, SystemSpec, Topology};
pub use state::{DensityMatrix, QuantumState, StateError, StateVector};
pub use trajectory::{EnsembleError, EnsembleResult, Scheme, TrajectoryConfig};
