//! Experiment configuration files.
//!
//! A config is a TOML document made of flat sections with `key = value`
//! pairs; see `docs/config.md` for the grammar. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use nhqt::metrics::DEFAULT_BALANCE_TOL;
use nhqt::model::{basis_label, parse_basis_label};
use nhqt::photonic::{ProgramOptions, Verification};
use nhqt::{ModelError, Scheme, StateVector, SystemSpec, Topology, TrajectoryConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid system{at}: {source}")]
    Model { at: String, source: ModelError },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Spectrum,
    Populations,
    Concurrence,
    ConcurrenceMap,
    Fidelity,
    CompilePhotonic,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Spectrum => "spectrum",
            Recipe::Populations => "populations",
            Recipe::Concurrence => "concurrence",
            Recipe::ConcurrenceMap => "concurrence-map",
            Recipe::Fidelity => "fidelity",
            Recipe::CompilePhotonic => "compile-photonic",
        }
    }

    /// Whether the recipe runs trajectory ensembles.
    pub fn uses_ensembles(self) -> bool {
        matches!(self, Recipe::Populations | Recipe::Concurrence | Recipe::ConcurrenceMap | Recipe::Fidelity)
    }
}

/// Parameters a `[[sweep]]` block may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Dissipation rate of qubit 1.
    Gamma1,
    /// Coupling J.
    Coupling,
    /// Noise strength γ, applied to every qubit.
    Noise,
}

impl SweepParam {
    pub fn column(self) -> &'static str {
        match self {
            SweepParam::Gamma1 => "gamma1",
            SweepParam::Coupling => "coupling",
            SweepParam::Noise => "noise",
        }
    }

    fn apply(self, spec: &mut SystemSpec, value: f64) {
        match self {
            SweepParam::Gamma1 => spec.dissipation[0] = value,
            SweepParam::Coupling => spec.coupling = value,
            SweepParam::Noise => spec.noise.iter_mut().for_each(|g| *g = value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum PerQubit {
    Uniform(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    recipe: Recipe,
    output: Option<String>,
    system: RawSystem,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    sweep: Vec<RawSweep>,
    spectrum: Option<RawGrid>,
    map: Option<RawGrid>,
    #[serde(default)]
    metrics: RawMetrics,
    photonic: Option<RawPhotonic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_qubits: Option<usize>,
    coupling: f64,
    dissipation: Vec<f64>,
    #[serde(default = "zero_noise")]
    noise: PerQubit,
    initial: Option<String>,
}

fn zero_noise() -> PerQubit {
    PerQubit::Uniform(0.0)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    dt: Option<f64>,
    t_max: Option<f64>,
    n_traj: Option<usize>,
    seed: Option<u64>,
    scheme: Option<Scheme>,
    deterministic_channel: Option<bool>,
    sample_stride: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: SweepParam,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    gamma1_from: f64,
    gamma1_to: f64,
    gamma1_step: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    balance_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhotonic {
    tau: f64,
    n_steps: usize,
    #[serde(default)]
    realize_v: bool,
    #[serde(default)]
    verification: Verification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

/// One combination of swept values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint(pub Vec<(SweepParam, f64)>);

impl SweepPoint {
    pub fn describe(&self) -> String {
        self.0.iter().map(|(p, v)| format!("{}={v}", p.column())).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonicSettings {
    pub tau: f64,
    pub n_steps: usize,
    pub options: ProgramOptions,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub recipe: Recipe,
    pub output: PathBuf,
    pub system: SystemSpec,
    pub initial_label: String,
    pub initial: StateVector,
    pub run: TrajectoryConfig,
    pub sweeps: Vec<Sweep>,
    /// Γ₁ axis of the spectrum or concurrence-map recipes.
    pub gamma1_grid: Option<Vec<f64>>,
    pub balance_tol: f64,
    pub photonic: Option<PhotonicSettings>,
}

/// Grid from..=to in steps of `step`, snapped to 12 decimals so that
/// points such as 0.3 come out exact.
pub fn linear_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(from.is_finite() && to.is_finite() && step.is_finite() && step > 0.0 && to >= from) {
        return Err(format!("grid needs finite from ≤ to and step > 0 (got {from}, {to}, {step})"));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(format!("grid has {} points (limit 1000001)", n + 1));
    }
    Ok((0..=n).map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12).collect())
}

impl Experiment {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let default_output = path.file_stem().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
        Self::from_str(&text, default_output)
    }

    /// Parses and validates `text`. `default_output` is used when the file
    /// has no `output` key.
    pub fn from_str(text: &str, default_output: PathBuf) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        Self::resolve(raw, default_output)
    }

    fn resolve(raw: RawConfig, default_output: PathBuf) -> Result<Self, ConfigError> {
        let recipe = raw.recipe;
        let sys = raw.system;
        let n = sys.n_qubits.unwrap_or(sys.dissipation.len());
        let noise = match sys.noise {
            PerQubit::Uniform(g) => vec![g; n],
            PerQubit::Each(v) => v,
        };
        let system = SystemSpec {
            n_qubits: n,
            coupling: sys.coupling,
            dissipation: sys.dissipation,
            noise,
            topology: Topology::for_qubits(n),
        };
        system.validate().map_err(|source| ConfigError::Model { at: String::new(), source })?;

        let initial_label = sys.initial.unwrap_or_else(|| basis_label(n, 1 << (n - 1)));
        let initial = match parse_basis_label(&initial_label) {
            Some((len, index)) if len == n => StateVector::basis(system.dim(), index)
                .map_err(|e| invalid(format!("system.initial: {e}")))?,
            _ => {
                return Err(invalid(format!(
                    "system.initial must be a {n}-character bit string such as \"{}\" (got \"{initial_label}\")",
                    basis_label(n, 1 << (n - 1))
                )))
            }
        };

        let defaults = TrajectoryConfig::default();
        let r = raw.run;
        let run = TrajectoryConfig {
            dt: r.dt.unwrap_or(defaults.dt),
            t_max: r.t_max.unwrap_or(defaults.t_max),
            n_traj: r.n_traj.unwrap_or(defaults.n_traj),
            master_seed: r.seed.unwrap_or(defaults.master_seed),
            scheme: r.scheme.unwrap_or(defaults.scheme),
            deterministic_channel: r.deterministic_channel.unwrap_or(defaults.deterministic_channel),
            sample_stride: r.sample_stride.unwrap_or(defaults.sample_stride),
        };
        run.validate().map_err(|e| invalid(format!("run: {e}")))?;
        if run.t_max < run.dt && recipe.uses_ensembles() {
            return Err(invalid(format!("run: t_max ({}) must be at least dt ({})", run.t_max, run.dt)));
        }

        let mut sweeps: Vec<Sweep> = Vec::new();
        for s in raw.sweep {
            if s.values.is_empty() {
                return Err(invalid(format!("sweep over {} has no values", s.parameter.column())));
            }
            if sweeps.iter().any(|o| o.parameter == s.parameter) {
                return Err(invalid(format!("{} is swept twice", s.parameter.column())));
            }
            sweeps.push(Sweep { parameter: s.parameter, values: s.values });
        }

        let needs_pair = matches!(
            recipe,
            Recipe::Spectrum | Recipe::Concurrence | Recipe::ConcurrenceMap | Recipe::CompilePhotonic
        );
        if needs_pair && n != 2 {
            return Err(invalid(format!("recipe {} needs n_qubits = 2 (got {n})", recipe.name())));
        }

        let grid_block = match recipe {
            Recipe::Spectrum => Some(("spectrum", raw.spectrum)),
            Recipe::ConcurrenceMap => Some(("map", raw.map)),
            _ => None,
        };
        let gamma1_grid = match grid_block {
            Some((section, block)) => {
                let g = block.ok_or_else(|| invalid(format!("recipe {} needs a [{section}] section", recipe.name())))?;
                if sweeps.iter().any(|s| s.parameter == SweepParam::Gamma1) {
                    return Err(invalid(format!("recipe {} scans gamma1 itself; it cannot be swept", recipe.name())));
                }
                Some(linear_grid(g.gamma1_from, g.gamma1_to, g.gamma1_step).map_err(|e| invalid(format!("{section}: {e}")))?)
            }
            None => None,
        };

        let photonic = match recipe {
            Recipe::CompilePhotonic => {
                let p = raw.photonic.ok_or_else(|| invalid("recipe compile-photonic needs a [photonic] section"))?;
                if !(p.tau.is_finite() && p.tau > 0.0) {
                    return Err(invalid(format!("photonic.tau must be positive (got {})", p.tau)));
                }
                if p.n_steps == 0 {
                    return Err(invalid("photonic.n_steps must be at least 1"));
                }
                Some(PhotonicSettings {
                    tau: p.tau,
                    n_steps: p.n_steps,
                    options: ProgramOptions { realize_v: p.realize_v, verification: p.verification },
                })
            }
            _ => None,
        };

        let balance_tol = raw.metrics.balance_tol.unwrap_or(DEFAULT_BALANCE_TOL);
        if !(balance_tol.is_finite() && balance_tol > 0.0) {
            return Err(invalid(format!("metrics.balance_tol must be positive (got {balance_tol})")));
        }

        let exp = Experiment {
            recipe,
            output: raw.output.map(PathBuf::from).unwrap_or(default_output),
            system,
            initial_label,
            initial,
            run,
            sweeps,
            gamma1_grid,
            balance_tol,
            photonic,
        };
        for point in exp.sweep_points() {
            exp.spec_at(&point)
                .validate()
                .map_err(|source| ConfigError::Model { at: format!(" at sweep point {}", point.describe()), source })?;
        }
        Ok(exp)
    }

    /// Cartesian product of all sweeps, first sweep varying slowest. A
    /// config without sweeps has a single empty point.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let mut points = vec![SweepPoint(Vec::new())];
        for s in &self.sweeps {
            points = points
                .into_iter()
                .flat_map(|p| {
                    s.values.iter().map(move |&v| {
                        let mut q = p.0.clone();
                        q.push((s.parameter, v));
                        SweepPoint(q)
                    })
                })
                .collect();
        }
        points
    }

    pub fn spec_at(&self, point: &SweepPoint) -> SystemSpec {
        let mut spec = self.system.clone();
        for &(param, value) in &point.0 {
            param.apply(&mut spec, value);
        }
        spec
    }

    pub fn sweep_columns(&self) -> Vec<&'static str> {
        self.sweeps.iter().map(|s| s.parameter.column()).collect()
    }

    /// Total number of trajectories the run will integrate.
    pub fn total_trajectories(&self) -> usize {
        if !self.recipe.uses_ensembles() {
            return 0;
        }
        let per_point = self.gamma1_grid.as_ref().map_or(1, Vec::len);
        self.sweep_points().len() * per_point * self.run.n_traj
    }
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.system;
        writeln!(f, "recipe = {}", self.recipe.name())?;
        writeln!(f, "output = {}", self.output.display())?;
        writeln!(f, "[system]")?;
        writeln!(f, "n_qubits = {}", s.n_qubits)?;
        writeln!(f, "topology = {:?}", s.topology)?;
        writeln!(f, "coupling = {}", s.coupling)?;
        writeln!(f, "dissipation = {}", list(&s.dissipation))?;
        writeln!(f, "noise = {}", list(&s.noise))?;
        writeln!(f, "initial = {}", self.initial_label)?;
        let r = &self.run;
        writeln!(f, "[run]")?;
        writeln!(f, "dt = {}", r.dt)?;
        writeln!(f, "t_max = {}", r.t_max)?;
        writeln!(f, "n_traj = {}", r.n_traj)?;
        writeln!(f, "seed = {}", r.master_seed)?;
        writeln!(f, "scheme = {}", if r.scheme == Scheme::Sse { "sse" } else { "sme" })?;
        writeln!(f, "deterministic_channel = {}", r.deterministic_channel)?;
        writeln!(f, "sample_stride = {}", r.sample_stride)?;
        writeln!(f, "samples = {}", r.sample_times().len())?;
        writeln!(f, "[metrics]")?;
        writeln!(f, "balance_tol = {}", self.balance_tol)?;
        for sw in &self.sweeps {
            writeln!(f, "[[sweep]]")?;
            writeln!(f, "parameter = {}", sw.parameter.column())?;
            writeln!(f, "values = {}", list(&sw.values))?;
        }
        if let Some(g) = &self.gamma1_grid {
            writeln!(f, "gamma1 grid = {} points from {} to {}", g.len(), g[0], g[g.len() - 1])?;
        }
        if let Some(p) = &self.photonic {
            writeln!(f, "[photonic]")?;
            writeln!(f, "tau = {}", p.tau)?;
            writeln!(f, "n_steps = {}", p.n_steps)?;
            writeln!(f, "realize_v = {}", p.options.realize_v)?;
            writeln!(f, "verification = {:?}", p.options.verification)?;
        }
        write!(f, "sweep points = {}, trajectories = {}", self.sweep_points().len(), self.total_trajectories())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
recipe = "populations"

[system]
coupling = 0.1
dissipation = [1.1, 0.5]
noise = 0.5
"#;

    fn parse(text: &str) -> Result<Experiment, ConfigError> {
        Experiment::from_str(text, PathBuf::from("out"))
    }

    #[test]
    fn defaults_are_filled_in() {
        let e = parse(BASE).unwrap();
        assert_eq!(e.run, TrajectoryConfig::default());
        assert_eq!(e.system.noise, vec![0.5, 0.5]);
        assert_eq!(e.initial_label, "10");
        assert_eq!(e.balance_tol, DEFAULT_BALANCE_TOL);
        assert_eq!(e.sweep_points().len(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_position() {
        let err = parse(&format!("{BASE}\n[run]\ndtt = 0.1\n")).unwrap_err().to_string();
        assert!(err.contains("dtt"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_dissipation_names_the_field() {
        let err = parse("recipe = \"populations\"\n[system]\ncoupling = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("dissipation"), "{err}");
    }

    #[test]
    fn negative_rates_are_rejected() {
        let err = parse(&BASE.replace("[1.1, 0.5]", "[-1.1, 0.5]")).unwrap_err();
        assert!(matches!(err, ConfigError::Model { source: ModelError::Negative { .. }, .. }));
        let swept = format!("{BASE}\n[[sweep]]\nparameter = \"noise\"\nvalues = [0.1, -0.2]\n");
        assert!(matches!(parse(&swept).unwrap_err(), ConfigError::Model { .. }));
    }

    #[test]
    fn sweeps_form_a_cartesian_product() {
        let text = format!(
            "{BASE}\n[[sweep]]\nparameter = \"gamma1\"\nvalues = [0.5, 2.0]\n[[sweep]]\nparameter = \"noise\"\nvalues = [0.05, 0.1, 0.5]\n"
        );
        let e = parse(&text).unwrap();
        let pts = e.sweep_points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].0, vec![(SweepParam::Gamma1, 0.5), (SweepParam::Noise, 0.1)]);
        let spec = e.spec_at(&pts[4]);
        assert_eq!(spec.dissipation, vec![2.0, 0.5]);
        assert_eq!(spec.noise, vec![0.1, 0.1]);
    }

    #[test]
    fn recipe_sections_are_required() {
        let text = BASE.replace("populations", "spectrum");
        assert!(parse(&text).unwrap_err().to_string().contains("[spectrum]"));
        let text = BASE.replace("populations", "compile-photonic");
        assert!(parse(&text).unwrap_err().to_string().contains("[photonic]"));
    }

    #[test]
    fn grid_hits_decimal_points_exactly() {
        let g = linear_grid(0.0, 1.2, 0.01).unwrap();
        assert_eq!(g.len(), 121);
        assert_eq!(g[30], 0.3);
        assert_eq!(g[70], 0.7);
        assert_eq!(g[120], 1.2);
    }

    #[test]
    fn initial_state_label() {
        let e = parse(&BASE.replace("noise = 0.5", "noise = 0.5\ninitial = \"01\"")).unwrap();
        assert_eq!(e.initial, StateVector::basis(4, 1).unwrap());
        assert!(parse(&BASE.replace("noise = 0.5", "noise = 0.5\ninitial = \"100\"")).is_err());
    }
}
