//! Recipe execution.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nhqt::metrics::{balance_time_states, concurrence, no_jump_series, peak_of, uhlmann_fidelity};
use nhqt::model::{basis_label, single_excitation_indices, spectrum_scan};
use nhqt::photonic::{emit_program, PhotonicError};
use nhqt::trajectory::run_ensemble;
use nhqt::{DensityMatrix, EnsembleError, EnsembleResult, MetricsError, ModelError, ObservableSeries, SystemSpec};
use thiserror::Error;

use crate::config::{Experiment, Recipe, SweepPoint};
use crate::output::{output_path, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("ensemble{at}: {source}")]
    Ensemble { at: String, source: EnsembleError },
    #[error("metrics{at}: {source}")]
    Metrics { at: String, source: MetricsError },
    #[error("photonic compilation{at}: {source}")]
    Photonic { at: String, source: PhotonicError },
    #[error("model{at}: {source}")]
    Model { at: String, source: ModelError },
}

fn at(point: &SweepPoint) -> String {
    if point.0.is_empty() {
        String::new()
    } else {
        format!(" at {}", point.describe())
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Output files with their data-row counts.
    pub outputs: Vec<(PathBuf, usize)>,
    pub n_traj: usize,
    /// Derived scalars worth echoing (exceptional points, balance times, ...).
    pub notes: Vec<String>,
}

/// Runs `exp`, writing files under `prefix`. `progress` receives one line
/// per finished sweep point.
pub fn run(exp: &Experiment, prefix: &Path, mut progress: impl FnMut(&str)) -> Result<Report, RunError> {
    let mut report = Report { n_traj: exp.total_trajectories(), ..Report::default() };
    match exp.recipe {
        Recipe::Spectrum => spectrum(exp, prefix, &mut report)?,
        Recipe::Populations => populations(exp, prefix, &mut report, &mut progress)?,
        Recipe::Concurrence => concurrence_series(exp, prefix, &mut report, &mut progress)?,
        Recipe::ConcurrenceMap => concurrence_map(exp, prefix, &mut report, &mut progress)?,
        Recipe::Fidelity => fidelity(exp, prefix, &mut report, &mut progress)?,
        Recipe::CompilePhotonic => compile_photonic(exp, prefix, &mut report, &mut progress)?,
    }
    Ok(report)
}

fn header<'a>(exp: &Experiment, rest: &[&'a str]) -> Vec<&'a str> {
    let mut h: Vec<&str> = exp.sweep_columns();
    h.extend_from_slice(rest);
    h
}

fn with_point(point: &SweepPoint, rest: &[f64]) -> Vec<f64> {
    point.0.iter().map(|&(_, v)| v).chain(rest.iter().copied()).collect()
}

fn ensemble(spec: &SystemSpec, exp: &Experiment, point: &SweepPoint) -> Result<EnsembleResult, RunError> {
    run_ensemble(spec, &exp.run, &exp.initial).map_err(|source| RunError::Ensemble { at: at(point), source })
}

fn timed<T>(progress: &mut impl FnMut(&str), label: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    progress(&format!("{label} ({:.1} s)", start.elapsed().as_secs_f64()));
    out
}

fn point_label(exp: &Experiment, point: &SweepPoint) -> String {
    let d = point.describe();
    if d.is_empty() {
        exp.recipe.name().to_string()
    } else {
        format!("{} {d}", exp.recipe.name())
    }
}

fn spectrum(exp: &Experiment, prefix: &Path, report: &mut Report) -> Result<(), RunError> {
    let grid = exp.gamma1_grid.as_deref().expect("validated: spectrum has a grid");
    let cols = header(
        exp,
        &["gamma1", "re_lambda_plus", "im_lambda_plus", "re_lambda_minus", "im_lambda_minus", "discriminant"],
    );
    let mut table = Table::create(&output_path(prefix, "spectrum.csv"), &cols)?;
    for point in exp.sweep_points() {
        let spec = exp.spec_at(&point);
        let scan = spectrum_scan(&spec, grid).map_err(|source| RunError::Model { at: at(&point), source })?;
        for p in &scan.points {
            let [plus, minus] = p.eigenvalues;
            table.row(&with_point(&point, &[p.gamma1, plus.re, plus.im, minus.re, minus.im, p.discriminant]))?;
        }
        let eps: Vec<String> = scan.exceptional_points.iter().map(|g| format!("{g}")).collect();
        report.notes.push(format!("{}exceptional points at gamma1 = {}", prefix_of(&point), eps.join(", ")));
    }
    report.outputs.push(table.finish()?);
    Ok(())
}

fn prefix_of(point: &SweepPoint) -> String {
    if point.0.is_empty() {
        String::new()
    } else {
        format!("[{}] ", point.describe())
    }
}

fn populations(
    exp: &Experiment,
    prefix: &Path,
    report: &mut Report,
    progress: &mut impl FnMut(&str),
) -> Result<(), RunError> {
    let n = exp.system.n_qubits;
    let labels: Vec<String> = (0..exp.system.dim()).map(|i| basis_label(n, i)).collect();
    let pop_cols: Vec<String> = labels.iter().map(|l| format!("pop_{l}")).collect();
    let se_cols: Vec<String> = labels.iter().map(|l| format!("stderr_{l}")).collect();
    let mut rest = vec!["time"];
    rest.extend(pop_cols.iter().map(String::as_str));
    rest.extend(se_cols.iter().map(String::as_str));
    let mut table = Table::create(&output_path(prefix, "populations.csv"), &header(exp, &rest))?;
    let mut balance = Table::create(&output_path(prefix, "balance.csv"), &header(exp, &["balance_time", "stderr"]))?;
    let subset = single_excitation_indices(n);

    for point in exp.sweep_points() {
        let spec = exp.spec_at(&point);
        let res = timed(progress, &point_label(exp, &point), || ensemble(&spec, exp, &point))?;
        let pops = res.populations();
        for k in 0..res.times.len() {
            let mut row = vec![res.times[k]];
            row.extend(pops.iter().map(|p| p.values[k]));
            row.extend(pops.iter().map(|p| p.stderr[k]));
            table.row(&with_point(&point, &row))?;
        }
        let tol = exp.balance_tol;
        let est = res.series_functional(|t, s| balance_time_states(t, s, &subset, tol));
        let (value, se) = est.map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
        balance.row(&with_point(&point, &[value, se]))?;
        report.notes.push(format!("{}balance time {value:.4} ± {se:.4}", prefix_of(&point)));
    }
    report.outputs.push(table.finish()?);
    report.outputs.push(balance.finish()?);
    Ok(())
}

fn concurrence_values(states: &[DensityMatrix]) -> Option<Vec<f64>> {
    states.iter().map(|r| concurrence(r).ok()).collect()
}

fn concurrence_series(
    exp: &Experiment,
    prefix: &Path,
    report: &mut Report,
    progress: &mut impl FnMut(&str),
) -> Result<(), RunError> {
    let mut table = Table::create(&output_path(prefix, "concurrence.csv"), &header(exp, &["time", "concurrence", "stderr"]))?;
    let mut peaks = Table::create(
        &output_path(prefix, "peak.csv"),
        &header(exp, &["peak_time", "stderr_time", "peak_concurrence", "stderr_concurrence"]),
    )?;
    for point in exp.sweep_points() {
        let spec = exp.spec_at(&point);
        let res = timed(progress, &point_label(exp, &point), || ensemble(&spec, exp, &point))?;
        let series: ObservableSeries =
            res.observable(concurrence).map_err(|source| RunError::Metrics { at: at(&point), source })?;
        for k in 0..series.len() {
            table.row(&with_point(&point, &[series.times[k], series.values[k], series.stderr[k]]))?;
        }
        let time = res.series_functional(|t, s| peak_of(t, &concurrence_values(s)?).map(|p| p.0));
        let height = res.series_functional(|t, s| peak_of(t, &concurrence_values(s)?).map(|p| p.1));
        let split = |e: Option<nhqt::trajectory::Estimate>| e.map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
        let ((t, t_se), (c, c_se)) = (split(time), split(height));
        peaks.row(&with_point(&point, &[t, t_se, c, c_se]))?;
        report.notes.push(format!("{}peak concurrence {c:.4} ± {c_se:.4} at t = {t:.3} ± {t_se:.3}", prefix_of(&point)));
    }
    report.outputs.push(table.finish()?);
    report.outputs.push(peaks.finish()?);
    Ok(())
}

fn concurrence_map(
    exp: &Experiment,
    prefix: &Path,
    report: &mut Report,
    progress: &mut impl FnMut(&str),
) -> Result<(), RunError> {
    let grid = exp.gamma1_grid.as_deref().expect("validated: concurrence-map has a grid");
    let mut table =
        Table::create(&output_path(prefix, "concurrence_map.csv"), &header(exp, &["gamma1", "time", "concurrence"]))?;
    for point in exp.sweep_points() {
        for &g1 in grid {
            let mut spec = exp.spec_at(&point);
            spec.dissipation[0] = g1;
            let label = format!("{} gamma1={g1}", point_label(exp, &point));
            let res = timed(progress, &label, || ensemble(&spec, exp, &point))?;
            for (t, rho) in res.times.iter().zip(&res.rho) {
                let c = concurrence(rho).map_err(|source| RunError::Metrics { at: at(&point), source })?;
                table.row(&with_point(&point, &[g1, *t, c]))?;
            }
        }
    }
    report.outputs.push(table.finish()?);
    Ok(())
}

fn fidelity(
    exp: &Experiment,
    prefix: &Path,
    report: &mut Report,
    progress: &mut impl FnMut(&str),
) -> Result<(), RunError> {
    let mut table = Table::create(&output_path(prefix, "fidelity.csv"), &header(exp, &["time", "fidelity", "stderr"]))?;
    for point in exp.sweep_points() {
        let spec = exp.spec_at(&point);
        let res = timed(progress, &point_label(exp, &point), || ensemble(&spec, exp, &point))?;
        let metrics_err = |source| RunError::Metrics { at: at(&point), source };
        let reference: Vec<DensityMatrix> = no_jump_series(&spec, &res.times, &exp.initial)
            .map_err(metrics_err)?
            .iter()
            .map(|s| s.projector())
            .collect();
        let series = res.observable_at(|k, rho| uhlmann_fidelity(&reference[k], rho)).map_err(metrics_err)?;
        for k in 0..series.len() {
            table.row(&with_point(&point, &[series.times[k], series.values[k], series.stderr[k]]))?;
        }
        let last = series.values.last().copied().unwrap_or(f64::NAN);
        report.notes.push(format!("{}final fidelity {last:.4}", prefix_of(&point)));
    }
    report.outputs.push(table.finish()?);
    Ok(())
}

fn compile_photonic(
    exp: &Experiment,
    prefix: &Path,
    report: &mut Report,
    progress: &mut impl FnMut(&str),
) -> Result<(), RunError> {
    let settings = exp.photonic.as_ref().expect("validated: compile-photonic has settings");
    let cols = header(exp, &["step_index", "midpoint", "attenuation", "residual"]);
    let mut table = Table::create(&output_path(prefix, "photonic.csv"), &cols)?;
    let points = exp.sweep_points();
    for (i, point) in points.iter().enumerate() {
        let spec = exp.spec_at(point);
        let program = timed(progress, &point_label(exp, point), || {
            emit_program(&spec, settings.tau, settings.n_steps, exp.run.master_seed, &settings.options)
        })
        .map_err(|source| RunError::Photonic { at: at(point), source })?;
        for s in &program.steps {
            table.row(&with_point(point, &[s.step_index as f64, s.midpoint, s.attenuation, s.residual]))?;
        }
        let name = if points.len() == 1 { "program.json".to_string() } else { format!("program_{i}.json") };
        let path = output_path(prefix, &name);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, program.to_json())?;
        report.outputs.push((path, program.steps.len()));
        report.notes.push(format!("{}max step residual {:.3e}", prefix_of(point), program.max_residual()));
    }
    report.outputs.push(table.finish()?);
    Ok(())
}
