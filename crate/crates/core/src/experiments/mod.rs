//! Configuration-driven scenarios that write CSV data plus a JSON manifest
//! from which the run can be repeated bit for bit.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    EnsembleSection, InitialKind, NoiseConfig, OutputConfig, Pairing, Scenario, ScenarioConfig, SystemConfig,
};

use crate::dynamics::{evolve_trajectory, noise_displacement, IntegratorConfig, NoiseSpec, StepDiagnostics};
use crate::eigensolver::{classical_turning_points, solve_spectrum};
use crate::ensemble::{evolve_ensemble, histogram_density, sample_initial, EnsembleState};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricEntry, MetricSeries};
use crate::quantum::{PhysicalConstants, Superposition, CONSTANTS};
use crate::rng::RngStreamId;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub message: String,
    pub particle_index: Option<usize>,
}

impl Failure {
    fn from_error(e: &Error) -> Self {
        Self {
            message: e.to_string(),
            particle_index: match e {
                Error::Particle { index, .. } => Some(*index),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub status: RunStatus,
    pub master_seed: u64,
    pub code_version: String,
    pub constants: PhysicalConstants,
    pub config: ScenarioConfig,
    pub wall_time_seconds: f64,
    pub diagnostics: StepDiagnostics,
    pub golden_values: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub results: BTreeMap<String, Value>,
    pub failure: Option<Failure>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn golden_values() -> BTreeMap<String, f64> {
    let uniform = vec![1.0 / 200.0; 200];
    BTreeMap::from([
        ("chi2_uniform_vs_quantum_t0".into(), metrics::CHI2_UNIFORM_VS_QUANTUM_T0),
        (
            "chi2_uniform_vs_quantum_t0_200_bins".into(),
            metrics::CHI2_UNIFORM_VS_QUANTUM_T0_200_BINS,
        ),
        (
            "rel_entropy_uniform_vs_quantum_t0".into(),
            metrics::REL_ENTROPY_UNIFORM_VS_QUANTUM_T0,
        ),
        (
            "rel_entropy_uniform_vs_quantum_t0_200_bins".into(),
            metrics::REL_ENTROPY_UNIFORM_VS_QUANTUM_T0_200_BINS,
        ),
        ("sampling_floor_uniform_5000_200".into(), metrics::sampling_floor_of(&uniform, 5000)),
    ])
}

#[derive(Default)]
struct Outcome {
    outputs: Vec<String>,
    diagnostics: StepDiagnostics,
    results: BTreeMap<String, Value>,
}

/// Runs `scenario`, writing data files and `manifest.json` into
/// `cfg.output.dir`. A failed run still leaves a manifest flagged as such.
pub fn run_scenario(cfg: &ScenarioConfig, scenario: Scenario) -> Result<RunManifest> {
    cfg.validate(scenario)?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut echo = cfg.clone();
    echo.scenario = Some(scenario);
    let start = Instant::now();
    let mut outcome = Outcome::default();
    let result = run_inner(cfg, scenario, &dir, &mut outcome);
    let failure = result.as_ref().err().map(Failure::from_error);
    let manifest = RunManifest {
        scenario,
        status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Completed },
        master_seed: cfg.ensemble.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        constants: CONSTANTS,
        config: echo,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        diagnostics: outcome.diagnostics,
        golden_values: golden_values(),
        outputs: outcome.outputs,
        results: outcome.results,
        failure,
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    result.map(|_| manifest)
}

/// Repeats the run recorded in a manifest, writing into `out` (default:
/// `rerun/` next to the manifest).
pub fn rerun_from_manifest(manifest_path: &Path, out: Option<PathBuf>) -> Result<RunManifest> {
    let manifest = RunManifest::read(manifest_path)?;
    let mut cfg = manifest.config;
    cfg.output.dir = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("rerun"));
    run_scenario(&cfg, manifest.scenario)
}

fn run_inner(cfg: &ScenarioConfig, scenario: Scenario, dir: &Path, out: &mut Outcome) -> Result<()> {
    match scenario {
        Scenario::Relax => relax(cfg, dir, out),
        Scenario::Sweep => sweep(cfg, dir, out),
        Scenario::Fields => fields(cfg, dir, out),
        Scenario::Trajectories => trajectories(cfg, dir, out),
        Scenario::StationaryDiffusion => stationary_diffusion(cfg, dir, out),
        Scenario::CalibrateNoise => calibrate_noise(cfg, dir, out),
        Scenario::Eigen => eigen(cfg, dir, out),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path, out: &mut Outcome) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    out.outputs.push(
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricRow<'a> {
    t_periods: f64,
    chi2_l1: f64,
    rel_entropy: f64,
    label: &'a str,
}

fn write_metrics(path: &Path, series: &[MetricSeries], out: &mut Outcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in series {
        for e in &s.entries {
            w.serialize(MetricRow {
                t_periods: e.t_periods,
                chi2_l1: e.chi2_l1,
                rel_entropy: e.rel_entropy,
                label: &s.label,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    finish(w, path, out)
}

/// What an ensemble histogram is compared against.
#[derive(Clone, Copy)]
enum Reference {
    Quantum,
    Uniform,
}

fn measure(state: &EnsembleState, s: &Superposition, bins: usize, reference: Reference) -> Result<(f64, f64)> {
    let hist = histogram_density(state, bins)?;
    Ok(match reference {
        Reference::Quantum => (
            metrics::l1_distance(&hist, s, state.time),
            metrics::relative_entropy(&hist, s, state.time),
        ),
        Reference::Uniform => {
            let uniform = vec![1.0 / bins as f64; bins];
            let fractions = hist.fractions();
            (
                metrics::l1_between(&fractions, &uniform),
                metrics::relative_entropy_between(&fractions, &uniform, hist.bin_width()),
            )
        }
    })
}

/// Output instants in periods: 0, every, 2·every, … up to `duration`.
fn output_times(duration: f64, every: f64) -> Vec<f64> {
    let n = (duration / every - 1e-9).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| ((k as f64 * every * 1e9).round() / 1e9).min(duration))
        .collect()
}

struct Run {
    label: String,
    state: EnsembleState,
}

/// Evolves each run through the output instants, recording metrics.
#[allow(clippy::too_many_arguments)]
fn track(
    s: &Superposition,
    noise: &NoiseSpec,
    icfg: &IntegratorConfig,
    runs: Vec<Run>,
    bins: usize,
    duration: f64,
    every: f64,
    reference: Reference,
) -> Result<(Vec<MetricSeries>, StepDiagnostics)> {
    let period = s.reference_period();
    let times = output_times(duration, every);
    let mut series = Vec::with_capacity(runs.len());
    let mut diagnostics = StepDiagnostics::default();
    for run in runs {
        let mut m = MetricSeries::new(run.label);
        let mut state = run.state;
        for (k, &tp) in times.iter().enumerate() {
            if k > 0 {
                state = evolve_ensemble(&state, tp * period, s, noise, icfg)?;
            }
            let (chi2_l1, rel_entropy) = measure(&state, s, bins, reference)?;
            m.push(MetricEntry {
                t_periods: tp,
                chi2_l1,
                rel_entropy,
            });
        }
        diagnostics += state.diagnostics;
        series.push(m);
    }
    Ok((series, diagnostics))
}

fn derived_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn initial_label(kind: InitialKind) -> &'static str {
    match kind {
        InitialKind::Uniform => "uniform",
        InitialKind::Quantum => "quantum",
        InitialKind::StratifiedQuantum => "stratified_quantum",
        InitialKind::FromFile => "from_file",
    }
}

/// Mean χ² over the second half of a series.
fn late_mean(series: &MetricSeries) -> f64 {
    let last = series.entries.last().map_or(0.0, |e| e.t_periods);
    series.mean_chi2_after(0.5 * last).unwrap_or(f64::NAN)
}

struct PairSummary {
    particles: usize,
    floor: f64,
    floor_source: &'static str,
    tau: Option<f64>,
    asymptote_main: Option<f64>,
    asymptote_comparison: Option<f64>,
    chi2_initial: f64,
}

/// Main run from the configured start plus an optional comparison run
/// started from |Ψ(x,0)|².
fn relax_pair(
    cfg: &ScenarioConfig,
    s: &Superposition,
    noise: &NoiseSpec,
    particles: usize,
    duration: f64,
    every: f64,
    suffix: &str,
) -> Result<(Vec<MetricSeries>, StepDiagnostics, PairSummary)> {
    let ens = &cfg.ensemble;
    let seed = ens.seed;
    let main = sample_initial(&cfg.ensemble_config(ens.initial, particles, seed)?, s, 0.0)?;
    let n = main.len();
    let mut runs = vec![Run {
        label: format!("{}{suffix}", initial_label(ens.initial)),
        state: main,
    }];
    let comparison_seed = match ens.pairing {
        Pairing::Paired => Some(seed),
        Pairing::Independent => Some(derived_seed(seed)),
        Pairing::None => None,
    };
    if let Some(cs) = comparison_seed {
        let state = sample_initial(&cfg.ensemble_config(InitialKind::Quantum, n, cs)?, s, 0.0)?;
        runs.push(Run {
            label: format!("quantum_reference{suffix}"),
            state,
        });
    }
    let (series, diagnostics) = track(s, noise, &cfg.integrator, runs, ens.bins, duration, every, Reference::Quantum)?;
    let comparison = series.get(1).map(late_mean);
    let (floor, floor_source) = match comparison {
        Some(c) => (c, "comparison_late_mean"),
        None => (
            metrics::period_averaged_floor(n, ens.bins, s, 20)?,
            "sampling_floor",
        ),
    };
    let tau = metrics::relaxation_time(&series[0], floor)?;
    let asymptote_main = tau.and_then(|t| series[0].mean_chi2_after(t));
    let summary = PairSummary {
        particles: n,
        floor,
        floor_source,
        tau,
        asymptote_main,
        asymptote_comparison: comparison,
        chi2_initial: series[0].entries[0].chi2_l1,
    };
    Ok((series, diagnostics, summary))
}

fn summary_json(p: &PairSummary) -> Value {
    json!({
        "particles": p.particles,
        "floor": p.floor,
        "floor_source": p.floor_source,
        "relaxation_time_periods": p.tau,
        "asymptote_main": p.asymptote_main,
        "asymptote_comparison": p.asymptote_comparison,
        "chi2_initial": p.chi2_initial,
    })
}

fn relax(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let noise = cfg.noise()?;
    let every = cfg.every_periods(Scenario::Relax);
    let (series, diagnostics, summary) = relax_pair(
        cfg,
        &s,
        &noise,
        cfg.ensemble.particles,
        cfg.output.duration_periods,
        every,
        "",
    )?;
    write_metrics(&dir.join("metrics.csv"), &series, out)?;
    out.diagnostics = diagnostics;
    out.results.insert("period_fs".into(), json!(s.reference_period()));
    out.results.insert("relax".into(), summary_json(&summary));
    if summary.particles >= cfg.ensemble.bins {
        let floor = metrics::period_averaged_floor(summary.particles, cfg.ensemble.bins, &s, 20)?;
        out.results.insert("sampling_floor".into(), json!(floor));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    c_value: f64,
    particles: usize,
    duration_periods: f64,
    tau_periods: Option<f64>,
    floor: f64,
    asymptote_main: Option<f64>,
    asymptote_comparison: Option<f64>,
}

fn sweep(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let every = cfg.every_periods(Scenario::Sweep);
    let entries: Vec<(f64, f64)> = cfg.noise.sweep.iter().copied().zip(cfg.sweep_durations()).collect();
    let one = |&(c, duration): &(f64, f64)| {
        let noise = NoiseSpec::new(c, cfg.noise.model)?;
        relax_pair(cfg, &s, &noise, cfg.particles_for(c), duration, every, &format!("@C={c}"))
    };
    let results: Vec<_> = if cfg.noise.parallel_sweep {
        entries.par_iter().map(one).collect::<Result<_>>()?
    } else {
        entries.iter().map(one).collect::<Result<_>>()?
    };
    let mut all_series = Vec::new();
    let mut rows = Vec::new();
    let mut per_c = Vec::new();
    for ((c, duration), (series, diagnostics, summary)) in entries.iter().zip(results) {
        all_series.extend(series);
        out.diagnostics += diagnostics;
        rows.push(SweepRow {
            c_value: *c,
            particles: summary.particles,
            duration_periods: *duration,
            tau_periods: summary.tau,
            floor: summary.floor,
            asymptote_main: summary.asymptote_main,
            asymptote_comparison: summary.asymptote_comparison,
        });
        let mut j = summary_json(&summary);
        j["c_value"] = json!(c);
        per_c.push(j);
    }
    write_metrics(&dir.join("metrics.csv"), &all_series, out)?;
    let path = dir.join("relaxation_times.csv");
    let mut w = csv_writer(&path)?;
    for row in &rows {
        w.serialize(row).map_err(|e| Error::csv(&path, e))?;
    }
    finish(w, &path, out)?;
    out.results.insert("sweep".into(), Value::Array(per_c));
    Ok(())
}

#[derive(Serialize)]
struct FieldRow {
    x_angstrom: f64,
    t_periods: f64,
    density_per_angstrom: f64,
    velocity_angstrom_per_fs: f64,
    uqu_ev: f64,
}

fn fields(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let period = s.reference_period();
    let (nx, nt) = (cfg.output.grid_x, cfg.output.grid_t);
    let length = s.length();
    let path = dir.join("fields.csv");
    let mut w = csv_writer(&path)?;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_u = f64::INFINITY;
    let mut nodes = 0usize;
    for k in 0..nt {
        let tp = k as f64 / nt as f64;
        let rows: Vec<FieldRow> = (0..nx)
            .into_par_iter()
            .map(|j| {
                let x = length * j as f64 / (nx - 1) as f64;
                let f = s.field_sample(x, tp * period)?;
                Ok(FieldRow {
                    x_angstrom: x,
                    t_periods: tp,
                    density_per_angstrom: f.density,
                    velocity_angstrom_per_fs: f.velocity,
                    uqu_ev: f.quantum_potential,
                })
            })
            .collect::<Result<_>>()?;
        for row in rows {
            if row.uqu_ev.is_nan() {
                nodes += 1;
            } else {
                max_u = max_u.max(row.uqu_ev);
                min_u = min_u.min(row.uqu_ev);
            }
            w.serialize(row).map_err(|e| Error::csv(&path, e))?;
        }
    }
    finish(w, &path, out)?;
    let energies: Vec<f64> = s.terms().map(|(_, e)| e.energy()).collect();
    out.results.insert("period_fs".into(), json!(period));
    out.results.insert("energies_ev".into(), json!(energies));
    out.results.insert("uqu_max_ev".into(), json!(max_u));
    out.results.insert("uqu_min_ev".into(), json!(min_u));
    out.results.insert("node_points".into(), json!(nodes));
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    traj_id: usize,
    t_periods: f64,
    x_angstrom: f64,
}

fn trajectories(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let period = s.reference_period();
    let m = cfg.ensemble.trajectories;
    let duration = cfg.output.duration_periods;
    let stride = ((cfg.every_periods(Scenario::Trajectories) * cfg.integrator.steps_per_period as f64).round() as usize).max(1);
    let slice = s.slice(0.0);
    let starts: Vec<f64> = (0..m)
        .map(|j| s.quantile_at(&slice, (j as f64 + 0.5) / m as f64))
        .collect::<Result<_>>()?;
    let noisy = cfg.noise()?;
    for (name, noise) in [("trajectories_noiseless.csv", NoiseSpec::silent()), ("trajectories_noisy.csv", noisy)] {
        let records = starts
            .par_iter()
            .enumerate()
            .map(|(j, &x0)| {
                let stream = RngStreamId::new(cfg.ensemble.seed, j as u64, 0);
                evolve_trajectory(x0, 0.0, duration * period, &s, &noise, &cfg.integrator, stream).map_err(|e| {
                    Error::Particle {
                        index: j,
                        source: Box::new(e),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(name);
        let mut w = csv_writer(&path)?;
        for (j, r) in records.iter().enumerate() {
            let last = r.samples.len() - 1;
            for (i, &(t, x)) in r.samples.iter().enumerate() {
                if i % stride == 0 || i == last {
                    w.serialize(TrajectoryRow {
                        traj_id: j,
                        t_periods: t / period,
                        x_angstrom: x,
                    })
                    .map_err(|e| Error::csv(&path, e))?;
                }
            }
            out.diagnostics.substep_events += r.substep_events;
            out.diagnostics.capped_events += r.capped_events;
        }
        finish(w, &path, out)?;
    }
    out.results.insert("period_fs".into(), json!(period));
    out.results.insert("sample_stride_steps".into(), json!(stride));
    Ok(())
}

fn stationary_diffusion(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let noise = cfg.noise()?;
    let ens = &cfg.ensemble;
    let state = sample_initial(&cfg.ensemble_config(ens.initial, ens.particles, ens.seed)?, &s, 0.0)?;
    let n = state.len();
    let runs = vec![Run {
        label: format!("{}_vs_uniform", initial_label(ens.initial)),
        state,
    }];
    let (series, diagnostics) = track(
        &s,
        &noise,
        &cfg.integrator,
        runs,
        ens.bins,
        cfg.output.duration_periods,
        cfg.every_periods(Scenario::StationaryDiffusion),
        Reference::Uniform,
    )?;
    write_metrics(&dir.join("metrics.csv"), &series, out)?;
    out.diagnostics = diagnostics;
    let floor = metrics::sampling_floor_of(&vec![1.0 / ens.bins as f64; ens.bins], n);
    let first_below = series[0]
        .entries
        .iter()
        .find(|e| e.chi2_l1 < 1.5 * floor)
        .map(|e| e.t_periods);
    out.results.insert("period_fs".into(), json!(s.reference_period()));
    out.results.insert("uniform_sampling_floor".into(), json!(floor));
    out.results.insert("first_below_1_5_floor_periods".into(), json!(first_below));
    out.results.insert(
        "relaxation_time_periods".into(),
        json!(metrics::relaxation_time(&series[0], floor)?),
    );
    Ok(())
}

#[derive(Serialize)]
struct CalibrationRow {
    c_value: f64,
    noise_rms_speed: f64,
    mean_bohm_speed: f64,
    ratio: f64,
}

/// Time average over one noiseless period of the ensemble-mean |v|.
fn mean_bohm_speed(cfg: &ScenarioConfig, s: &Superposition, samples: usize) -> Result<f64> {
    let period = s.reference_period();
    let mut state = sample_initial(
        &cfg.ensemble_config(InitialKind::StratifiedQuantum, cfg.ensemble.particles, cfg.ensemble.seed)?,
        s,
        0.0,
    )?;
    let silent = NoiseSpec::silent();
    let mut total = 0.0;
    for k in 0..samples {
        if k > 0 {
            state = evolve_ensemble(&state, period * k as f64 / samples as f64, s, &silent, &cfg.integrator)?;
        }
        let slice = s.slice(state.time);
        let speeds: Vec<f64> = state
            .positions
            .iter()
            .map(|&x| s.raw_velocity(&slice, x).0.abs())
            .filter(|v| v.is_finite())
            .collect();
        total += speeds.iter().sum::<f64>() / speeds.len().max(1) as f64;
    }
    Ok(total / samples as f64)
}

/// RMS over particles of the summed noise displacement across one period,
/// divided by the period.
fn noise_rms_speed(cfg: &ScenarioConfig, noise: &NoiseSpec, period: f64) -> f64 {
    let steps = cfg.integrator.steps_per_period as u64;
    let dt = period / steps as f64;
    let n = cfg.ensemble.particles as u64;
    let sum_sq: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: f64 = (0..steps)
                .map(|k| {
                    let xi = RngStreamId::new(cfg.ensemble.seed, i, k).generator().normal();
                    noise_displacement(noise, dt, period, xi)
                })
                .sum();
            d * d
        })
        .sum();
    (sum_sq / n as f64).sqrt() / period
}

fn calibrate_noise(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let s = cfg.superposition()?;
    let period = s.reference_period();
    let mean = mean_bohm_speed(cfg, &s, 50)?;
    let mut values = vec![cfg.noise.intensity];
    for &c in &cfg.noise.sweep {
        if !values.contains(&c) {
            values.push(c);
        }
    }
    let path = dir.join("calibration.csv");
    let mut w = csv_writer(&path)?;
    for c in values {
        let noise = NoiseSpec::new(c, cfg.noise.model)?;
        let rms = noise_rms_speed(cfg, &noise, period);
        w.serialize(CalibrationRow {
            c_value: c,
            noise_rms_speed: rms,
            mean_bohm_speed: mean,
            ratio: rms / mean,
        })
        .map_err(|e| Error::csv(&path, e))?;
    }
    finish(w, &path, out)?;
    out.results.insert("period_fs".into(), json!(period));
    out.results.insert("mean_bohm_speed".into(), json!(mean));
    Ok(())
}

#[derive(Serialize)]
struct LevelRow {
    level: usize,
    energy_ev: f64,
}

#[derive(Serialize)]
struct AmplitudeRow {
    level: usize,
    x_angstrom: f64,
    amplitude: f64,
}

fn eigen(cfg: &ScenarioConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let grid = cfg.potential()?.ok_or_else(|| Error::Config("eigen needs system.potential_file".into()))?;
    let pairs = solve_spectrum(&grid, cfg.particle()?, cfg.system.levels)?;
    let path = dir.join("eigenvalues.csv");
    let mut w = csv_writer(&path)?;
    for (k, p) in pairs.iter().enumerate() {
        w.serialize(LevelRow {
            level: k + 1,
            energy_ev: p.energy,
        })
        .map_err(|e| Error::csv(&path, e))?;
    }
    finish(w, &path, out)?;
    let path = dir.join("eigenfunctions.csv");
    let mut w = csv_writer(&path)?;
    let xs: Vec<f64> = grid.samples().map(|(x, _)| x).collect();
    for (k, p) in pairs.iter().enumerate() {
        for (&x, &a) in xs.iter().zip(&p.amplitude) {
            w.serialize(AmplitudeRow {
                level: k + 1,
                x_angstrom: x,
                amplitude: a,
            })
            .map_err(|e| Error::csv(&path, e))?;
        }
    }
    finish(w, &path, out)?;
    let levels: Vec<Value> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            json!({
                "level": k + 1,
                "energy_ev": p.energy,
                "allowed_regions": classical_turning_points(&grid, p.energy),
            })
        })
        .collect();
    out.results.insert("levels".into(), Value::Array(levels));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(dir: &Path) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.output.dir = dir.to_path_buf();
        cfg.output.duration_periods = 0.3;
        cfg.ensemble.particles = 300;
        cfg
    }

    #[test]
    fn output_times_cover_the_run() {
        assert_eq!(output_times(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(output_times(0.3, 0.1), vec![0.0, 0.1, 0.2, 0.3]);
        assert_eq!(output_times(1.0, 0.4), vec![0.0, 0.4, 0.8, 1.0]);
    }

    #[test]
    fn failure_carries_particle_index() {
        let e = Error::Particle {
            index: 17,
            source: Box::new(Error::NumericalFailure {
                t: 0.1,
                x: f64::NAN,
                seed: 0,
                particle: 17,
                step: 3,
            }),
        };
        let f = Failure::from_error(&e);
        assert_eq!(f.particle_index, Some(17));
        assert!(f.message.contains("particle 17"));
        assert_eq!(Failure::from_error(&Error::Config("x".into())).particle_index, None);
    }

    #[test]
    fn aborted_run_leaves_flagged_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let positions = dir.path().join("positions.csv");
        std::fs::write(&positions, "x_angstrom\n0.5\n7.0\n").unwrap();
        let mut cfg = quick(&dir.path().join("out"));
        cfg.ensemble.initial = InitialKind::FromFile;
        cfg.ensemble.positions_file = Some(positions);
        assert!(run_scenario(&cfg, Scenario::Relax).is_err());
        let m = RunManifest::read(&dir.path().join("out").join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert!(m.failure.unwrap().message.contains("outside"));
    }

    #[test]
    fn relax_series_share_times_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path());
        let m = run_scenario(&cfg, Scenario::Relax).unwrap();
        assert_eq!(m.outputs, vec!["metrics.csv".to_string()]);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t_periods,chi2_l1,rel_entropy,label"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows.iter().filter(|r| r[3] == "uniform").count(), 4);
        assert_eq!(rows.iter().filter(|r| r[3] == "quantum_reference").count(), 4);
        for r in &rows {
            let chi: f64 = r[1].parse().unwrap();
            assert!((0.0..=2.0).contains(&chi));
        }
    }

    #[test]
    fn fields_of_a_single_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick(dir.path());
        cfg.system.states = vec![1];
        cfg.system.amplitudes = vec![1.0];
        cfg.output.grid_x = 21;
        cfg.output.grid_t = 4;
        let m = run_scenario(&cfg, Scenario::Fields).unwrap();
        assert_eq!(m.results["node_points"], json!(8));
        let mut rdr = csv::Reader::from_path(dir.path().join("fields.csv")).unwrap();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let u: f64 = rec[4].parse().unwrap();
            let v: f64 = rec[3].parse().unwrap();
            if !u.is_nan() {
                assert!((u - 9.400754).abs() < 1e-5, "{u}");
                assert!(v.abs() < 1e-9);
            }
            rows += 1;
        }
        assert_eq!(rows, 84);
    }

    #[test]
    fn eigen_scenario_writes_levels() {
        let dir = tempfile::tempdir().unwrap();
        let grid = crate::eigensolver::PotentialGrid::from_fn(crate::quantum::BoxGeometry::default(), 401, |_| 0.0).unwrap();
        let potential = dir.path().join("flat.csv");
        grid.write_csv(&potential).unwrap();
        let mut cfg = quick(&dir.path().join("out"));
        cfg.system.potential_file = Some(potential);
        cfg.system.levels = 3;
        let m = run_scenario(&cfg, Scenario::Eigen).unwrap();
        assert_eq!(m.outputs, vec!["eigenvalues.csv".to_string(), "eigenfunctions.csv".to_string()]);
        let text = std::fs::read_to_string(dir.path().join("out/eigenvalues.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        let levels = m.results["levels"].as_array().unwrap();
        let e2 = levels[1]["energy_ev"].as_f64().unwrap();
        assert!((e2 / 37.603 - 1.0).abs() < 1e-3, "{e2}");
    }

    #[test]
    fn potential_file_superposition_matches_box() {
        let dir = tempfile::tempdir().unwrap();
        let grid = crate::eigensolver::PotentialGrid::from_fn(crate::quantum::BoxGeometry::default(), 2001, |_| 0.0).unwrap();
        let potential = dir.path().join("flat.csv");
        grid.write_csv(&potential).unwrap();
        let mut cfg = quick(dir.path());
        cfg.system.potential_file = Some(potential);
        let numeric = cfg.superposition().unwrap();
        let exact = Superposition::two_state_default();
        for x in [0.1, 0.7, 1.3, 1.9] {
            let a = numeric.density(x, 0.02).unwrap();
            let b = exact.density(x, 0.02).unwrap();
            assert!((a - b).abs() < 1e-3, "{x}: {a} {b}");
        }
        assert!((numeric.reference_period() / exact.reference_period() - 1.0).abs() < 1e-3);
        cfg.system.length = Some(3.0);
        assert!(cfg.superposition().is_err());
    }
}
