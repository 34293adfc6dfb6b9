//! Statistical ensembles of independent particles: initial sampling,
//! deterministic parallel evolution, and histogram density estimates.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, step_count, IntegratorConfig, NoiseSpec, StepDiagnostics};
use crate::error::{Error, Result};
use crate::quantum::Superposition;
use crate::rng::RngStreamId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    #[default]
    Uniform,
    /// i.i.d. draws from |Ψ(x, t0)|²
    Quantum,
    /// x_i = F⁻¹((i + ½)/N), no sampling noise
    StratifiedQuantum,
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    pub initial: InitialDistribution,
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_particles: 5000,
            initial: InitialDistribution::Uniform,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub positions: Vec<f64>,
    /// box length, Å
    pub length: f64,
    /// fs
    pub time: f64,
    pub master_seed: u64,
    pub steps_taken: u64,
    pub diagnostics: StepDiagnostics,
}

impl EnsembleState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn sample_initial(cfg: &EnsembleConfig, s: &Superposition, t0: f64) -> Result<EnsembleState> {
    let length = s.length();
    let positions = match &cfg.initial {
        InitialDistribution::FromFile(path) => {
            let positions = read_positions_csv(path)?;
            if positions.is_empty() {
                return Err(Error::Validation(format!("{}: no positions", path.display())));
            }
            if let Some((i, x)) = positions.iter().enumerate().find(|(_, x)| !s.geometry().contains(**x)) {
                return Err(Error::Validation(format!(
                    "{}: position {x} (row {}) lies outside [0, {length}]",
                    path.display(),
                    i + 1
                )));
            }
            positions
        }
        other => {
            let n = cfg.n_particles;
            if n == 0 {
                return Err(Error::InvalidParameter("ensemble needs at least one particle".into()));
            }
            let uniforms = (0..n as u64).map(|i| RngStreamId::particle_generator(cfg.master_seed, i).uniform());
            match other {
                InitialDistribution::Uniform => uniforms.map(|u| u * length).collect(),
                InitialDistribution::Quantum => {
                    let slice = s.slice(t0);
                    let u: Vec<f64> = uniforms.collect();
                    u.par_iter()
                        .map(|&u| s.quantile_at(&slice, u))
                        .collect::<Result<Vec<_>>>()?
                }
                InitialDistribution::StratifiedQuantum => {
                    let slice = s.slice(t0);
                    (0..n)
                        .into_par_iter()
                        .map(|i| s.quantile_at(&slice, (i as f64 + 0.5) / n as f64))
                        .collect::<Result<Vec<_>>>()?
                }
                InitialDistribution::FromFile(_) => unreachable!(),
            }
        }
    };
    Ok(EnsembleState {
        positions,
        length,
        time: t0,
        master_seed: cfg.master_seed,
        steps_taken: 0,
        diagnostics: StepDiagnostics::default(),
    })
}

/// Advances every particle to `t1`. Particle `i` draws its noise from the
/// streams (seed, i, step), so the result does not depend on the number of
/// worker threads.
pub fn evolve_ensemble(
    state: &EnsembleState,
    t1: f64,
    s: &Superposition,
    noise: &NoiseSpec,
    cfg: &IntegratorConfig,
) -> Result<EnsembleState> {
    cfg.validate()?;
    if !(t1 > state.time) {
        return Err(Error::InvalidParameter(format!(
            "target time {t1} fs must exceed the current time {} fs",
            state.time
        )));
    }
    let period = s.reference_period();
    let geometry = s.geometry();
    let results: Vec<(f64, StepDiagnostics)> = state
        .positions
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let stream = RngStreamId::new(state.master_seed, i as u64, state.steps_taken);
            integrate(s, geometry, period, x, state.time, t1, noise, cfg, stream, None).map_err(|e| Error::Particle {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = state.diagnostics;
    let positions = results
        .into_iter()
        .map(|(x, d)| {
            diagnostics += d;
            x
        })
        .collect();
    Ok(EnsembleState {
        positions,
        length: state.length,
        time: t1,
        master_seed: state.master_seed,
        steps_taken: state.steps_taken + step_count(period, cfg, state.time, t1),
        diagnostics,
    })
}

/// Equal-width histogram over [0, L], normalised as a density.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    pub length: f64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HistogramDensity {
    pub fn from_positions(positions: &[f64], length: f64, bins: usize) -> Self {
        assert!(bins >= 1, "histogram needs at least one bin");
        let mut counts = vec![0u64; bins];
        let scale = bins as f64 / length;
        for &x in positions {
            let k = ((x * scale) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self {
            length,
            counts,
            total: positions.len() as u64,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.length / self.bins() as f64
    }

    /// n_k / N per bin.
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// n_k / (N Δx) per bin, Å⁻¹.
    pub fn density(&self) -> Vec<f64> {
        let w = self.bin_width();
        self.fractions().into_iter().map(|f| f / w).collect()
    }
}

pub fn histogram_density(state: &EnsembleState, bins: usize) -> Result<HistogramDensity> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bin count must be at least 1".into()));
    }
    Ok(HistogramDensity::from_positions(&state.positions, state.length, bins))
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    x_angstrom: f64,
}

/// Reads a one-column CSV with header `x_angstrom`.
pub fn read_positions_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?;
    if headers.len() != 1 || &headers[0] != "x_angstrom" {
        return Err(Error::Format(format!(
            "{}: expected header `x_angstrom`",
            path.display()
        )));
    }
    reader
        .deserialize::<PositionRow>()
        .map(|r| r.map(|r| r.x_angstrom).map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_positions_csv(path: &Path, positions: &[f64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for &x in positions {
        writer
            .serialize(PositionRow { x_angstrom: x })
            .map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseModel;
    use crate::metrics::{l1_distance, sampling_floor, sampling_floor_of};

    fn config(n: usize, initial: InitialDistribution, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            n_particles: n,
            initial,
            master_seed: seed,
        }
    }

    #[test]
    fn uniform_sample_mean_obeys_clt() {
        let s = Superposition::two_state_default();
        let bound = 3.0 * (2.0 / 12f64.sqrt()) / 5000f64.sqrt();
        let inside = (0..100)
            .filter(|&seed| {
                let st = sample_initial(&config(5000, InitialDistribution::Uniform, seed), &s, 0.0).unwrap();
                let mean = st.positions.iter().sum::<f64>() / st.len() as f64;
                (mean - 1.0).abs() <= bound
            })
            .count();
        assert!(inside >= 99, "{inside}");
    }

    #[test]
    fn quantum_sample_left_fraction() {
        let s = Superposition::two_state_default();
        let st = sample_initial(&config(5000, InitialDistribution::Quantum, 7), &s, 0.0).unwrap();
        let left = st.positions.iter().filter(|&&x| x < 1.0).count() as f64 / 5000.0;
        assert!((left - 0.924413).abs() < 0.012, "{left}");
    }

    #[test]
    fn stratified_sample_matches_cdf() {
        let s = Superposition::two_state_default();
        for n in [1, 17, 400] {
            let st = sample_initial(&config(n, InitialDistribution::StratifiedQuantum, 0), &s, 0.01).unwrap();
            let mut sorted = st.positions.clone();
            sorted.sort_by(f64::total_cmp);
            for (i, &x) in sorted.iter().enumerate() {
                let f = s.cdf(x, 0.01).unwrap();
                let below = i as f64 / n as f64;
                let above = (i + 1) as f64 / n as f64;
                let gap = (f - below).abs().max((f - above).abs());
                assert!(gap <= 1.0 / n as f64 + 1e-9, "n={n} i={i} gap={gap}");
            }
        }
    }

    #[test]
    fn positions_file_round_trip_and_validation() {
        let s = Superposition::two_state_default();
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        write_positions_csv(&good, &[0.0, 0.5, 2.0]).unwrap();
        let st = sample_initial(&config(99, InitialDistribution::FromFile(good), 0), &s, 0.0).unwrap();
        assert_eq!(st.positions, vec![0.0, 0.5, 2.0]);

        let bad = dir.path().join("bad.csv");
        write_positions_csv(&bad, &[0.5, 2.5]).unwrap();
        let err = sample_initial(&config(2, InitialDistribution::FromFile(bad), 0), &s, 0.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");

        let header = dir.path().join("header.csv");
        std::fs::write(&header, "x\n0.5\n").unwrap();
        assert!(sample_initial(&config(1, InitialDistribution::FromFile(header), 0), &s, 0.0).is_err());
    }

    #[test]
    fn zero_particles_rejected() {
        let s = Superposition::two_state_default();
        assert!(sample_initial(&config(0, InitialDistribution::Uniform, 0), &s, 0.0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.002).chain([2.0]).collect();
        let h = HistogramDensity::from_positions(&xs, 2.0, 200);
        assert_eq!(h.counts.iter().sum::<u64>(), 1001);
        assert_eq!(h.counts[199], 6);
        let mass: f64 = h.density().iter().map(|d| d * h.bin_width()).sum();
        assert!((mass - 1.0).abs() < 1e-12);

        let clump = HistogramDensity::from_positions(&[0.731; 50], 2.0, 200);
        let d = clump.density();
        assert!((d[73] - 100.0).abs() < 1e-12);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn uniform_floor_matches_monte_carlo() {
        let s = Superposition::two_state_default();
        let exact = vec![1.0 / 200.0; 200];
        let mean = (0..100)
            .map(|seed| {
                let st = sample_initial(&config(5000, InitialDistribution::Uniform, seed), &s, 0.0).unwrap();
                let h = histogram_density(&st, 200).unwrap();
                crate::metrics::l1_between(&h.fractions(), &exact)
            })
            .sum::<f64>()
            / 100.0;
        let floor = sampling_floor_of(&exact, 5000);
        assert!((mean / floor - 1.0).abs() < 0.05, "{mean} vs {floor}");
    }

    #[test]
    fn quantum_floor_matches_fresh_samples() {
        let s = Superposition::two_state_default();
        let t = 0.04;
        let mean = (0..50)
            .map(|seed| {
                let st = sample_initial(&config(5000, InitialDistribution::Quantum, seed), &s, t).unwrap();
                l1_distance(&histogram_density(&st, 200).unwrap(), &s, t)
            })
            .sum::<f64>()
            / 50.0;
        let floor = sampling_floor(5000, 200, &s, t).unwrap();
        assert!((mean / floor - 1.0).abs() < 0.2, "{mean} vs {floor}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = Superposition::two_state_default();
        let st = sample_initial(&config(300, InitialDistribution::Uniform, 3), &s, 0.0).unwrap();
        let noise = NoiseSpec::new(0.01, NoiseModel::Wiener).unwrap();
        let cfg = IntegratorConfig::default();
        let t1 = 0.5 * s.reference_period();
        let run = |workers: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
            pool.install(|| evolve_ensemble(&st, t1, &s, &noise, &cfg).unwrap())
        };
        let one = run(1);
        let many = run(4);
        assert_eq!(one.positions.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   many.positions.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(one.diagnostics, many.diagnostics);
    }

    #[test]
    fn split_evolution_continues_the_streams() {
        let s = Superposition::two_state_default();
        let st = sample_initial(&config(50, InitialDistribution::Uniform, 9), &s, 0.0).unwrap();
        let noise = NoiseSpec::new(0.1, NoiseModel::Wiener).unwrap();
        let cfg = IntegratorConfig::default();
        let period = s.reference_period();
        let direct = evolve_ensemble(&st, period, &s, &noise, &cfg).unwrap();
        let half = evolve_ensemble(&st, 0.5 * period, &s, &noise, &cfg).unwrap();
        let split = evolve_ensemble(&half, period, &s, &noise, &cfg).unwrap();
        assert_eq!(direct.steps_taken, split.steps_taken);
        for (a, b) in direct.positions.iter().zip(&split.positions) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn noiseless_quantum_ensemble_stays_at_floor() {
        let s = Superposition::two_state_default();
        let period = s.reference_period();
        let mut st = sample_initial(&config(5000, InitialDistribution::Quantum, 11), &s, 0.0).unwrap();
        let noise = NoiseSpec::silent();
        let cfg = IntegratorConfig::default();
        for k in 1..=20 {
            let t = 0.5 * k as f64 * period;
            st = evolve_ensemble(&st, t, &s, &noise, &cfg).unwrap();
            let chi = l1_distance(&histogram_density(&st, 200).unwrap(), &s, t);
            let floor = sampling_floor(5000, 200, &s, t).unwrap();
            assert!(chi < 1.5 * floor, "t={k}/2 periods: {chi} vs {floor}");
        }
    }

    #[test]
    fn noiseless_evolution_preserves_order() {
        let s = Superposition::two_state_default();
        let period = s.reference_period();
        let cfg = IntegratorConfig::default();
        // Uniform starts put particles in the nodal region, where the flow
        // compresses neighbours below the integration error; allow that much.
        for (initial, slack) in [(InitialDistribution::StratifiedQuantum, 0.0), (InitialDistribution::Uniform, 1e-6)] {
            let st = sample_initial(&config(400, initial, 5), &s, 0.0).unwrap();
            let mut order: Vec<usize> = (0..st.len()).collect();
            order.sort_by(|&a, &b| st.positions[a].total_cmp(&st.positions[b]));
            let out = evolve_ensemble(&st, 2.3 * period, &s, &NoiseSpec::silent(), &cfg).unwrap();
            for w in order.windows(2) {
                let (a, b) = (out.positions[w[0]], out.positions[w[1]]);
                assert!(a <= b + slack, "{} {} -> {a} {b}", st.positions[w[0]], st.positions[w[1]]);
            }
        }
    }

    #[test]
    fn noisy_runs_stay_in_the_box() {
        let s = Superposition::two_state_default();
        let st = sample_initial(&config(500, InitialDistribution::Uniform, 2), &s, 0.0).unwrap();
        for model in [NoiseModel::Wiener, NoiseModel::Kick] {
            let noise = NoiseSpec::new(0.1, model).unwrap();
            let out = evolve_ensemble(&st, s.reference_period(), &s, &noise, &IntegratorConfig::default()).unwrap();
            assert!(out.positions.iter().all(|x| (0.0..=2.0).contains(x)));
            let h = histogram_density(&out, 200).unwrap();
            assert_eq!(h.counts.iter().sum::<u64>(), 500);
        }
    }

    #[test]
    fn evolve_rejects_past_target() {
        let s = Superposition::two_state_default();
        let st = sample_initial(&config(3, InitialDistribution::Uniform, 0), &s, 0.0).unwrap();
        assert!(evolve_ensemble(&st, 0.0, &s, &NoiseSpec::silent(), &IntegratorConfig::default()).is_err());
        assert!(histogram_density(&st, 0).is_err());
    }
}
