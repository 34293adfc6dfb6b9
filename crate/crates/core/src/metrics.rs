//! Distances between an ensemble histogram and |Ψ(x,t)|², the sampling floor
//! those distances cannot go below, and relaxation-time extraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::HistogramDensity;
use crate::error::{Error, Result};
use crate::quantum::Superposition;

/// ∫|1/L − |Ψ(x,0)|²| dx for the default two-state box.
pub const CHI2_UNIFORM_VS_QUANTUM_T0: f64 = 0.995_596_500_333;
/// Same distance after coarse-graining both densities onto 200 bins.
pub const CHI2_UNIFORM_VS_QUANTUM_T0_200_BINS: f64 = 0.995_539_211_696;
/// ∫(1/L)·ln((1/L)/|Ψ(x,0)|²) dx for the default two-state box (= ln 4).
pub const REL_ENTROPY_UNIFORM_VS_QUANTUM_T0: f64 = 1.386_294_361_120;
/// Same relative entropy on 200 bins.
pub const REL_ENTROPY_UNIFORM_VS_QUANTUM_T0_200_BINS: f64 = 1.367_566_579_134;

const REFERENCE_FLOOR: f64 = 1e-12;

/// Σ_k |a_k − b_k| for two per-bin probability vectors.
pub fn l1_between(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Σ_k a_k·ln(a_k / b_k) for per-bin probabilities with bin width `width`;
/// empty bins of `a` contribute nothing and the reference density is floored.
pub fn relative_entropy_between(a: &[f64], b: &[f64], width: f64) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| {
            let rho = p / width;
            let reference = (q / width).max(REFERENCE_FLOOR);
            p * (rho / reference).ln()
        })
        .sum()
}

/// ∫|ρ̂ − |Ψ|²| dx with |Ψ|² averaged over each bin.
pub fn l1_distance(hist: &HistogramDensity, s: &Superposition, t: f64) -> f64 {
    let reference = s.bin_probabilities(t, hist.bins());
    l1_between(&hist.fractions(), &reference)
}

pub fn relative_entropy(hist: &HistogramDensity, s: &Superposition, t: f64) -> f64 {
    let reference = s.bin_probabilities(t, hist.bins());
    relative_entropy_between(&hist.fractions(), &reference, hist.bin_width())
}

/// Expected L1 distance between an N-particle histogram and the density it
/// was sampled from, given per-bin probabilities.
pub fn sampling_floor_of(probabilities: &[f64], n_particles: usize) -> f64 {
    let n = n_particles as f64;
    let half_normal = (2.0 / PI).sqrt();
    probabilities
        .iter()
        .map(|p| half_normal * (p * (1.0 - p) / n).sqrt())
        .sum()
}

pub fn sampling_floor(n_particles: usize, bins: usize, s: &Superposition, t: f64) -> Result<f64> {
    if n_particles < bins {
        return Err(Error::InvalidParameter(format!(
            "sampling floor needs at least one particle per bin ({n_particles} < {bins})"
        )));
    }
    Ok(sampling_floor_of(&s.bin_probabilities(t, bins), n_particles))
}

/// Sampling floor averaged over `samples` instants spread across one
/// reference period.
pub fn period_averaged_floor(n_particles: usize, bins: usize, s: &Superposition, samples: usize) -> Result<f64> {
    let period = s.reference_period();
    let mut total = 0.0;
    for j in 0..samples {
        total += sampling_floor(n_particles, bins, s, period * j as f64 / samples as f64)?;
    }
    Ok(total / samples as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub t_periods: f64,
    pub chi2_l1: f64,
    pub rel_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub label: String,
    pub entries: Vec<MetricEntry>,
}

impl MetricSeries {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: MetricEntry) {
        debug_assert!(self.entries.last().is_none_or(|e| e.t_periods <= entry.t_periods));
        self.entries.push(entry);
    }

    /// Mean χ² over entries with t ≥ `from_periods`.
    pub fn mean_chi2_after(&self, from_periods: f64) -> Option<f64> {
        let tail: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.t_periods >= from_periods)
            .map(|e| e.chi2_l1)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Earliest time t* such that the mean χ² over a trailing window (10% of the
/// series, at least 5 points) starting at t* is ≤ 1.3 × `floor`.
pub fn relaxation_time(series: &MetricSeries, floor: f64) -> Result<Option<f64>> {
    let entries = &series.entries;
    if entries.is_empty() {
        return Err(Error::InvalidParameter("relaxation time of an empty series".into()));
    }
    let window = (entries.len() / 10).max(5).min(entries.len());
    let threshold = 1.3 * floor;
    let chi: Vec<f64> = entries.iter().map(|e| e.chi2_l1).collect();
    let mut sum: f64 = chi[..window].iter().sum();
    for start in 0..=entries.len() - window {
        if start > 0 {
            sum += chi[start + window - 1] - chi[start - 1];
        }
        if sum / window as f64 <= threshold {
            return Ok(Some(entries[start].t_periods));
        }
    }
    Ok(None)
}
