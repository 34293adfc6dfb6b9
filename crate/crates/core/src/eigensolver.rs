//! Bound states of a particle in an arbitrary potential inside hard walls.
//!
//! The Hamiltonian is discretized with second-order central differences on
//! the interior grid points (the wall points are fixed at zero), giving a
//! symmetric tridiagonal matrix. Eigenvalues come from Sturm-sequence
//! bisection and eigenvectors from inverse iteration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{BoxGeometry, Eigenstate, ParticleSpec};

/// Potential sampled on a uniform grid from the left wall (x = 0) to the
/// right wall (x = L).
#[derive(Debug, Clone)]
pub struct PotentialGrid {
    spacing: f64,
    values: Vec<f64>,
}

impl PotentialGrid {
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::Format(format!(
                "need at least 3 grid points, got {}",
                samples.len()
            )));
        }
        let x0 = samples[0].0;
        if x0.abs() > 1e-12 {
            return Err(Error::Format(format!("grid must start at x = 0, starts at {x0}")));
        }
        let n = samples.len();
        let spacing = (samples[n - 1].0 - x0) / (n - 1) as f64;
        if !(spacing > 0.0) {
            return Err(Error::Format("grid must be increasing".into()));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let dx = w[1].0 - w[0].0;
            let slack = 1e-12 * spacing + 4.0 * f64::EPSILON * w[1].0.abs();
            if (dx - spacing).abs() > slack {
                return Err(Error::Format(format!(
                    "non-uniform spacing between points {i} and {}: {dx} vs {spacing}",
                    i + 1
                )));
            }
        }
        if let Some((x, v)) = samples.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite potential {v} at x = {x}")));
        }
        Ok(Self {
            spacing,
            values: samples.iter().map(|&(_, v)| v).collect(),
        })
    }

    /// Samples `potential` at `points` uniformly spaced points over the box.
    pub fn from_fn(geometry: BoxGeometry, points: usize, potential: impl Fn(f64) -> f64) -> Result<Self> {
        if points < 3 {
            return Err(Error::Format(format!("need at least 3 grid points, got {points}")));
        }
        let spacing = geometry.length() / (points - 1) as f64;
        let samples: Vec<(f64, f64)> = (0..points)
            .map(|i| {
                let x = i as f64 * spacing;
                (x, potential(x))
            })
            .collect();
        Self::from_samples(&samples)
    }

    /// Reads a two-column CSV with header `x_angstrom,potential_ev`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.len() != 2 || &headers[0] != "x_angstrom" || &headers[1] != "potential_ev" {
            return Err(Error::Format(format!(
                "{}: expected header `x_angstrom,potential_ev`, found `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for row in reader.deserialize::<PotentialRow>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            samples.push((row.x_angstrom, row.potential_ev));
        }
        Self::from_samples(&samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for (x, v) in self.samples() {
            writer
                .serialize(PotentialRow {
                    x_angstrom: x,
                    potential_ev: v,
                })
                .map_err(|e| Error::csv(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.spacing * (self.values.len() - 1) as f64
    }

    pub fn geometry(&self) -> Result<BoxGeometry> {
        BoxGeometry::new(self.length())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 * self.spacing, v))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PotentialRow {
    x_angstrom: f64,
    potential_ev: f64,
}

/// Energy and grid amplitude of one bound state. The amplitude includes the
/// two wall points, which are zero.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub energy: f64,
    pub amplitude: Vec<f64>,
    spacing: f64,
}

impl EigenPair {
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Off-grid interpolant suitable for building superpositions.
    pub fn to_eigenstate(&self, index: usize) -> Result<Eigenstate> {
        Eigenstate::tabulated(index, self.energy, self.spacing, self.amplitude.clone())
    }
}

/// Lowest `count` eigenpairs in ascending energy order.
pub fn solve_spectrum(potential: &PotentialGrid, particle: ParticleSpec, count: usize) -> Result<Vec<EigenPair>> {
    let points = potential.len();
    let interior = points - 2;
    if count >= interior {
        return Err(Error::Capacity {
            requested: count,
            points,
            max: interior.saturating_sub(1),
        });
    }
    let h = potential.spacing();
    let hopping = particle.kinetic_scale() / (h * h);
    let diag: Vec<f64> = potential.values()[1..points - 1]
        .iter()
        .map(|v| 2.0 * hopping + v)
        .collect();
    let off = -hopping;
    let matrix = Tridiagonal { diag, off };

    let mut pairs: Vec<EigenPair> = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        let energy = matrix.eigenvalue(j);
        let mut v = matrix.eigenvector(energy, &vectors);
        // trapezoid norm; wall samples are zero
        let norm = (h * v.iter().map(|y| y * y).sum::<f64>()).sqrt();
        v.iter_mut().for_each(|y| *y /= norm);
        // sign convention: positive slope at the left wall
        if let Some(first) = v.iter().find(|y| y.abs() > 1e-10) {
            if *first < 0.0 {
                v.iter_mut().for_each(|y| *y = -*y);
            }
        }
        let mut amplitude = Vec::with_capacity(points);
        amplitude.push(0.0);
        amplitude.extend_from_slice(&v);
        amplitude.push(0.0);
        vectors.push(v.iter().map(|y| y * h.sqrt()).collect());
        pairs.push(EigenPair {
            energy,
            amplitude,
            spacing: h,
        });
    }
    Ok(pairs)
}

/// Maximal intervals where V(x) ≤ E, with crossings located by linear
/// interpolation. Empty when E lies below the potential everywhere.
pub fn classical_turning_points(potential: &PotentialGrid, energy: f64) -> Vec<(f64, f64)> {
    let mut intervals = Vec::new();
    let mut start: Option<f64> = None;
    let samples: Vec<(f64, f64)> = potential.samples().collect();
    for (i, &(x, v)) in samples.iter().enumerate() {
        let allowed = v <= energy;
        match (start, allowed) {
            (None, true) => {
                start = Some(if i == 0 {
                    x
                } else {
                    crossing(samples[i - 1], samples[i], energy)
                });
            }
            (Some(s), false) => {
                intervals.push((s, crossing(samples[i - 1], samples[i], energy)));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((s, potential.length()));
    }
    intervals
}

fn crossing((x0, v0): (f64, f64), (x1, v1): (f64, f64), energy: f64) -> f64 {
    if v1 == v0 {
        return 0.5 * (x0 + x1);
    }
    x0 + (energy - v0) / (v1 - v0) * (x1 - x0)
}

/// Symmetric tridiagonal matrix with constant off-diagonal.
struct Tridiagonal {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiagonal {
    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let off2 = self.off * self.off;
        let mut count = 0;
        let mut q = 1.0;
        for (i, d) in self.diag.iter().enumerate() {
            q = d - x - if i == 0 { 0.0 } else { off2 / q };
            if q == 0.0 {
                q = -f64::EPSILON * (d.abs() + self.off.abs());
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let r = 2.0 * self.off.abs();
        self.diag
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d - r), hi.max(d + r)))
    }

    /// The `j`-th smallest eigenvalue (0-based).
    fn eigenvalue(&self, j: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration at shift `energy`, orthogonalised against the
    /// (unit-norm) vectors in `previous`.
    fn eigenvector(&self, energy: f64, previous: &[Vec<f64>]) -> Vec<f64> {
        let n = self.diag.len();
        let scale = self.diag.iter().fold(self.off.abs(), |m, d| m.max(d.abs()));
        let shift = energy + 1e-10 * scale.max(1.0) * f64::EPSILON.sqrt();
        let lu = BandLu::factor(&self.diag, self.off, shift);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0).collect();
        for _ in 0..4 {
            let mut y = lu.solve(&v);
            for p in previous {
                let dot: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
                y.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            v = y.into_iter().map(|a| a / norm).collect();
        }
        v
    }
}

/// LU factorisation with partial pivoting of (T − σI) for tridiagonal T.
struct BandLu {
    // upper factor: main, first and second superdiagonal
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    multipliers: Vec<f64>,
    swapped: Vec<bool>,
}

impl BandLu {
    fn factor(diag: &[f64], off: f64, shift: f64) -> Self {
        let n = diag.len();
        let tiny = f64::EPSILON * diag.iter().fold(off.abs(), |m, d| m.max(d.abs()));
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut multipliers = vec![0.0; n];
        let mut swapped = vec![false; n];
        // working row i: (a, b, c) at columns i, i+1, i+2
        let mut a = diag[0] - shift;
        let mut b = if n > 1 { off } else { 0.0 };
        let mut c = 0.0;
        for i in 0..n {
            if i + 1 == n {
                u0[i] = if a == 0.0 { tiny } else { a };
                break;
            }
            // next row: (sub, d, e) at columns i, i+1, i+2
            let sub = off;
            let d = diag[i + 1] - shift;
            let e = if i + 2 < n { off } else { 0.0 };
            if sub.abs() > a.abs() {
                swapped[i] = true;
                u0[i] = sub;
                u1[i] = d;
                u2[i] = e;
                let m = a / sub;
                multipliers[i] = m;
                a = b - m * d;
                b = c - m * e;
            } else {
                let piv = if a == 0.0 { tiny } else { a };
                u0[i] = piv;
                u1[i] = b;
                u2[i] = c;
                let m = sub / piv;
                multipliers[i] = m;
                a = d - m * b;
                b = e - m * c;
            }
            c = 0.0;
        }
        Self {
            u0,
            u1,
            u2,
            multipliers,
            swapped,
        }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = rhs.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                y.swap(i, i + 1);
            }
            y[i + 1] -= self.multipliers[i] * y[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.u2[i] * x[i + 2];
            }
            x[i] = s / self.u0[i];
        }
        x
    }
}
