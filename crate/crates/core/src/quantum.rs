//! Wavefunctions built from confined one-dimensional eigenstates and the
//! Bohmian fields derived from them.
//!
//! Units throughout: Å for length, fs for time, eV for energy.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, NodeSingularity, Result};
use crate::quadrature::{adaptive_simpson, GaussLegendre};
use crate::spline::CubicSpline;

/// Default density below which a point is treated as a node (Å⁻¹).
pub const NODE_THRESHOLD: f64 = 1e-8;

const NORM_TOLERANCE: f64 = 1e-12;
const CDF_TOLERANCE: f64 = 1e-10;
const QUANTILE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// ħ in eV·fs
    pub hbar: f64,
    /// speed of light in Å/fs
    pub c: f64,
    /// electron rest energy m c² in eV
    pub electron_rest_energy: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    hbar: 0.6582119569,
    c: 2997.92458,
    electron_rest_energy: 510998.95,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    length: f64,
}

impl BoxGeometry {
    pub fn new(length: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "box length must be positive, got {length}"
            )));
        }
        Ok(Self { length })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.length).contains(&x)
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x,
                length: self.length,
            })
        }
    }
}

impl Default for BoxGeometry {
    fn default() -> Self {
        Self { length: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    rest_energy: f64,
}

impl ParticleSpec {
    pub fn new(rest_energy: f64) -> Result<Self> {
        if !(rest_energy > 0.0) || !rest_energy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rest energy must be positive, got {rest_energy}"
            )));
        }
        Ok(Self { rest_energy })
    }

    pub fn electron() -> Self {
        Self {
            rest_energy: CONSTANTS.electron_rest_energy,
        }
    }

    pub fn rest_energy(&self) -> f64 {
        self.rest_energy
    }

    /// Mass in eV·fs²/Å².
    pub fn mass(&self) -> f64 {
        self.rest_energy / (CONSTANTS.c * CONSTANTS.c)
    }

    /// ħ²/2m in eV·Å².
    pub fn kinetic_scale(&self) -> f64 {
        let hbar_c = CONSTANTS.hbar * CONSTANTS.c;
        hbar_c * hbar_c / (2.0 * self.rest_energy)
    }

    /// ħ/m in Å²/fs.
    pub fn hbar_over_mass(&self) -> f64 {
        CONSTANTS.hbar / self.mass()
    }
}

impl Default for ParticleSpec {
    fn default() -> Self {
        Self::electron()
    }
}

#[derive(Debug, Clone)]
enum Profile {
    /// √(2/L)·sin(kx)
    Sine { wavenumber: f64, norm: f64 },
    Tabulated(Arc<CubicSpline>),
}

/// A stationary state of the box: spatial amplitude and energy.
#[derive(Debug, Clone)]
pub struct Eigenstate {
    index: usize,
    energy: f64,
    profile: Profile,
}

impl Eigenstate {
    /// Wraps a tabulated amplitude on a uniform grid starting at the left wall.
    pub fn tabulated(index: usize, energy: f64, spacing: f64, amplitude: Vec<f64>) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidIndex(0));
        }
        let spline = CubicSpline::uniform(0.0, spacing, amplitude)?;
        Ok(Self {
            index,
            energy,
            profile: Profile::Tabulated(Arc::new(spline)),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivatives(x).0
    }

    /// (φ, φ′, φ″) at `x`.
    #[inline]
    pub fn derivatives(&self, x: f64) -> (f64, f64, f64) {
        match &self.profile {
            Profile::Sine { wavenumber, norm } => {
                let (s, c) = (wavenumber * x).sin_cos();
                let phi = norm * s;
                (phi, norm * wavenumber * c, -wavenumber * wavenumber * phi)
            }
            Profile::Tabulated(spline) => spline.eval(x),
        }
    }
}

/// Analytic eigenstate of the infinite square well of the given geometry.
pub fn box_eigenstate(n: i64, geometry: BoxGeometry, particle: ParticleSpec) -> Result<Eigenstate> {
    if n < 1 {
        return Err(Error::InvalidIndex(n));
    }
    let length = geometry.length();
    let wavenumber = n as f64 * PI / length;
    Ok(Eigenstate {
        index: n as usize,
        energy: particle.kinetic_scale() * wavenumber * wavenumber,
        profile: Profile::Sine {
            wavenumber,
            norm: (2.0 / length).sqrt(),
        },
    })
}

/// Everything the fields need at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub psi: Complex64,
    pub density: f64,
    pub velocity: f64,
    pub quantum_potential: f64,
    pub node_flag: bool,
}

/// Time-dependent coefficients a_n·e^{−iE_n t/ħ} at a fixed instant.
///
/// Building one costs a complex exponential per term, so hot loops build a
/// slice once and evaluate many positions against it.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    t: f64,
    /// a_n·e^{−i(E_n − E_ref)t/ħ}; the common factor is kept apart so that
    /// phase-gradient quantities only see relative phases.
    coefficients: SmallVec<[Complex64; 4]>,
    global: Complex64,
}

impl TimeSlice {
    pub fn time(&self) -> f64 {
        self.t
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    psi: Complex64,
    d1: Complex64,
    d2: Complex64,
}

#[derive(Debug, Clone)]
pub struct Superposition {
    amplitudes: Vec<Complex64>,
    states: Vec<Eigenstate>,
    geometry: BoxGeometry,
    particle: ParticleSpec,
    node_threshold: f64,
}

impl Superposition {
    pub fn new(
        terms: Vec<(Complex64, Eigenstate)>,
        geometry: BoxGeometry,
        particle: ParticleSpec,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "superposition needs at least one term".into(),
            ));
        }
        let norm: f64 = terms.iter().map(|(a, _)| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "amplitudes must satisfy Σ|a|² = 1, got {norm}"
            )));
        }
        let (amplitudes, states) = terms.into_iter().unzip();
        Ok(Self {
            amplitudes,
            states,
            geometry,
            particle,
            node_threshold: NODE_THRESHOLD,
        })
    }

    /// Box eigenstates `indices` with the given complex amplitudes.
    pub fn box_states(
        indices: &[i64],
        amplitudes: &[Complex64],
        geometry: BoxGeometry,
        particle: ParticleSpec,
    ) -> Result<Self> {
        if indices.len() != amplitudes.len() {
            return Err(Error::InvalidParameter(format!(
                "{} indices but {} amplitudes",
                indices.len(),
                amplitudes.len()
            )));
        }
        let terms = indices
            .iter()
            .zip(amplitudes)
            .map(|(&n, &a)| Ok((a, box_eigenstate(n, geometry, particle)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms, geometry, particle)
    }

    /// Equal-weight superposition of the two lowest states of a 2 Å box
    /// holding an electron.
    pub fn two_state_default() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::box_states(
            &[1, 2],
            &[a, a],
            BoxGeometry::default(),
            ParticleSpec::electron(),
        )
        .expect("default superposition is valid")
    }

    pub fn with_node_threshold(mut self, threshold: f64) -> Self {
        self.node_threshold = threshold;
        self
    }

    pub fn node_threshold(&self) -> f64 {
        self.node_threshold
    }

    pub fn geometry(&self) -> BoxGeometry {
        self.geometry
    }

    pub fn length(&self) -> f64 {
        self.geometry.length()
    }

    pub fn particle(&self) -> ParticleSpec {
        self.particle
    }

    pub fn terms(&self) -> impl Iterator<Item = (Complex64, &Eigenstate)> {
        self.amplitudes.iter().copied().zip(&self.states)
    }

    pub fn slice(&self, t: f64) -> TimeSlice {
        let hbar = CONSTANTS.hbar;
        let reference = self.states[0].energy;
        let coefficients = self
            .amplitudes
            .iter()
            .zip(&self.states)
            .map(|(a, s)| a * Complex64::from_polar(1.0, -(s.energy - reference) * t / hbar))
            .collect();
        TimeSlice {
            t,
            coefficients,
            global: Complex64::from_polar(1.0, -reference * t / hbar),
        }
    }

    #[inline]
    fn wave(&self, slice: &TimeSlice, x: f64) -> Wave {
        let mut w = Wave {
            psi: Complex64::new(0.0, 0.0),
            d1: Complex64::new(0.0, 0.0),
            d2: Complex64::new(0.0, 0.0),
        };
        for (c, state) in slice.coefficients.iter().zip(&self.states) {
            let (phi, d1, d2) = state.derivatives(x);
            w.psi += c * phi;
            w.d1 += c * d1;
            w.d2 += c * d2;
        }
        w
    }

    #[inline]
    fn wave_value(&self, slice: &TimeSlice, x: f64) -> Complex64 {
        slice
            .coefficients
            .iter()
            .zip(&self.states)
            .map(|(c, s)| c * s.value(x))
            .sum()
    }

    pub fn psi(&self, x: f64, t: f64) -> Result<Complex64> {
        self.geometry.check(x)?;
        let slice = self.slice(t);
        Ok(slice.global * self.wave_value(&slice, x))
    }

    pub fn density(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.psi(x, t)?.norm_sqr())
    }

    #[inline]
    pub fn density_at(&self, slice: &TimeSlice, x: f64) -> f64 {
        self.wave_value(slice, x).norm_sqr()
    }

    /// Guiding velocity (ħ/m)·Im(Ψ′/Ψ) in Å/fs.
    pub fn velocity(&self, x: f64, t: f64) -> Result<f64> {
        self.geometry.check(x)?;
        Ok(self.velocity_at(&self.slice(t), x)?)
    }

    /// Guiding velocity against a precomputed time slice. Positions are
    /// assumed to be inside the box.
    #[inline]
    pub fn velocity_at(&self, slice: &TimeSlice, x: f64) -> std::result::Result<f64, NodeSingularity> {
        let (v, density) = self.raw_velocity(slice, x);
        if density < self.node_threshold {
            return Err(NodeSingularity {
                x,
                t: slice.t,
                density,
            });
        }
        Ok(v)
    }

    /// Velocity without the node check, together with the density. May be
    /// huge or non-finite near nodes.
    #[inline]
    pub fn raw_velocity(&self, slice: &TimeSlice, x: f64) -> (f64, f64) {
        let mut psi = Complex64::new(0.0, 0.0);
        let mut d1 = Complex64::new(0.0, 0.0);
        for (c, state) in slice.coefficients.iter().zip(&self.states) {
            let (phi, dphi, _) = state.derivatives(x);
            psi += c * phi;
            d1 += c * dphi;
        }
        let density = psi.norm_sqr();
        let current = (psi.conj() * d1).im;
        (self.particle.hbar_over_mass() * current / density, density)
    }

    /// Quantum potential −(ħ²/2m)·R″/R in eV.
    pub fn quantum_potential(&self, x: f64, t: f64) -> Result<f64> {
        if !(x > 0.0 && x < self.length()) {
            return Err(Error::OutOfDomain {
                x,
                length: self.length(),
            });
        }
        let slice = self.slice(t);
        let w = self.wave(&slice, x);
        let density = w.psi.norm_sqr();
        if density < self.node_threshold {
            return Err(NodeSingularity { x, t, density }.into());
        }
        Ok(self.quantum_potential_of(&w))
    }

    fn quantum_potential_of(&self, w: &Wave) -> f64 {
        let rho = w.psi.norm_sqr();
        let rho1 = 2.0 * (w.psi.conj() * w.d1).re;
        let rho2 = 2.0 * w.d1.norm_sqr() + 2.0 * (w.psi.conj() * w.d2).re;
        let r2_over_r = rho2 / (2.0 * rho) - rho1 * rho1 / (4.0 * rho * rho);
        -self.particle.kinetic_scale() * r2_over_r
    }

    /// All fields at one point. Velocity and quantum potential are NaN where
    /// the node flag is set.
    pub fn field_sample(&self, x: f64, t: f64) -> Result<FieldSample> {
        self.geometry.check(x)?;
        let slice = self.slice(t);
        let w = self.wave(&slice, x);
        let density = w.psi.norm_sqr();
        let node_flag = density < self.node_threshold;
        let (velocity, quantum_potential) = if node_flag {
            (f64::NAN, f64::NAN)
        } else {
            let current = (w.psi.conj() * w.d1).im;
            (
                self.particle.hbar_over_mass() * current / density,
                self.quantum_potential_of(&w),
            )
        };
        Ok(FieldSample {
            psi: slice.global * w.psi,
            density,
            velocity,
            quantum_potential,
            node_flag,
        })
    }

    /// ∫₀ˣ |Ψ(y,t)|² dy.
    pub fn cdf(&self, x: f64, t: f64) -> Result<f64> {
        self.geometry.check(x)?;
        let slice = self.slice(t);
        Ok(self.cdf_at(&slice, x))
    }

    fn cdf_at(&self, slice: &TimeSlice, x: f64) -> f64 {
        let length = self.length();
        // Integrate from the nearer wall to keep the tolerance absolute.
        let v = if x <= 0.5 * length {
            adaptive_simpson(|y| self.density_at(slice, y), 0.0, x, CDF_TOLERANCE)
        } else {
            1.0 - adaptive_simpson(|y| self.density_at(slice, y), x, length, CDF_TOLERANCE)
        };
        v.clamp(0.0, 1.0)
    }

    /// Inverse of [`Self::cdf`].
    pub fn quantile(&self, p: f64, t: f64) -> Result<f64> {
        let slice = self.slice(t);
        self.quantile_at(&slice, p)
    }

    pub fn quantile_at(&self, slice: &TimeSlice, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityDomain(p));
        }
        let length = self.length();
        if p == 0.0 {
            return Ok(0.0);
        }
        if p == 1.0 {
            return Ok(length);
        }
        let (mut lo, mut hi) = (0.0, length);
        let mut x = p * length;
        for _ in 0..200 {
            let f = self.cdf_at(slice, x) - p;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo < QUANTILE_TOLERANCE {
                break;
            }
            let rho = self.density_at(slice, x);
            let newton = x - f / rho;
            let prev = x;
            x = if rho > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (x - prev).abs() < QUANTILE_TOLERANCE {
                break;
            }
        }
        Ok(x)
    }

    /// Probability mass in each of `bins` equal-width bins over the box.
    pub fn bin_probabilities(&self, t: f64, bins: usize) -> Vec<f64> {
        let slice = self.slice(t);
        let width = self.length() / bins as f64;
        let rule = GaussLegendre::new(10);
        (0..bins)
            .map(|k| {
                let a = k as f64 * width;
                rule.integrate(|y| self.density_at(&slice, y), a, a + width)
            })
            .collect()
    }

    /// Recurrence time of the density.
    pub fn bohr_period(&self) -> Result<f64> {
        let energies: Vec<f64> = self.states.iter().map(|s| s.energy).collect();
        bohr_period_of(&energies)
    }

    /// Bohr period when the density oscillates; otherwise the Bohr period of
    /// the two lowest levels of the empty box of the same geometry. Used as
    /// the unit of time for step sizes and noise scaling.
    pub fn reference_period(&self) -> f64 {
        self.bohr_period().unwrap_or_else(|_| {
            let k = PI / self.length();
            2.0 * PI * CONSTANTS.hbar / (3.0 * self.particle.kinetic_scale() * k * k)
        })
    }
}

fn bohr_period_of(energies: &[f64]) -> Result<f64> {
    if energies.len() < 2 {
        return Err(Error::NoPeriod("a single eigenstate has a stationary density".into()));
    }
    let scale = energies.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(f64::MIN_POSITIVE);
    let mut gaps = Vec::new();
    for (i, a) in energies.iter().enumerate() {
        for b in &energies[i + 1..] {
            let gap = (a - b).abs();
            if gap > 1e-12 * scale {
                gaps.push(gap);
            }
        }
    }
    if gaps.is_empty() {
        return Err(Error::NoPeriod("all energies are degenerate".into()));
    }
    let hbar = CONSTANTS.hbar;
    if energies.len() == 2 {
        return Ok(2.0 * PI * hbar / gaps[0]);
    }
    let smallest = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    const RELATIVE: f64 = 1e-9;
    for divisor in 1..=1000u64 {
        let unit = smallest / divisor as f64;
        let multiples: Option<Vec<u64>> = gaps
            .iter()
            .map(|g| {
                let r = g / unit;
                let n = r.round();
                ((r - n).abs() <= RELATIVE * r).then_some(n as u64)
            })
            .collect();
        if let Some(multiples) = multiples {
            let g = multiples.iter().copied().fold(0, gcd);
            return Ok(2.0 * PI * hbar / (unit * g as f64));
        }
    }
    Err(Error::NoPeriod("energy gaps are incommensurate".into()))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_s() -> Superposition {
        Superposition::two_state_default()
    }

    fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
        h * (0.5 * f(a) + inner + 0.5 * f(b))
    }

    #[test]
    fn box_energies() {
        let g = BoxGeometry::default();
        let p = ParticleSpec::electron();
        let e1 = box_eigenstate(1, g, p).unwrap().energy();
        let e2 = box_eigenstate(2, g, p).unwrap().energy();
        // closed form n²π²ħ²/(2mL²) with the constants above
        assert!((e1 - 9.400754).abs() < 1e-5, "{e1}");
        assert!((e1 / 9.4012 - 1.0).abs() < 1e-4);
        assert!((e2 / 37.6049 - 1.0).abs() < 1e-4);
        assert!((e2 - 4.0 * e1).abs() < 1e-12);
    }

    #[test]
    fn invalid_index() {
        let g = BoxGeometry::default();
        let p = ParticleSpec::electron();
        assert!(matches!(box_eigenstate(0, g, p), Err(Error::InvalidIndex(0))));
        assert!(matches!(box_eigenstate(-3, g, p), Err(Error::InvalidIndex(-3))));
    }

    #[test]
    fn eigenstates_vanish_at_walls_and_are_normalized() {
        let g = BoxGeometry::default();
        let p = ParticleSpec::electron();
        for n in 1..=5 {
            let s = box_eigenstate(n, g, p).unwrap();
            assert!(s.value(0.0).abs() < 1e-15);
            assert!(s.value(2.0).abs() < 1e-14);
            let norm = trapezoid(|x| s.value(x).powi(2), 0.0, 2.0, 100_000);
            assert!((norm - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_unnormalized_amplitudes() {
        let a = Complex64::new(0.7, 0.0);
        let r = Superposition::box_states(&[1, 2], &[a, a], BoxGeometry::default(), ParticleSpec::electron());
        assert!(r.is_err());
        let r = Superposition::new(vec![], BoxGeometry::default(), ParticleSpec::electron());
        assert!(r.is_err());
    }

    #[test]
    fn psi_at_centre_at_t0() {
        let s = default_s();
        let psi = s.psi(1.0, 0.0).unwrap();
        assert!((psi.re - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!((s.density(1.0, 0.0).unwrap() - 0.5).abs() < 1e-14);
        for i in 0..=20 {
            assert_eq!(s.psi(i as f64 * 0.1, 0.0).unwrap().im, 0.0);
        }
    }

    #[test]
    fn psi_out_of_domain() {
        let s = default_s();
        assert!(matches!(s.psi(-0.01, 0.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(s.velocity(2.01, 0.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn normalization_at_arbitrary_time() {
        let s = default_s();
        let t = 0.37 * s.bohr_period().unwrap();
        let norm = trapezoid(|x| s.density(x, t).unwrap(), 0.0, 2.0, 100_000);
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn velocity_special_instants() {
        let s = default_s();
        let period = s.bohr_period().unwrap();
        let p = s.particle();
        let expected = 2.0 * PI * p.hbar_over_mass() / 2.0;
        let v = s.velocity(1.0, 0.25 * period).unwrap();
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        assert!((v - 36.37).abs() < 5e-3);
        for k in 0..3 {
            for i in 1..1000 {
                let x = 2.0 * i as f64 / 1000.0;
                let t = k as f64 * 0.5 * period;
                match s.velocity(x, t) {
                    Ok(v) => {
                        // Rounding in the relative phase (~1e-16) is amplified by 1/ρ,
                        // so only points clear of an instantaneous node meet 1e-9.
                        let d = s.density(x, t).unwrap();
                        if d > 1e-5 {
                            assert!(v.abs() < 1e-9, "k={k} x={x} v={v}");
                        } else {
                            assert!(v.abs() * d < 1e-13, "k={k} x={x} v={v} density={d}");
                        }
                    }
                    Err(Error::Node(_)) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn velocity_matches_phase_gradient() {
        // Finite difference of the unwrapped phase, S/ħ = arg Ψ.
        let s = default_s();
        let p = s.particle();
        let period = s.bohr_period().unwrap();
        let h = 1e-4;
        let mut checked = 0;
        for i in 0..1000 {
            let x = 0.05 + 1.9 * ((i as f64 * 0.618_033_988_75) % 1.0);
            let t = period * ((i as f64 * 0.414_213_562_37) % 1.0);
            if s.density(x, t).unwrap() < 1e-3 {
                continue;
            }
            let slice = s.slice(t);
            let phase = |y: f64| s.wave_value(&slice, y).arg();
            let centre = phase(x);
            let unwrapped = |y: f64| {
                let d = phase(y) - centre;
                d - 2.0 * PI * (d / (2.0 * PI)).round()
            };
            let dphi = (-unwrapped(x + 2.0 * h) + 8.0 * unwrapped(x + h) - 8.0 * unwrapped(x - h)
                + unwrapped(x - 2.0 * h))
                / (12.0 * h);
            let fd = p.hbar_over_mass() * dphi;
            let v = s.velocity(x, t).unwrap();
            assert!((v - fd).abs() <= 1e-6 * v.abs().max(1.0), "x={x} t={t} {v} {fd}");
            checked += 1;
        }
        assert!(checked > 900);
    }

    #[test]
    fn node_signal_carries_location() {
        let s = default_s();
        // Ψ(x,0) ∝ sin a (1 + 2 cos a) vanishes at x = 2L/3.
        let err = s.velocity(4.0 / 3.0, 0.0).unwrap_err();
        match err {
            Error::Node(n) => {
                assert_eq!(n.t, 0.0);
                assert!(n.density < 1e-8);
            }
            e => panic!("{e}"),
        }
        assert!(s.quantum_potential(4.0 / 3.0, 0.0).is_err());
        let f = s.field_sample(4.0 / 3.0, 0.0).unwrap();
        assert!(f.node_flag && f.velocity.is_nan());
    }

    #[test]
    fn eigenstate_quantum_potential_is_energy() {
        let g = BoxGeometry::default();
        let p = ParticleSpec::electron();
        for n in 1..=4 {
            let state = box_eigenstate(n, g, p).unwrap();
            let e = state.energy();
            let s = Superposition::new(vec![(Complex64::new(1.0, 0.0), state)], g, p).unwrap();
            for i in 0..=90 {
                let x = 0.1 + 1.8 * i as f64 / 90.0;
                match s.quantum_potential(x, 0.3) {
                    Ok(u) => assert!((u - e).abs() < 1e-6, "n={n} x={x} u={u} e={e}"),
                    Err(Error::Node(_)) => {}
                    Err(err) => panic!("{err}"),
                }
            }
        }
    }

    #[test]
    fn quantum_potential_matches_finite_difference() {
        let s = default_s();
        let h = 1e-3;
        let r = |x: f64| s.density(x, 0.0).unwrap().sqrt();
        let x = 1.0;
        let d2 = (-r(x + 2.0 * h) + 16.0 * r(x + h) - 30.0 * r(x) + 16.0 * r(x - h) - r(x - 2.0 * h))
            / (12.0 * h * h);
        let fd = -s.particle().kinetic_scale() * d2 / r(x);
        let u = s.quantum_potential(x, 0.0).unwrap();
        assert!((u - fd).abs() < 1e-3, "{u} vs {fd}");
    }

    #[test]
    fn cdf_values_and_quantile_round_trip() {
        let s = default_s();
        let c = s.cdf(1.0, 0.0).unwrap();
        assert!((c - (0.5 + 4.0 / (3.0 * PI))).abs() < 1e-9, "{c}");
        assert_eq!(s.cdf(0.0, 0.3).unwrap(), 0.0);
        assert!((s.cdf(2.0, 0.3).unwrap() - 1.0).abs() < 1e-12);
        let t = 0.05;
        for i in 0..100 {
            let x = 0.01 + 1.98 * ((i as f64 * 0.754_877_666) % 1.0);
            let p = s.cdf(x, t).unwrap();
            let back = s.quantile(p, t).unwrap();
            assert!((back - x).abs() < 1e-8, "x={x} back={back}");
        }
        assert!(matches!(s.quantile(1.2, 0.0), Err(Error::ProbabilityDomain(_))));
        assert!(matches!(s.quantile(-0.1, 0.0), Err(Error::ProbabilityDomain(_))));
    }

    #[test]
    fn bohr_periods() {
        let s = default_s();
        let t = s.bohr_period().unwrap();
        assert!((t - 0.146643).abs() < 1e-5, "{t}");
        let g = BoxGeometry::default();
        let p = ParticleSpec::electron();
        let a = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
        let three = Superposition::box_states(&[1, 2, 3], &[a, a, a], g, p).unwrap();
        let e1 = box_eigenstate(1, g, p).unwrap().energy();
        let expected = 2.0 * PI * CONSTANTS.hbar / e1;
        assert!((three.bohr_period().unwrap() / expected - 1.0).abs() < 1e-9);
        let single = Superposition::box_states(&[1], &[Complex64::new(1.0, 0.0)], g, p).unwrap();
        assert!(matches!(single.bohr_period(), Err(Error::NoPeriod(_))));
        assert!((single.reference_period() - t).abs() < 1e-12);
    }

    #[test]
    fn density_is_periodic() {
        let s = default_s();
        let period = s.bohr_period().unwrap();
        for i in 0..1000 {
            let x = 2.0 * ((i as f64 * 0.618_033_988_75) % 1.0);
            let t = 3.0 * period * ((i as f64 * 0.324_717_957) % 1.0);
            let d = s.density(x, t + period).unwrap() - s.density(x, t).unwrap();
            assert!(d.abs() < 1e-10);
        }
    }

    #[test]
    fn bin_probabilities_sum_to_one() {
        let s = default_s();
        let p = s.bin_probabilities(0.02, 200);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let first: f64 = p[..100].iter().sum();
        assert!((first - s.cdf(1.0, 0.02).unwrap()).abs() < 1e-10);
    }
}
