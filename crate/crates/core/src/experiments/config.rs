use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorConfig, NoiseModel, NoiseSpec};
use crate::eigensolver::{solve_spectrum, PotentialGrid};
use crate::ensemble::{EnsembleConfig, InitialDistribution};
use crate::error::{Error, Result};
use crate::quantum::{BoxGeometry, ParticleSpec, Superposition, CONSTANTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Relax,
    Sweep,
    Fields,
    Trajectories,
    StationaryDiffusion,
    CalibrateNoise,
    Eigen,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Relax,
        Scenario::Sweep,
        Scenario::Fields,
        Scenario::Trajectories,
        Scenario::StationaryDiffusion,
        Scenario::CalibrateNoise,
        Scenario::Eigen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Relax => "relax",
            Scenario::Sweep => "sweep",
            Scenario::Fields => "fields",
            Scenario::Trajectories => "trajectories",
            Scenario::StationaryDiffusion => "stationary_diffusion",
            Scenario::CalibrateNoise => "calibrate_noise",
            Scenario::Eigen => "eigen",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.replace('-', "_");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == wanted)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown scenario `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Box length in Å. Taken from the potential grid when one is given.
    pub length: Option<f64>,
    pub rest_energy_ev: f64,
    /// Eigenstate indices, starting at 1.
    pub states: Vec<i64>,
    /// Moduli of the amplitudes; rescaled so that Σ|a|² = 1.
    pub amplitudes: Vec<f64>,
    /// Phases of the amplitudes in radians.
    pub phases: Option<Vec<f64>>,
    /// Two-column CSV `x_angstrom,potential_ev`; eigenstates are then solved
    /// numerically instead of taken from the flat box.
    pub potential_file: Option<PathBuf>,
    /// Number of levels reported by the eigen scenario.
    pub levels: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            length: None,
            rest_energy_ev: CONSTANTS.electron_rest_energy,
            states: vec![1, 2],
            amplitudes: vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            phases: None,
            potential_file: None,
            levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// In hundredths of the speed of light.
    pub intensity: f64,
    pub model: NoiseModel,
    /// Intensities visited by the sweep and calibrate_noise scenarios.
    pub sweep: Vec<f64>,
    /// Run length per sweep entry, periods; defaults to `output.duration_periods`.
    pub sweep_durations: Option<Vec<f64>>,
    /// Run the sweep entries concurrently instead of one after another.
    pub parallel_sweep: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            intensity: 0.1,
            model: NoiseModel::Wiener,
            sweep: vec![0.01, 0.001, 0.0001],
            sweep_durations: None,
            parallel_sweep: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Uniform,
    Quantum,
    StratifiedQuantum,
    FromFile,
}

/// How the comparison run started from |Ψ(x,0)|² obtains its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Same noise streams as the main run.
    #[default]
    Paired,
    /// Streams from a derived seed.
    Independent,
    /// No comparison run.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub particles: usize,
    pub initial: InitialKind,
    pub positions_file: Option<PathBuf>,
    pub seed: u64,
    pub bins: usize,
    pub pairing: Pairing,
    /// Paths emitted by the trajectories scenario.
    pub trajectories: usize,
    /// Sweep entries with 0 < C ≤ `low_noise_threshold` use this many
    /// particles unless `full_fidelity` is set.
    pub low_noise_particles: usize,
    pub low_noise_threshold: f64,
    pub full_fidelity: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            particles: 5000,
            initial: InitialKind::Uniform,
            positions_file: None,
            seed: 0,
            bins: 200,
            pairing: Pairing::Paired,
            trajectories: 40,
            low_noise_particles: 1000,
            low_noise_threshold: 1e-4,
            full_fidelity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub duration_periods: f64,
    /// Metric cadence in periods; 0.1 by default, 1.0 for sweeps.
    pub every_periods: Option<f64>,
    pub grid_x: usize,
    pub grid_t: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("output"),
            duration_periods: 10.0,
            every_periods: None,
            grid_x: 200,
            grid_t: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Option<Scenario>,
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub ensemble: EnsembleSection,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a TOML file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.system.potential_file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.ensemble.positions_file.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn every_periods(&self, scenario: Scenario) -> f64 {
        self.output.every_periods.unwrap_or(match scenario {
            Scenario::Sweep => 1.0,
            _ => 0.1,
        })
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise.intensity, self.noise.model)
    }

    /// Duration of each sweep entry in periods.
    pub fn sweep_durations(&self) -> Vec<f64> {
        match &self.noise.sweep_durations {
            Some(d) => d.clone(),
            None => vec![self.output.duration_periods; self.noise.sweep.len()],
        }
    }

    /// Particle count used for a sweep entry at intensity `c`.
    pub fn particles_for(&self, c: f64) -> usize {
        let e = &self.ensemble;
        if !e.full_fidelity && c > 0.0 && c <= e.low_noise_threshold {
            e.low_noise_particles.min(e.particles)
        } else {
            e.particles
        }
    }

    pub fn ensemble_config(&self, initial: InitialKind, n_particles: usize, seed: u64) -> Result<EnsembleConfig> {
        let initial = match initial {
            InitialKind::Uniform => InitialDistribution::Uniform,
            InitialKind::Quantum => InitialDistribution::Quantum,
            InitialKind::StratifiedQuantum => InitialDistribution::StratifiedQuantum,
            InitialKind::FromFile => InitialDistribution::FromFile(
                self.ensemble
                    .positions_file
                    .clone()
                    .ok_or_else(|| Error::Config("initial = \"from_file\" needs ensemble.positions_file".into()))?,
            ),
        };
        Ok(EnsembleConfig {
            n_particles,
            initial,
            master_seed: seed,
        })
    }

    pub fn validate(&self, scenario: Scenario) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let Some(declared) = self.scenario {
            if declared != scenario {
                return bad(format!("config declares scenario `{declared}` but `{scenario}` was requested"));
            }
        }
        let sys = &self.system;
        if scenario == Scenario::Eigen {
            if sys.potential_file.is_none() {
                return bad("eigen needs system.potential_file".into());
            }
            if sys.levels == 0 {
                return bad("system.levels must be at least 1".into());
            }
        } else {
            if sys.states.is_empty() {
                return bad("system.states must not be empty".into());
            }
            if sys.amplitudes.len() != sys.states.len() {
                return bad(format!(
                    "{} states but {} amplitudes",
                    sys.states.len(),
                    sys.amplitudes.len()
                ));
            }
            if let Some(ph) = &sys.phases {
                if ph.len() != sys.states.len() {
                    return bad(format!("{} states but {} phases", sys.states.len(), ph.len()));
                }
            }
            let norm: f64 = sys.amplitudes.iter().map(|a| a * a).sum();
            if !(norm > 0.0) || !norm.is_finite() {
                return bad("amplitudes must not all vanish".into());
            }
        }
        for path in [&sys.potential_file, &self.ensemble.positions_file].into_iter().flatten() {
            if !path.is_file() {
                return bad(format!("{}: file not found", path.display()));
            }
        }
        if let Some(l) = sys.length {
            if !(l > 0.0) {
                return bad(format!("system.length must be positive, got {l}"));
            }
        }
        self.integrator.validate()?;
        let out = &self.output;
        if !(out.duration_periods > 0.0) {
            return bad(format!("output.duration_periods must be positive, got {}", out.duration_periods));
        }
        let every = self.every_periods(scenario);
        if !(every > 0.0) {
            return bad(format!("output.every_periods must be positive, got {every}"));
        }
        if out.grid_x < 2 || out.grid_t < 1 {
            return bad("output grid needs grid_x ≥ 2 and grid_t ≥ 1".into());
        }
        let ens = &self.ensemble;
        if ens.particles == 0 || ens.bins == 0 {
            return bad("ensemble.particles and ensemble.bins must be positive".into());
        }
        if ens.initial == InitialKind::FromFile && ens.positions_file.is_none() {
            return bad("initial = \"from_file\" needs ensemble.positions_file".into());
        }
        NoiseSpec::new(self.noise.intensity, self.noise.model)?;
        if matches!(scenario, Scenario::Sweep | Scenario::CalibrateNoise) && self.noise.sweep.is_empty() {
            return bad("noise.sweep must not be empty".into());
        }
        for &c in &self.noise.sweep {
            NoiseSpec::new(c, self.noise.model)?;
        }
        if let Some(d) = &self.noise.sweep_durations {
            if d.len() != self.noise.sweep.len() {
                return bad(format!("{} sweep entries but {} durations", self.noise.sweep.len(), d.len()));
            }
            if d.iter().any(|x| !(*x > 0.0)) {
                return bad("sweep durations must be positive".into());
            }
        }
        if scenario == Scenario::Trajectories && ens.trajectories == 0 {
            return bad("ensemble.trajectories must be positive".into());
        }
        Ok(())
    }

    pub fn particle(&self) -> Result<ParticleSpec> {
        ParticleSpec::new(self.system.rest_energy_ev)
    }

    pub fn potential(&self) -> Result<Option<PotentialGrid>> {
        self.system.potential_file.as_deref().map(PotentialGrid::read_csv).transpose()
    }

    /// Builds Ψ from the [system] section, normalising the amplitudes.
    pub fn superposition(&self) -> Result<Superposition> {
        let sys = &self.system;
        let particle = self.particle()?;
        let norm = sys.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        let amplitudes: Vec<Complex64> = sys
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let phase = sys.phases.as_ref().map_or(0.0, |p| p[k]);
                Complex64::from_polar(a / norm, phase)
            })
            .collect();
        let s = match self.potential()? {
            None => {
                let geometry = BoxGeometry::new(sys.length.unwrap_or(2.0))?;
                Superposition::box_states(&sys.states, &amplitudes, geometry, particle)?
            }
            Some(grid) => {
                let geometry = grid.geometry()?;
                if let Some(l) = sys.length {
                    if (l - geometry.length()).abs() > 1e-9 * l {
                        return Err(Error::Config(format!(
                            "system.length = {l} disagrees with the potential grid length {}",
                            geometry.length()
                        )));
                    }
                }
                if let Some(&n) = sys.states.iter().find(|&&n| n < 1) {
                    return Err(Error::InvalidIndex(n));
                }
                let highest = *sys.states.iter().max().expect("states validated non-empty") as usize;
                let spectrum = solve_spectrum(&grid, particle, highest)?;
                let terms = sys
                    .states
                    .iter()
                    .zip(&amplitudes)
                    .map(|(&n, &a)| Ok((a, spectrum[n as usize - 1].to_eigenstate(n as usize)?)))
                    .collect::<Result<Vec<_>>>()?;
                Superposition::new(terms, geometry, particle)?
            }
        };
        Ok(s.with_node_threshold(self.integrator.node_threshold))
    }
}
