//! Single stochastic Bohmian trajectories.
//!
//! Each outer step is a Heun predictor–corrector on the guiding velocity with
//! an additive noise increment shared by both stages, followed by mirror
//! reflection at the walls. Steps whose drift is too large, or that touch a
//! node, are halved recursively; past the depth limit the drift is clamped.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, NodeSingularity, Result};
use crate::quantum::{BoxGeometry, Superposition, TimeSlice, CONSTANTS, NODE_THRESHOLD};
use crate::rng::{RngStreamId, StepRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Gaussian increment with variance proportional to the step.
    #[default]
    Wiener,
    /// Literal per-step velocity kick.
    Kick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// In hundredths of the speed of light.
    pub intensity: f64,
    pub model: NoiseModel,
}

impl NoiseSpec {
    pub fn new(intensity: f64, model: NoiseModel) -> Result<Self> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise intensity must be non-negative, got {intensity}"
            )));
        }
        Ok(Self { intensity, model })
    }

    pub fn silent() -> Self {
        Self {
            intensity: 0.0,
            model: NoiseModel::Wiener,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.intensity == 0.0
    }

    /// Noise speed scale in Å/fs.
    pub fn speed(&self) -> f64 {
        self.intensity * CONSTANTS.c / 100.0
    }

    /// Variance of the Wiener displacement per unit time, Å²/fs.
    fn variance_rate(&self, period: f64) -> f64 {
        let v = self.speed();
        v * v * period
    }
}

/// Displacement contributed by the noise over one step of length `dt`.
pub fn noise_displacement(spec: &NoiseSpec, dt: f64, period: f64, xi: f64) -> f64 {
    let v = spec.speed();
    match spec.model {
        NoiseModel::Wiener => v * (dt * period).sqrt() * xi,
        NoiseModel::Kick => v * dt * xi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Outer steps per reference period.
    pub steps_per_period: u32,
    pub max_substep_depth: u32,
    /// Largest drift displacement accepted in one (sub)step, Å. `None` means
    /// one hundredth of the box length.
    pub max_step_displacement: Option<f64>,
    /// Density (Å⁻¹) below which the velocity is treated as singular.
    pub node_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 500,
            max_substep_depth: 12,
            max_step_displacement: None,
            node_threshold: NODE_THRESHOLD,
        }
    }
}

impl IntegratorConfig {
    pub fn with_steps(steps_per_period: u32) -> Self {
        Self {
            steps_per_period,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 2 {
            return Err(Error::InvalidParameter(format!(
                "steps_per_period must be at least 2, got {}",
                self.steps_per_period
            )));
        }
        if let Some(d) = self.max_step_displacement {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "max_step_displacement must be positive, got {d}"
                )));
            }
        }
        if !(self.node_threshold >= 0.0) {
            return Err(Error::InvalidParameter("node_threshold must be non-negative".into()));
        }
        Ok(())
    }

    pub fn max_displacement(&self, geometry: BoxGeometry) -> f64 {
        self.max_step_displacement.unwrap_or(geometry.length() / 100.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub substep_events: u64,
    pub capped_events: u64,
}

impl AddAssign for StepDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.substep_events += rhs.substep_events;
        self.capped_events += rhs.capped_events;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// (t in fs, x in Å)
    pub samples: Vec<(f64, f64)>,
    pub substep_events: u64,
    pub capped_events: u64,
}

/// A velocity field that can be evaluated against precomputed time frames.
pub trait DriftField: Sync {
    type Frame;

    fn frame(&self, t: f64) -> Self::Frame;

    fn frame_time(frame: &Self::Frame) -> f64;

    /// Velocity and the density used for the node check.
    fn drift(&self, frame: &Self::Frame, x: f64) -> (f64, f64);
}

impl DriftField for Superposition {
    type Frame = TimeSlice;

    fn frame(&self, t: f64) -> TimeSlice {
        self.slice(t)
    }

    fn frame_time(frame: &TimeSlice) -> f64 {
        frame.time()
    }

    #[inline]
    fn drift(&self, frame: &TimeSlice, x: f64) -> (f64, f64) {
        self.raw_velocity(frame, x)
    }
}

/// Wraps a closure `v(x, t)` as a field with no nodes.
pub struct FnField<F>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> DriftField for FnField<F> {
    type Frame = f64;

    fn frame(&self, t: f64) -> f64 {
        t
    }

    fn frame_time(frame: &f64) -> f64 {
        *frame
    }

    fn drift(&self, t: &f64, x: f64) -> (f64, f64) {
        ((self.0)(x, *t), 1.0)
    }
}

/// Folds `x` into [0, L] by repeated mirror reflection.
pub fn reflect(x: f64, geometry: BoxGeometry) -> f64 {
    let length = geometry.length();
    if (0.0..=length).contains(&x) {
        return x;
    }
    if !x.is_finite() {
        return x;
    }
    let period = 2.0 * length;
    let y = x.rem_euclid(period);
    let folded = if y > length { period - y } else { y };
    folded.clamp(0.0, length)
}

/// One plain Heun step (no substepping) from `x` at time `t`. The predictor
/// is reflected before the field is evaluated there.
pub fn heun_step<F: DriftField>(
    field: &F,
    geometry: BoxGeometry,
    x: f64,
    t: f64,
    dt: f64,
    dw: f64,
    node_threshold: f64,
) -> std::result::Result<f64, NodeSingularity> {
    let now = field.frame(t);
    let next = field.frame(t + dt);
    let checked = |frame: &F::Frame, x: f64| {
        let (v, density) = field.drift(frame, x);
        if density < node_threshold || !v.is_finite() {
            Err(NodeSingularity {
                x,
                t: F::frame_time(frame),
                density,
            })
        } else {
            Ok(v)
        }
    };
    let v0 = checked(&now, x)?;
    let predictor = reflect(x + v0 * dt + dw, geometry);
    let v1 = checked(&next, predictor)?;
    Ok(reflect(x + 0.5 * (v0 + v1) * dt + dw, geometry))
}

/// Why a (sub)step could not be taken as is: a node or an oversized drift.
struct Rejected;

struct Stepper<'a, F: DriftField> {
    field: &'a F,
    geometry: BoxGeometry,
    noise: NoiseSpec,
    variance_rate: f64,
    max_depth: u32,
    max_displacement: f64,
    node_threshold: f64,
    diagnostics: StepDiagnostics,
}

impl<F: DriftField> Stepper<'_, F> {
    #[inline]
    fn checked_drift(&self, frame: &F::Frame, x: f64, dt: f64) -> std::result::Result<f64, Rejected> {
        let (v, density) = self.field.drift(frame, x);
        if !v.is_finite() {
            return Err(Rejected);
        }
        // Below the node threshold the velocity is only trusted while it stays
        // bounded; the walls are nodes with a regular velocity field.
        if (v * dt).abs() > self.max_displacement || (density < self.node_threshold && v.abs() * dt > 0.01 * self.max_displacement) {
            return Err(Rejected);
        }
        Ok(v)
    }

    fn clamped_drift(&self, frame: &F::Frame, x: f64, dt: f64) -> f64 {
        let (v, _) = self.field.drift(frame, x);
        if !v.is_finite() {
            return 0.0;
        }
        let limit = self.max_displacement / dt;
        v.clamp(-limit, limit)
    }

    fn try_step(&self, x: f64, now: &F::Frame, next: &F::Frame, dt: f64, dw: f64) -> std::result::Result<f64, Rejected> {
        let v0 = self.checked_drift(now, x, dt)?;
        let predictor = reflect(x + v0 * dt + dw, self.geometry);
        let v1 = self.checked_drift(next, predictor, dt)?;
        Ok(reflect(x + 0.5 * (v0 + v1) * dt + dw, self.geometry))
    }

    fn advance(
        &mut self,
        x: f64,
        now: &F::Frame,
        next: &F::Frame,
        dt: f64,
        dw: f64,
        depth: u32,
        rng: &mut Option<StepRng>,
    ) -> f64 {
        match self.try_step(x, now, next, dt, dw) {
            Ok(x1) => x1,
            Err(_) if depth < self.max_depth => {
                self.diagnostics.substep_events += 1;
                let half = 0.5 * dt;
                let mid = self.field.frame(F::frame_time(now) + half);
                let first = match (self.noise.model, rng.as_mut()) {
                    (NoiseModel::Wiener, Some(rng)) => {
                        0.5 * dw + 0.5 * (self.variance_rate * dt).sqrt() * rng.normal()
                    }
                    _ => 0.5 * dw,
                };
                let x_mid = self.advance(x, now, &mid, half, first, depth + 1, rng);
                self.advance(x_mid, &mid, next, half, dw - first, depth + 1, rng)
            }
            Err(_) => {
                self.diagnostics.capped_events += 1;
                let v0 = self.clamped_drift(now, x, dt);
                let predictor = reflect(x + v0 * dt + dw, self.geometry);
                let v1 = self.clamped_drift(next, predictor, dt);
                reflect(x + 0.5 * (v0 + v1) * dt + dw, self.geometry)
            }
        }
    }
}

/// Integrates one particle from `t0` to `t1` through the field. The outer
/// step is `period / steps_per_period`; the last step is shortened to land on
/// `t1`. When `record` is given, (t, x) is pushed after every outer step.
#[allow(clippy::too_many_arguments)]
pub fn integrate<F: DriftField>(
    field: &F,
    geometry: BoxGeometry,
    period: f64,
    x0: f64,
    t0: f64,
    t1: f64,
    noise: &NoiseSpec,
    cfg: &IntegratorConfig,
    stream: RngStreamId,
    mut record: Option<&mut Vec<(f64, f64)>>,
) -> Result<(f64, StepDiagnostics)> {
    let dt = period / cfg.steps_per_period as f64;
    let span = t1 - t0;
    let steps = (span / dt - 1e-9).ceil().max(0.0) as u64;
    let mut stepper = Stepper {
        field,
        geometry,
        noise: *noise,
        variance_rate: noise.variance_rate(period),
        max_depth: cfg.max_substep_depth,
        max_displacement: cfg.max_displacement(geometry),
        node_threshold: cfg.node_threshold,
        diagnostics: StepDiagnostics::default(),
    };
    if let Some(r) = record.as_deref_mut() {
        r.push((t0, x0));
    }
    let mut x = x0;
    let mut now = field.frame(t0);
    for k in 0..steps {
        let t_next = if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * dt };
        let h = t_next - F::frame_time(&now);
        let next = field.frame(t_next);
        let mut rng = (!noise.is_silent()).then(|| stream.advanced(k).generator());
        let dw = match rng.as_mut() {
            Some(rng) => noise_displacement(noise, h, period, rng.normal()),
            None => 0.0,
        };
        x = stepper.advance(x, &now, &next, h, dw, 0, &mut rng);
        if !x.is_finite() {
            return Err(Error::NumericalFailure {
                t: t_next,
                x,
                seed: stream.master_seed,
                particle: stream.particle_index,
                step: stream.step_index + k,
            });
        }
        if let Some(r) = record.as_deref_mut() {
            r.push((t_next, x));
        }
        now = next;
    }
    Ok((x, stepper.diagnostics))
}

/// Number of outer steps `integrate` takes between `t0` and `t1`.
pub fn step_count(period: f64, cfg: &IntegratorConfig, t0: f64, t1: f64) -> u64 {
    let dt = period / cfg.steps_per_period as f64;
    ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as u64
}

/// Full trajectory of one particle guided by `s`.
pub fn evolve_trajectory(
    x0: f64,
    t0: f64,
    t1: f64,
    s: &Superposition,
    noise: &NoiseSpec,
    cfg: &IntegratorConfig,
    stream: RngStreamId,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if !s.geometry().contains(x0) {
        return Err(Error::OutOfDomain {
            x: x0,
            length: s.length(),
        });
    }
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("end time {t1} must exceed start time {t0}")));
    }
    let mut samples = Vec::new();
    let (_, diagnostics) = integrate(
        s,
        s.geometry(),
        s.reference_period(),
        x0,
        t0,
        t1,
        noise,
        cfg,
        stream,
        Some(&mut samples),
    )?;
    Ok(TrajectoryRecord {
        samples,
        substep_events: diagnostics.substep_events,
        capped_events: diagnostics.capped_events,
    })
}
