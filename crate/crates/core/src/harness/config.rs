use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cascade::{ConstraintConfig, ControllerConfig, ControllerKind, GuidanceConfig, LoopConfig, SimConfig};
use crate::error::{Error, Result};
use crate::qpsolve::QpSettings;
use crate::vehicle::VehicleParams;

/// Vehicle section. Matrices other than the inertia are diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub mass: f64,
    /// Principal moments (kg m^2).
    pub inertia: [f64; 3],
    pub rotor_front: [f64; 3],
    pub rotor_rear: [f64; 3],
    pub drag_translational: [f64; 3],
    pub drag_coupling: [f64; 3],
    pub drag_rotational: [f64; 3],
    pub gravity: f64,
}

impl From<&VehicleParams> for VehicleConfig {
    fn from(p: &VehicleParams) -> Self {
        let diag = |m: &Matrix3<f64>| [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        Self {
            mass: p.mass,
            inertia: diag(&p.inertia),
            rotor_front: p.rotor_front.into(),
            rotor_rear: p.rotor_rear.into(),
            drag_translational: diag(&p.drag_translational),
            drag_coupling: diag(&p.drag_coupling),
            drag_rotational: diag(&p.drag_rotational),
            gravity: p.gravity,
        }
    }
}

impl VehicleConfig {
    pub fn params(&self) -> VehicleParams {
        let diag = |d: &[f64; 3]| Matrix3::from_diagonal(&Vector3::from(*d));
        VehicleParams {
            mass: self.mass,
            inertia: diag(&self.inertia),
            rotor_front: self.rotor_front.into(),
            rotor_rear: self.rotor_rear.into(),
            drag_translational: diag(&self.drag_translational),
            drag_coupling: diag(&self.drag_coupling),
            drag_rotational: diag(&self.drag_rotational),
            gravity: self.gravity,
        }
    }
}

/// Means and standard deviations of the scenario draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub attitude_std: f64,
    pub position_mean: [f64; 3],
    pub position_std: f64,
    pub velocity_mean: [f64; 3],
    pub velocity_std: f64,
    pub rate_std: f64,
    pub wind_mean: [f64; 3],
    pub wind_std: f64,
    pub gust_intensity_mean: f64,
    pub gust_intensity_std: f64,
    pub mass_std: f64,
    /// Standard deviation of the rotation applied to the believed inertia (rad).
    pub inertia_rotation_std: f64,
    pub target: [f64; 3],
    pub target_heading: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            attitude_std: 0.116,
            position_mean: [-30.0, -5.0, -20.0],
            position_std: 1.0,
            velocity_mean: [5.0, 0.0, 0.5],
            velocity_std: 0.333,
            rate_std: 0.029,
            wind_mean: [0.0, -5.0, 0.0],
            wind_std: 1.667,
            gust_intensity_mean: 10.0,
            gust_intensity_std: 1.0,
            mass_std: 10.0,
            inertia_rotation_std: 0.044,
            target: [0.0; 3],
            target_heading: 0.0,
        }
    }
}

impl ScenarioConfig {
    /// Same means with every spread set to zero.
    pub fn zero_variance(&self) -> Self {
        Self {
            attitude_std: 0.0,
            position_std: 0.0,
            velocity_std: 0.0,
            rate_std: 0.0,
            wind_std: 0.0,
            gust_intensity_std: 0.0,
            mass_std: 0.0,
            inertia_rotation_std: 0.0,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let stds = [
            self.attitude_std,
            self.position_std,
            self.velocity_std,
            self.rate_std,
            self.wind_std,
            self.gust_intensity_std,
            self.mass_std,
            self.inertia_rotation_std,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("scenario standard deviations must be finite and nonnegative".into()));
        }
        let means = [self.position_mean, self.velocity_mean, self.wind_mean, self.target];
        if means.iter().flatten().chain([&self.gust_intensity_mean, &self.target_heading]).any(|m| !m.is_finite()) {
            return Err(Error::Config("scenario means must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    /// Run `k` uses scenario seed `seed + k`.
    pub seed: u64,
    pub controllers: Vec<ControllerKind>,
    /// Worker threads; 0 picks the `CMPC_WORKERS` variable or the core count.
    pub workers: usize,
    pub scenario: ScenarioConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { runs: 20, seed: 1, controllers: vec![ControllerKind::Cmpc, ControllerKind::Smpc], workers: 0, scenario: ScenarioConfig::default() }
    }
}

/// Complete experiment configuration, read from TOML. Any key left out
/// keeps its default value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleConfig,
    pub outer: LoopConfig,
    pub inner: LoopConfig,
    pub smpc: LoopConfig,
    pub constraints: ConstraintConfig,
    pub guidance: GuidanceConfig,
    pub solver: QpSettings,
    pub simulation: SimConfig,
    pub monte_carlo: MonteCarloConfig,
}

impl Default for Config {
    fn default() -> Self {
        let c = ControllerConfig::default();
        Self {
            vehicle: VehicleConfig::from(&VehicleParams::benchmark()),
            outer: c.outer,
            inner: c.inner,
            smpc: c.smpc,
            constraints: c.constraints,
            guidance: c.guidance,
            solver: c.solver,
            simulation: SimConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn line_of(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}

impl Config {
    /// Parses a TOML document over the defaults and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overlay: toml::Value =
            toml::from_str(text).map_err(|e| Error::Parse { line: line_of(text, e.span()), msg: e.message().to_string() })?;
        let mut base = toml::Value::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay);
        let cfg: Config = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.params().validate()?;
        self.controller().validate()?;
        let s = &self.simulation;
        let positive = [s.truth_dt, s.duration, s.arrival_radius, s.gust_airspeed, s.gust_altitude];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || !(s.arrival_dwell >= 0.0) {
            return Err(Error::Config("simulation times, radius and gust settings must be positive".into()));
        }
        let mc = &self.monte_carlo;
        if mc.runs == 0 {
            return Err(Error::Config("monte_carlo.runs must be at least 1".into()));
        }
        if mc.controllers.is_empty() {
            return Err(Error::Config("monte_carlo.controllers must not be empty".into()));
        }
        mc.scenario.validate()
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            outer: self.outer.clone(),
            inner: self.inner.clone(),
            smpc: self.smpc.clone(),
            constraints: self.constraints.clone(),
            guidance: self.guidance.clone(),
            solver: self.solver,
        }
    }
}
