use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{Config, ScenarioConfig};
use crate::cascade::SimSetup;
use crate::lie::Rotation;
use crate::reference::Target;
use crate::vehicle::{VehicleParams, VehicleState, WindConfig};

/// Independent substream per random quantity, so changing how one channel
/// is drawn never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    Attitude = 0,
    Position = 1,
    Velocity = 2,
    Rate = 3,
    SteadyWind = 4,
    GustIntensity = 5,
    Mass = 6,
    InertiaRotation = 7,
    GustNoise = 8,
}

/// ChaCha20 keyed by the scenario seed, on the channel's stream.
pub fn channel_rng(seed: u64, channel: Channel) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

fn gaussian3(rng: &mut ChaCha20Rng, mean: [f64; 3], std: f64) -> Vector3<f64> {
    let n = Normal::new(0.0, std).expect("std validated as finite and nonnegative");
    Vector3::new(mean[0] + n.sample(rng), mean[1] + n.sample(rng), mean[2] + n.sample(rng))
}

fn gaussian(rng: &mut ChaCha20Rng, mean: f64, std: f64) -> f64 {
    Normal::new(mean, std).expect("std validated as finite and nonnegative").sample(rng)
}

/// One randomized test case shared by every controller in a paired run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub attitude: [f64; 3],
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub rate: [f64; 3],
    pub wind: WindConfig,
    pub truth: VehicleParams,
    /// Mass and inertia the controllers believe.
    pub model: VehicleParams,
    /// Rotation applied to the believed inertia.
    pub inertia_rotation: [f64; 3],
    pub target: Target,
}

impl Scenario {
    pub fn initial_state(&self) -> VehicleState {
        VehicleState::new(
            Rotation::exp(&Vector3::from(self.attitude)),
            Vector3::from(self.velocity),
            Vector3::from(self.position),
            Vector3::from(self.rate),
        )
    }

    pub fn setup(&self) -> SimSetup {
        SimSetup {
            x0: self.initial_state(),
            target: self.target,
            truth: self.truth.clone(),
            model: self.model.clone(),
            wind: Some(self.wind),
        }
    }
}

/// Draws a scenario. The truth model is the configured vehicle; the model
/// copy has its mass shifted and its inertia rotated by a random attitude,
/// `J_hat = C^T J C`, which keeps the spectrum.
pub fn sample_scenario(seed: u64, cfg: &Config) -> Scenario {
    sample_with(seed, &cfg.monte_carlo.scenario, &cfg.vehicle.params())
}

pub fn sample_with(seed: u64, s: &ScenarioConfig, truth: &VehicleParams) -> Scenario {
    let rng = |c| channel_rng(seed, c);
    let attitude = gaussian3(&mut rng(Channel::Attitude), [0.0; 3], s.attitude_std);
    let position = gaussian3(&mut rng(Channel::Position), s.position_mean, s.position_std);
    let velocity = gaussian3(&mut rng(Channel::Velocity), s.velocity_mean, s.velocity_std);
    let rate = gaussian3(&mut rng(Channel::Rate), [0.0; 3], s.rate_std);
    let steady = gaussian3(&mut rng(Channel::SteadyWind), s.wind_mean, s.wind_std);
    let w0 = gaussian(&mut rng(Channel::GustIntensity), s.gust_intensity_mean, s.gust_intensity_std);
    let mass_shift = gaussian(&mut rng(Channel::Mass), 0.0, s.mass_std);
    let tilt = gaussian3(&mut rng(Channel::InertiaRotation), [0.0; 3], s.inertia_rotation_std);
    let gust_seed = rng(Channel::GustNoise).next_u64();

    let c = Rotation::exp(&tilt);
    let c = c.matrix();
    let inertia = c.transpose() * truth.inertia * c;
    let model = VehicleParams { mass: truth.mass + mass_shift, inertia: (inertia + inertia.transpose()) * 0.5, ..truth.clone() };
    Scenario {
        seed,
        attitude: attitude.into(),
        position: position.into(),
        velocity: velocity.into(),
        rate: rate.into(),
        wind: WindConfig { steady, w0, seed: gust_seed },
        truth: truth.clone(),
        model,
        inertia_rotation: tilt.into(),
        target: Target { position: Vector3::from(s.target), heading: s.target_heading },
    }
}
