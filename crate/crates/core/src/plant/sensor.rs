use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ChannelPlantState;

/// 15 psi in kPa, rounded to the sensor datasheet precision.
const FIFTEEN_PSI_KPA: f64 = 103.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub min: f64,
    pub max: f64,
    /// Reading resolution in kPa; 0 disables quantization.
    pub quantization: f64,
    /// Standard deviation of additive Gaussian noise, kPa.
    pub noise_std: f64,
}

impl SensorModel {
    /// Gauge sensor spanning 0..15 psi.
    pub const fn positive() -> Self {
        Self { min: 0.0, max: FIFTEEN_PSI_KPA, quantization: 0.0, noise_std: 0.0 }
    }

    /// Bidirectional sensor spanning ±15 psi.
    pub const fn hybrid() -> Self {
        Self { min: -FIFTEEN_PSI_KPA, max: FIFTEEN_PSI_KPA, quantization: 0.0, noise_std: 0.0 }
    }

    pub fn quantize(&self, value: f64) -> f64 {
        if self.quantization > 0.0 {
            (value / self.quantization).round() * self.quantization
        } else {
            value
        }
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::hybrid()
    }
}

/// Per-channel reproducible noise source.
///
/// Each channel draws from its own ChaCha stream so that reading one channel
/// never perturbs the noise seen by another.
#[derive(Debug, Clone)]
pub struct SensorNoise {
    rng: ChaCha8Rng,
}

impl SensorNoise {
    pub fn new(seed: u64, channel: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(channel);
        Self { rng }
    }

    fn sample(&mut self, std: f64) -> f64 {
        if std <= 0.0 {
            return 0.0;
        }
        match Normal::new(0.0, std) {
            Ok(normal) => normal.sample(&mut self.rng),
            Err(_) => 0.0,
        }
    }
}

/// Sensor reading for the channel: `clamp(quantize(pressure + noise), range)`.
pub fn read_sensor(state: &ChannelPlantState, model: &SensorModel, noise: &mut SensorNoise) -> f64 {
    let raw = state.pressure + noise.sample(model.noise_std);
    model.quantize(raw).clamp(model.min, model.max)
}
