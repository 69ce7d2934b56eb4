//! Poisson photon noise.
//!
//! The intensity is rescaled so its brightest voxel (normally q = 0) holds
//! `max_photons`, then every voxel, the brightest included, is replaced by a
//! Poisson draw. Each voxel has its own ChaCha stream selected by its index,
//! so the result does not depend on evaluation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::IntensityVolume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub enabled: bool,
    /// Photons in the brightest voxel.
    pub max_photons: f64,
    pub rng_seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            enabled: true,
            max_photons: 1e11,
            rng_seed: 1,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.max_photons > 0.0 && self.max_photons.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "max_photons must be positive, got {}",
                self.max_photons
            )));
        }
        Ok(())
    }
}

/// Poisson variate for voxel `index`, drawn from the stream keyed by `(key, index)`.
fn draw(key: [u8; 32], index: usize, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index as u64);
    match Poisson::new(mean) {
        Ok(p) => p.sample(&mut rng),
        // beyond the sampler's range the normal limit is exact to far below one count
        Err(_) => {
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (mean + mean.sqrt() * g).round().max(0.0)
        }
    }
}

pub fn apply_poisson(intensity: &IntensityVolume, spec: &NoiseSpec) -> Result<IntensityVolume> {
    if let Some((index, &value)) = intensity
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0))
    {
        return Err(Error::NegativeIntensity { index, value });
    }
    if !spec.enabled {
        return Ok(intensity.clone());
    }
    spec.validate()?;
    let peak = intensity.max();
    let photon_scale = if peak > 0.0 { spec.max_photons / peak } else { 1.0 };
    let key = ChaCha8Rng::seed_from_u64(spec.rng_seed).get_seed();
    let data: Vec<f64> = intensity
        .data
        .par_iter()
        .enumerate()
        .map(|(i, &v)| draw(key, i, v * photon_scale))
        .collect();
    Ok(IntensityVolume {
        data,
        dims: intensity.dims,
        pitch: intensity.pitch,
        scale: intensity.scale * photon_scale,
        photon_scale: Some(photon_scale),
    })
}
