//! Seeded noise with a prescribed norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::{Observation, SpectralField};

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Adds Gaussian noise whose quadrature `L²(ω)` norm is exactly `delta`,
/// and records `delta` on the observation.
pub fn inject_noise(clean: &Observation, delta: f64, seed: u64) -> Result<Observation> {
    if clean.values.is_empty() {
        return Err(Error::invalid("cannot perturb an empty sample set"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {delta}")));
    }
    let raw = gaussian(clean.values.len(), seed);
    let scale = delta / clean.quadrature_norm(&raw)?;
    let mut out = clean.clone();
    for (v, r) in out.values.iter_mut().zip(&raw) {
        *v += scale * r;
    }
    out.delta = delta;
    Ok(out)
}

/// Gaussian coefficient perturbation with `L²` norm exactly `delta`.
pub fn coefficient_noise(n: usize, delta: f64, seed: u64) -> Result<SpectralField> {
    if n == 0 || !(delta > 0.0) {
        return Err(Error::invalid("coefficient noise needs n > 0 and δ > 0"));
    }
    let raw = SpectralField::new(gaussian(n, seed));
    Ok(raw.scale(delta / raw.l2()))
}
