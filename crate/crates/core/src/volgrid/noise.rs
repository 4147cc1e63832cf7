use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Volume3;
use crate::error::{Error, Result};

/// Anything carrying a flat buffer of finite f32 samples.
pub trait SampleBuffer: Clone {
    fn samples_mut(&mut self) -> &mut [f32];
}

impl SampleBuffer for Volume3 {
    fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Adds i.i.d. `Normal(0, sigma^2)` noise drawn from a ChaCha8 stream keyed
/// by `seed`. Samples are consumed in storage order, so the output is a
/// pure function of `(data, sigma, seed)`.
pub fn add_gaussian_noise<T: SampleBuffer>(data: &T, sigma: f64, seed: u64) -> Result<T> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be a non-negative finite number, got {sigma}"
        )));
    }
    let mut out = data.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.samples_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)) as f32;
    }
    Ok(out)
}
