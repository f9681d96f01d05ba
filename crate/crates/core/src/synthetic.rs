//! Synthetic images built as sparse convolutional combinations of a known
//! set of generator filters. Used for smoke runs and the test suites.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::transforms::{dict_apply, Fft2d, Signal};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub dims: (usize, usize),
    /// Probability that a coefficient is active.
    pub density: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

/// Seeded random generator filters (unit norm).
pub fn generator_dictionary(count: usize, size: (usize, usize), seed: u64) -> Result<Dictionary> {
    Dictionary::random(count, size, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `s = sum_m g_m * z_m + noise`, with Bernoulli-Gaussian maps `z_m`.
pub fn synthetic_image<R: Rng + ?Sized>(
    generator: &Dictionary,
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<Signal> {
    let (n1, n2) = spec.dims;
    let codes = Array3::from_shape_simple_fn((generator.count(), n1, n2), || {
        let active = rng.random::<f64>() < spec.density;
        let amp: f64 = rng.sample(StandardNormal);
        if active {
            amp
        } else {
            0.0
        }
    });
    let plan = Fft2d::new(spec.dims)?;
    let g_hat = generator.spectra(&plan)?;
    let z_hat = plan.forward_set(codes.outer_iter());
    let mut image = plan.inverse(&dict_apply(&g_hat, &z_hat)?)?;
    if spec.noise > 0.0 {
        image.mapv_inplace(|v| v + spec.noise * rng.sample::<f64, _>(StandardNormal));
    }
    Signal::new(image)
}

/// `count` images from one seeded stream.
pub fn synthetic_set(
    generator: &Dictionary,
    spec: &SyntheticSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Signal>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| synthetic_image(generator, spec, &mut rng))
        .collect()
}
