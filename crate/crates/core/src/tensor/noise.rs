use super::{Image, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Seed for every random stream in the crate.
///
/// Streams are ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) feeding the
/// ziggurat `StandardNormal` sampler, so a seed reproduces the same values on
/// every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent seed for a sub-stream.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

pub fn standard_normal_vec(len: usize, seed: RngSeed) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Returns `x + e` with `e` i.i.d. `N(0, sigma^2)`.
pub fn add_awgn(x: &Image, sigma: f64, seed: RngSeed) -> Result<Image, TensorError> {
    if !(sigma >= 0.0) {
        return Err(TensorError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = standard_normal_vec(x.len(), seed);
    let data = x
        .as_slice()
        .iter()
        .zip(noise)
        .map(|(v, e)| v + sigma * e)
        .collect();
    Image::new(x.shape(), data)
}
