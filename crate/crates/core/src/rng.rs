//! Seeded, splittable random streams and the truncated normal used by the
//! simulation designs.
//!
//! Every random draw in the crate flows from an [`RngSpec`]. A spec names a
//! ChaCha8 key (the seed) and a 64-bit stream; distinct streams under the same
//! seed are independent, so replications and sub-steps each own their own
//! generator and results do not depend on scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream identified by `tag`. Children of distinct tags (and of
    /// distinct parents) land on unrelated streams under the same key.
    pub fn derive(&self, tag: u64) -> RngSpec {
        RngSpec {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `Z * 1{|Z| <= trunc * sigma}` with `Z ~ N(0, sigma^2)`.
///
/// Draws outside the band are set to zero, not resampled.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    sigma: f64,
    bound: f64,
}

impl TruncatedNormal {
    pub fn new(sigma2: f64, trunc: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        if !(trunc > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation constant must be positive, got {trunc}"
            )));
        }
        let sigma = sigma2.sqrt();
        Ok(Self {
            sigma,
            bound: trunc * sigma,
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl Distribution<f64> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let z = z * self.sigma;
        if z.abs() <= self.bound {
            z
        } else {
            0.0
        }
    }
}

pub fn sample_truncated_normal(
    spec: &RngSpec,
    sigma2: f64,
    trunc: f64,
    len: usize,
) -> Result<Vec<f64>> {
    let dist = TruncatedNormal::new(sigma2, trunc)?;
    let mut rng = spec.rng();
    Ok((0..len).map(|_| dist.sample(&mut rng)).collect())
}
