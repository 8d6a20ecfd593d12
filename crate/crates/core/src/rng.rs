//! Deterministic random streams.
//!
//! Every scenario owns one master seed. Scenario sampling and each noise draw
//! use disjoint ChaCha streams derived from it, so a pilot realisation can be
//! regenerated without replaying anything else.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Scenario,
    UplinkNoise(u64),
    DownlinkNoise(u64),
    /// Full downlink training used by the linear baselines.
    DownlinkTraining(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Scenario => 0,
            Stream::UplinkNoise(d) => 1 + 3 * d,
            Stream::DownlinkNoise(d) => 2 + 3 * d,
            Stream::DownlinkTraining(d) => 3 + 3 * d,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Circularly-symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Mixes a run seed with a trial index into an independent per-trial seed
/// (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
