//! Seeded random streams.
//!
//! Every random draw comes from a ChaCha20 stream keyed by the master seed
//! and selected by `(purpose, index)`, so results do not depend on the order
//! in which replicates or subsystems are evaluated.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Synthesis = 1,
    Signal = 2,
    Noise = 3,
    Trial = 4,
}

/// Opens the stream for `purpose` and replicate `index` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & 0xffff_ffff_ffff));
    rng
}

/// Circular complex normal draw with unit variance, `E|z|^2 = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}
