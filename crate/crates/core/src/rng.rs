//! Index-keyed random streams.
//!
//! Every stream is a `ChaCha8Rng` seeded with
//!
//! ```text
//! derive(master, j, b, tag) =
//!     mix(mix(mix(mix(master) ^ j) ^ b) ^ tag)
//! ```
//!
//! where `mix` is the SplitMix64 finaliser
//!
//! ```text
//! z += 0x9E3779B97F4A7C15
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z ^ (z >> 31)
//! ```
//!
//! (wrapping arithmetic). `j` is the Monte Carlo replication, `b` the
//! bootstrap replication (0 for data generation) and `tag` names the purpose
//! of the stream, so results never depend on thread count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    /// Structural/reduced-form innovations `(u_t, v_t)` of the simulator.
    pub const DGP_ERRORS: u64 = 0x01;
    /// Dataset seed of Monte Carlo replication `j`.
    pub const REPLICATION: u64 = 0x02;
    /// Multipliers of the main structural-equation bootstrap.
    pub const BOOT_MAIN: u64 = 0x10;
    /// Multipliers of the reduced-form pre-test at stage `l` are `BOOT_RF + l`.
    pub const BOOT_RF: u64 = 0x20;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `(master, j, b, tag)`.
pub fn derive_seed(master: u64, j: u64, b: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(splitmix64(master) ^ j) ^ b) ^ tag)
}

pub fn stream(master: u64, j: u64, b: u64, tag: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, j, b, tag))
}

/// Two-point multiplier law of the wild bootstrap.
pub trait Multiplier {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
}

/// `P(nu = -1) = P(nu = +1) = 1/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rademacher;

impl Multiplier for Rademacher {
    #[inline]
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Multiplier sequence `nu_1..nu_n` for bootstrap replication `b` of
/// Monte Carlo replication `j`.
pub fn multipliers<M: Multiplier>(law: &M, n: usize, master: u64, j: u64, b: u64, tag: u64) -> Vec<f64> {
    let mut rng = stream(master, j, b, tag);
    (0..n).map(|_| law.draw(&mut rng)).collect()
}
