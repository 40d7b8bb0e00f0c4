//! Seeded random streams.
//!
//! One 64-bit master seed fans out into independent streams by hashing
//! `(seed, tag₁, tag₂, …)` with the SplitMix64 finalizer. Each stream is a
//! ChaCha8 generator; normal deviates come from the Box–Muller transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function (Steele, Lea & Flood).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of tags.
///
/// `derive_seed(s, &[a, b])` folds each tag into the running state as
/// `state = splitmix64(state ^ splitmix64(tag + k·γ))` where `k` is the
/// tag position, so permuted tag lists give different seeds.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().enumerate().fold(splitmix64(master), |state, (k, &tag)| {
        let salted = tag.wrapping_add((k as u64 + 1).wrapping_mul(GOLDEN_GAMMA));
        splitmix64(state ^ splitmix64(salted))
    })
}

/// Deterministic stream of uniform and standard normal deviates.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Stream for `(master, tags…)`, see [`derive_seed`].
    pub fn derived(master: u64, tags: &[u64]) -> Self {
        Self::new(derive_seed(master, tags))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal deviate via Box–Muller; the second deviate of each
    /// pair is cached for the next call.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    /// `rows × cols` matrix of iid `N(0, std²)` entries, filled row by row.
    pub fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| std * self.gaussian()).collect();
        Matrix::from_row_slice(rows, cols, &data).expect("positive dimensions")
    }
}
