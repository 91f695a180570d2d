//! Seeded noise for synthetic data.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

pub use rand_chacha::ChaCha8Rng as Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// v·(1 + rel·ξ) with ξ ~ N(0, 1).
pub fn multiplicative(values: &mut [f64], rel: f64, rng: &mut Rng) {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    for v in values.iter_mut() {
        *v *= 1.0 + rel * n.sample(rng);
    }
}

/// v + sigma·ξ with ξ ~ N(0, 1).
pub fn additive(values: &mut [f64], sigma: f64, rng: &mut Rng) {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    for v in values.iter_mut() {
        *v += sigma * n.sample(rng);
    }
}
