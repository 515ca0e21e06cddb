use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mask size `round(alpha * h)`, clamped to `[1, h - 1]`.
pub fn mask_size(h_prime: usize, alpha: f64) -> Result<usize> {
    if h_prime < 2 {
        return Err(Error::InvalidArgument(format!(
            "masking needs at least 2 tokens, got {h_prime}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0, 1)")));
    }
    let raw = (alpha * h_prime as f64).round() as usize;
    let k = raw.clamp(1, h_prime - 1);
    if k != raw {
        log::warn!("mask size {raw} for alpha {alpha} and {h_prime} tokens clamped to {k}");
    }
    Ok(k)
}

/// Uniform draw without replacement of `mask_size(h, alpha)` token indices,
/// returned sorted.
pub fn sample_mask_set(h_prime: usize, alpha: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let k = mask_size(h_prime, alpha)?;
    let mut idx = sample(rng, h_prime, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Independent generator for one named stream of a seeded run, e.g.
/// `derive_rng(seed, &[DROPOUT, epoch, step, i])`.
pub fn derive_rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for s in stream {
        h.update(s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
