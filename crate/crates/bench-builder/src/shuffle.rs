//! Per-instance randomness.
//!
//! Every random choice is drawn from ChaCha20 (a counter-based generator)
//! keyed by `SHA-256(seed as u64 little-endian || label)`. Bounded draws use
//! rejection sampling on `next_u64`, so the stream of choices depends only on
//! the key, never on platform word size or library internals.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::instance::{keyed, Choice};

pub fn keyed_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(key)
}

/// Uniform in `0..n`.
pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let reject_under = n.wrapping_neg() % n;
    loop {
        let r = rng.next_u64();
        if r >= reject_under {
            return r % n;
        }
    }
}

/// Fisher-Yates permutation of `0..n`: `perm[new_position] = old_index`.
pub fn permutation(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut rng = keyed_rng(seed, label);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(&mut rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Shuffle `options`, re-key them A.., and return the answer's new key.
pub fn shuffle_options(
    options: &[Choice],
    answer_key: &str,
    instance_id: &str,
    seed: u64,
) -> Result<(Vec<Choice>, String)> {
    let gold = options
        .iter()
        .position(|c| c.key == answer_key)
        .ok_or_else(|| BenchError::Invalid(format!("{instance_id}: answer `{answer_key}` not among options")))?;
    let perm = permutation(options.len(), seed, instance_id);
    let texts: Vec<String> = perm.iter().map(|&i| options[i].text.clone()).collect();
    let shuffled = keyed(&texts)?;
    let new_pos = perm.iter().position(|&i| i == gold).expect("permutation covers gold");
    let key = shuffled[new_pos].key.clone();
    Ok((shuffled, key))
}
