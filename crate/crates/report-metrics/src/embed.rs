//! Text embedders for the similarity metric.

/// Maps text to a fixed-length vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Character trigrams of `" " + text + " "`, hashed with 64-bit FNV-1a into
/// `dim` buckets, counted, and L2-normalised.
#[derive(Clone, Copy, Debug)]
pub struct TrigramEmbedder {
    pub dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self { dim: 128 }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = format!(" {text} ").chars().collect();
        let mut v = vec![0.0; self.dim];
        for w in padded.windows(3) {
            let gram: String = w.iter().collect();
            v[(fnv1a64(gram.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Cosine similarity; `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}
