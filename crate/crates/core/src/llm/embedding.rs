//! Deterministic feature-hashing embedding.
//!
//! Each feature (lowercased word, adjacent word pair, and the raw text
//! itself) seeds a ChaCha stream from its SHA-256 digest; the stream is
//! expanded into a Gaussian direction and the weighted sum is normalized.
//! Texts sharing vocabulary land close together, and any two distinct texts
//! differ through the raw-text feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::kb::EmbeddingVector;

pub const HASH_EMBEDDING_DIM: usize = 64;

const WORD_WEIGHT: f64 = 1.0;
const PAIR_WEIGHT: f64 = 0.5;
const RAW_WEIGHT: f64 = 0.25;

fn feature_direction(kind: &str, feature: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(b"sopflow-embed-v1\0");
    hasher.update(kind.as_bytes());
    hasher.update(b"\0");
    hasher.update(feature.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unit-norm embedding of `text` in `dim` dimensions. Pure function of its
/// inputs. The caller rejects empty text.
pub fn hash_embedding(text: &str, dim: usize) -> EmbeddingVector {
    let mut acc = vec![0.0f64; dim];
    let mut add = |dir: Vec<f64>, w: f64| {
        for (a, d) in acc.iter_mut().zip(dir) {
            *a += w * d;
        }
    };
    let toks = words(text);
    for t in &toks {
        add(feature_direction("w", t, dim), WORD_WEIGHT);
    }
    for pair in toks.windows(2) {
        add(
            feature_direction("p", &format!("{} {}", pair[0], pair[1]), dim),
            PAIR_WEIGHT,
        );
    }
    add(feature_direction("r", text, dim), RAW_WEIGHT);
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    // A zero sum has probability zero; fall back to the raw direction anyway.
    let values = if norm > 0.0 {
        acc.into_iter().map(|v| v / norm).collect()
    } else {
        let dir = feature_direction("r", text, dim);
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.into_iter().map(|v| v / n).collect()
    };
    EmbeddingVector::new(values).expect("hash embedding is finite and non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::cosine_similarity;

    #[test]
    fn deterministic_and_unit_norm() {
        let a = hash_embedding("cpu usage above threshold", HASH_EMBEDDING_DIM);
        let b = hash_embedding("cpu usage above threshold", HASH_EMBEDDING_DIM);
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        let n: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn word_order_and_case_distinguish() {
        let ab = hash_embedding("pod failure", 64);
        let ba = hash_embedding("failure pod", 64);
        let upper = hash_embedding("Pod failure", 64);
        assert!(cosine_similarity(&ab, &ba).unwrap() < 1.0 - 1e-9);
        assert!(cosine_similarity(&ab, &upper).unwrap() < 1.0 - 1e-9);
    }

    #[test]
    fn shared_vocabulary_scores_higher() {
        let q = hash_embedding("metric cpu_usage on pod checkout-0 is above threshold", 64);
        let near = hash_embedding("Pod cpu_usage above threshold", 64);
        let far = hash_embedding("Network partition between services", 64);
        let s_near = cosine_similarity(&q, &near).unwrap();
        let s_far = cosine_similarity(&q, &far).unwrap();
        assert!(s_near > s_far, "{s_near} <= {s_far}");
    }
}
