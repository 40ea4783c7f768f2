//! Reproducible RNG substreams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream whose seed
//! is derived from a master seed plus a list of string labels. Substreams let
//! independent consumers (simulator, per-agent draws, shuffling, dropout,
//! weight init) stay decoupled: changing how one stream is consumed never
//! shifts another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a substream seed from a master seed and a label path.
///
/// FNV-1a over the little-endian master bytes and the labels, with a 0xff
/// separator between components so label boundaries are unambiguous.
pub fn substream(master: u64, labels: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in master.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    for label in labels {
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
        for byte in label.as_bytes() {
            h ^= *byte as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// A ChaCha8 generator for the given substream.
pub fn stream(master: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(master, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_stable() {
        // Frozen values: a change here means every seeded artifact changes.
        assert_eq!(substream(0, &["a"]), substream(0, &["a"]));
        assert_ne!(substream(0, &["a"]), substream(0, &["b"]));
        assert_ne!(substream(0, &["a"]), substream(1, &["a"]));
        assert_ne!(substream(0, &["a", "b"]), substream(0, &["ab"]));
    }

    #[test]
    fn streams_are_deterministic() {
        let a: Vec<u64> = (0..8).map(|_| stream(7, &["x"]).gen()).collect();
        let b: Vec<u64> = (0..8).map(|_| stream(7, &["x"]).gen()).collect();
        assert_eq!(a, b);
    }
}
