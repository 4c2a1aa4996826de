//! Seed derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream keyed by a
//! sub-seed, where the sub-seed is the first eight bytes (little-endian) of
//! SHA-256 over the length-prefixed parts. Sub-seeds depend only on their
//! parts, so work items can be processed in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a sub-seed derivation.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    U64(u64),
    Str(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::U64(v)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Str(v)
    }
}

impl<'a> From<&'a String> for SeedPart<'a> {
    fn from(v: &'a String) -> Self {
        SeedPart::Str(v.as_str())
    }
}

pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        match part {
            SeedPart::U64(v) => {
                hasher.update([0u8]);
                hasher.update(v.to_le_bytes());
            }
            SeedPart::Str(s) => {
                hasher.update([1u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn rng_for(parts: &[SeedPart<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_are_length_prefixed() {
        let a = derive_seed(&["ab".into(), "c".into()]);
        let b = derive_seed(&["a".into(), "bc".into()]);
        assert_ne!(a, b);
    }

    #[test]
    fn integer_and_string_parts_differ() {
        assert_ne!(derive_seed(&[7u64.into()]), derive_seed(&["7".into()]));
    }

    #[test]
    fn stable_value() {
        // Frozen so that a change of hashing scheme is caught; plans depend on it.
        // Value from an independent SHA-256 over 00|0u64 LE|01|2u64 LE|"q1".
        assert_eq!(
            derive_seed(&[0u64.into(), "q1".into()]),
            17637490769555632374
        );
        assert_ne!(
            derive_seed(&[0u64.into(), "q1".into()]),
            derive_seed(&[1u64.into(), "q1".into()])
        );
    }
}
