//! Content hashing and seed sub-streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Derives the seed of a named sub-stream, so that sampling, batching and
/// audits can be re-run independently from one top-level seed.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn substream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}

/// `git describe` of the build, when it was available at compile time.
pub fn build_describe() -> &'static str {
    option_env!("INCSTAB_GIT_DESCRIBE").unwrap_or("unknown")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_by_name_and_seed() {
        assert_ne!(substream_seed(1, "sampling"), substream_seed(1, "batching"));
        assert_ne!(substream_seed(1, "sampling"), substream_seed(2, "sampling"));
        assert_eq!(substream_seed(5, "audit"), substream_seed(5, "audit"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
