//! Seeded, platform-independent random streams.
//!
//! Every run uses ChaCha8 (`rand_chacha::ChaCha8Rng`). A stream is built by
//! `ChaCha8Rng::seed_from_u64(run_seed)` followed by `set_stream(stream_id)`,
//! which selects an independent 64-bit ChaCha stream under the same key. Each
//! simulated entity draws from its own stream, so adding a source never shifts
//! the draws seen by any other entity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream identifiers. Per-entity streams add the entity index to a base.
pub mod stream {
    pub const TRACES: u64 = 1;
    pub const REQUESTS: u64 = 2;
    pub const VIDEO_BASE: u64 = 1 << 16;
    pub const FTP_BASE: u64 = 2 << 16;
}

pub type SimRng = ChaCha8Rng;

/// The named sub-stream `stream_id` of run `seed`.
pub fn substream(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_seed_same_draws() {
        let mut a = substream(42, stream::TRACES);
        let mut b = substream(42, stream::TRACES);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = substream(42, stream::VIDEO_BASE);
        let mut b = substream(42, stream::VIDEO_BASE + 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn pinned_output() {
        // Guards the documented algorithm: changing the PRNG breaks replay of
        // every stored result.
        let mut r = substream(0, 0);
        let first = r.next_u64();
        let mut again = substream(0, 0);
        assert_eq!(first, again.next_u64());
        assert_eq!(first, PINNED_FIRST_DRAW);
    }

    const PINNED_FIRST_DRAW: u64 = 13_080_132_717_333_068_652;
}
