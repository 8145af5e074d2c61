//! Deterministic seed derivation.
//!
//! Every stochastic routine takes an explicit base seed and derives one
//! sub-seed per independent draw site (grid point, realization, start, ...)
//! by mixing the base with integer tags. Draws therefore do not depend on
//! evaluation order, so parallel sweeps produce the same bytes as serial
//! ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; the standard finalizer used to decorrelate seed streams.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `base` and a list of tags.
///
/// Distinct tag lists give statistically independent streams; the same tags
/// always give the same seed.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    let mut out = splitmix(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xff51_afd7_ed55_8ccd);
        out ^= splitmix(&mut state);
    }
    out
}

/// A seeded counter-based generator for one draw site.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        let a = derive(7, &[1, 2]);
        let b = derive(7, &[1, 2]);
        let c = derive(7, &[2, 1]);
        let d = derive(8, &[1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn rng_streams_differ_between_sites() {
        let x: f64 = rng(derive(0, &[0])).gen();
        let y: f64 = rng(derive(0, &[1])).gen();
        assert_ne!(x, y);
    }
}
