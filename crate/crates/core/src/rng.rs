//! Seedable, splittable random streams.
//!
//! A [`StreamKey`] names a position in a tree of streams; deriving a child
//! key is a pure hash, so the stream used for e.g. (step, layer, node,
//! relation) does not depend on the order in which streams are requested.
//! Each key seeds a ChaCha8 generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    pub fn child(self, word: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(word.wrapping_add(0xD1B5_4A32_D192_ED03))))
    }

    pub fn derive(self, path: &[u64]) -> Self {
        path.iter().fold(self, |k, &w| k.child(w))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
