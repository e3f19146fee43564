//! SplitMix64 and the per-test-image seed derivation.
//!
//! Both are fixed algorithms so that random selections recorded as goldens
//! reproduce in any implementation:
//!
//! * `fnv1a64(bytes)`: offset `0xcbf29ce484222325`, prime `0x100000001b3`.
//! * `derive_seed(global, id) = mix(global ^ fnv1a64(id))`, where `mix` is the
//!   SplitMix64 output function.
//! * `SplitMix64::next_u64` adds `0x9e3779b97f4a7c15` to the state and returns
//!   `mix(state)`.
//! * `below(n)` rejects draws `>= u64::MAX - u64::MAX % n` and returns
//!   `draw % n`.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(global_seed: u64, key: &str) -> u64 {
    mix(global_seed ^ fnv1a64(key.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform real in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
