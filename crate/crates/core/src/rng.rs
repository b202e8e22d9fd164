//! Counter-based deterministic randomness.
//!
//! Every random quantity in the crate is a pure function of a 64-bit key.
//! Keys are derived by hashing (seed, coordinates) or (seed, sample index),
//! so lattice cells and Monte Carlo samples draw from independent streams
//! with O(1) random access and no sequential state to share between workers.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche mix of a 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for one Monte Carlo sample of a campaign.
#[inline]
pub fn sample_key(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(index.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03))
}

/// Key for one lattice cell: a hash chain over the signed coordinates.
#[inline]
pub fn cell_key(seed: u64, z: &[i64]) -> u64 {
    let mut s = mix64(seed ^ 0x517C_C1B7_2722_0A95);
    for (axis, &c) in z.iter().enumerate() {
        s = mix64(s ^ mix64((c as u64) ^ (axis as u64).wrapping_mul(GOLDEN)));
    }
    s
}

/// A tiny keyed stream generator (SplitMix64 sequence).
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
    spare_gauss: Option<f64>,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        Stream { state: mix64(key), spare_gauss: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state.wrapping_sub(GOLDEN))
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        // Modulo bias is < 2^-50 for any n we use; acceptable here.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gauss.take() {
            return g;
        }
        loop {
            let u = self.next_f64();
            let v = self.next_f64();
            if u > 0.0 {
                let r = (-2.0 * u.ln()).sqrt();
                let theta = 2.0 * std::f64::consts::PI * v;
                self.spare_gauss = Some(r * theta.sin());
                return r * theta.cos();
            }
        }
    }
}
