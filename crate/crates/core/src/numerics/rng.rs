use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic, splittable random stream.
///
/// Identical seed plus identical call sequence reproduces identical draws.
/// Child streams derived by key are independent of the parent's position,
/// so per-episode and per-sample draws do not depend on worker interleaving.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15)),
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of raw 64-bit draws consumed so far (the sequence position).
    pub fn position(&self) -> u64 {
        self.draws
    }

    /// Child stream keyed by an integer; independent of this stream's position.
    pub fn derive(&self, key: u64) -> RngStream {
        RngStream::new(mix64(self.seed ^ mix64(key ^ 0x6a09_e667_f3bc_c909)))
    }

    /// Child stream keyed by a label, for readable derivation trees.
    pub fn derive_str(&self, label: &str) -> RngStream {
        self.derive(fnv1a(label.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang squeeze, boosted for alpha < 1.
    fn gamma(&mut self, alpha: f64) -> f64 {
        debug_assert!(alpha > 0.0);
        if alpha < 1.0 {
            let u = self.uniform().max(f64::MIN_POSITIVE);
            return self.gamma(alpha + 1.0) * u.powf(1.0 / alpha);
        }
        let d = alpha - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Beta(a, b) draw as Ga/(Ga+Gb).
    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        let ga = self.gamma(a);
        let gb = self.gamma(b);
        ga / (ga + gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_identical() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.position(), b.position());
    }

    #[test]
    fn derived_streams_ignore_parent_position() {
        let parent = RngStream::new(7);
        let mut early = parent.derive(3);
        let mut consumed = RngStream::new(7);
        for _ in 0..50 {
            consumed.next_u64();
        }
        let mut late = consumed.derive(3);
        for _ in 0..20 {
            assert_eq!(early.next_u64(), late.next_u64());
        }
    }

    #[test]
    fn distinct_keys_distinct_streams() {
        let parent = RngStream::new(7);
        let a = parent.derive(0).next_u64();
        let b = parent.derive(1).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = rng.normal();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn beta_uniform_special_case() {
        let mut rng = RngStream::new(5);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.beta(1.0, 1.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn beta_skewed_mean() {
        // mean of Beta(1.5, 1) is a/(a+b) = 0.6
        let mut rng = RngStream::new(5);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.beta(1.5, 1.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.6).abs() < 0.01, "mean {mean}");
    }
}
