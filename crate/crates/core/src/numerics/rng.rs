use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic counter-based random stream.
///
/// Each stream is a ChaCha20 keystream selected by `(seed, stream_id)`. Sub-streams hash
/// the parent id with a child label, so a fixed labelling of work items gives results that
/// do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng, spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in 32-bit words within the keystream.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Independent child stream labelled `label`. Does not advance `self`.
    pub fn substream(&self, label: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::with_stream(self.seed, id)
    }

    /// Child stream for a path of labels, e.g. `[step, sample, layer]`.
    pub fn derive(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone_fresh(), |s, &l| s.substream(l))
    }

    fn clone_fresh(&self) -> Self {
        Self::with_stream(self.seed, self.stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exp(1) draw.
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open0().ln()
    }

    /// Standard normal draw (Box–Muller; the second variate is cached).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform_open0().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], stddev: f64) {
        for v in out {
            *v = stddev * self.gaussian();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chi2_sf, sample_gaussian, std_normal_cdf};

    #[test]
    fn identical_seeds_identical_sequences() {
        let a = sample_gaussian(&mut SeededStream::new(7), 0.0, 1.0, 1000);
        let b = sample_gaussian(&mut SeededStream::new(7), 0.0, 1.0, 1000);
        assert_eq!(a, b);
        let c = sample_gaussian(&mut SeededStream::new(8), 0.0, 1.0, 1000);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_stddev_is_constant() {
        let v = sample_gaussian(&mut SeededStream::new(1), 2.5, 0.0, 100);
        assert!(v.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn derive_is_order_independent_of_parent_use() {
        let mut parent = SeededStream::new(3);
        let before = parent.derive(&[1, 2]).next_u64();
        parent.next_u64();
        assert_eq!(before, parent.derive(&[1, 2]).next_u64());
        assert_ne!(before, parent.derive(&[2, 1]).next_u64());
        assert_eq!(parent.substream(5).next_u64(), parent.substream(5).next_u64());
    }

    #[test]
    fn counter_advances() {
        let mut s = SeededStream::new(0);
        assert_eq!(s.counter(), 0);
        s.next_u64();
        assert_eq!(s.counter(), 2);
    }

    #[test]
    fn million_draws_moments() {
        let n = 1_000_000;
        let v = sample_gaussian(&mut SeededStream::new(11), 0.0, 1.0, n);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean={mean}");
        assert!((var - 1.0).abs() < 0.01, "var={var}");
    }

    #[test]
    fn chi_squared_goodness_of_fit() {
        let n = 100_000;
        let bins = 50;
        let mut counts = vec![0usize; bins];
        let mut s = SeededStream::new(2024);
        for _ in 0..n {
            // equiprobable bins via the probability integral transform
            let u = std_normal_cdf(s.gaussian());
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p_value = chi2_sf(stat, (bins - 1) as f64);
        assert!(p_value > 1e-3, "stat={stat} p={p_value}");
    }

    #[test]
    fn substreams_uncorrelated() {
        let root = SeededStream::new(99);
        let n = 100_000;
        let a = sample_gaussian(&mut root.substream(0), 0.0, 1.0, n);
        let b = sample_gaussian(&mut root.substream(1), 0.0, 1.0, n);
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr={corr}");
    }
}
