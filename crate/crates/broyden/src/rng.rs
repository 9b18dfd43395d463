//! Seedable, splittable pseudo-randomness for data generation and
//! experiments.
//!
//! Everything random in this crate flows through [`SplitMix64`], a 64-bit
//! state generator with a fixed output function, so a given seed produces
//! the same bytes on every platform and every build. Experiment sub-streams
//! are derived with [`derive_seed`]; adding runs to an experiment never
//! perturbs the streams of existing runs.

/// SplitMix64 generator (Steele, Lea & Flood's mixing constants).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform draw from `[-1, 1)`.
    pub fn uniform_symmetric(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Standard normal draw via Box-Muller (two uniforms per call, no
    /// cached second value, so the stream position is easy to reason about).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 / ((1u64 << 53) + 1) as f64; // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Derives an independent sub-seed from a master seed and a list of salts
/// (experiment coordinates such as scheme index and grid position).
pub fn derive_seed(master: u64, salts: &[u64]) -> u64 {
    let mut rng = SplitMix64::new(master);
    let mut out = rng.next_u64();
    for &salt in salts {
        let mut mix = SplitMix64::new(out ^ salt.wrapping_mul(0xA0761D6478BD642F));
        out = mix.next_u64();
    }
    out
}
