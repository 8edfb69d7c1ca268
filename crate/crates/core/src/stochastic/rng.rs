use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Named random streams. Each stream is a separate ChaCha stream under the
/// same key, so draws on one never perturb another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    /// Increments of the forward Brownian motion `W`.
    W,
    /// Increments of the SPDE noise `B`.
    B,
    /// Network weight initialization.
    Init,
    /// Mini-batch draws of initial states.
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::W => 1,
            Stream::B => 2,
            Stream::Init => 3,
            Stream::Shuffle => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: Stream,
}

impl RngState {
    pub fn new(seed: u64, stream: Stream) -> Self {
        RngState { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream.id());
        rng
    }

    /// Same stream, seed mixed with `tag`.
    pub fn child(&self, tag: u64) -> Self {
        RngState {
            seed: mix_seed(self.seed, tag),
            stream: self.stream,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed. Not commutative in its arguments.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Fills `out` with independent standard normals (Box–Muller, both branches used).
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = box_muller(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = box_muller(rng).0;
    }
}

fn box_muller<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_draws() {
        let s = RngState::new(42, Stream::W);
        let mut a = vec![0.0; 17];
        let mut b = vec![0.0; 17];
        fill_standard_normal(&mut s.rng(), &mut a);
        fill_standard_normal(&mut s.rng(), &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        fill_standard_normal(&mut RngState::new(42, Stream::W).rng(), &mut a);
        fill_standard_normal(&mut RngState::new(42, Stream::B).rng(), &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let n = 200_000;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        fill_standard_normal(&mut RngState::new(7, Stream::W).rng(), &mut a);
        fill_standard_normal(&mut RngState::new(7, Stream::B).rng(), &mut b);
        let corr: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // 5 standard errors of a product of independent standard normals
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn child_seeds_are_distinct() {
        let s = RngState::new(1, Stream::Init);
        assert_ne!(s.child(0).seed, s.child(1).seed);
        assert_ne!(mix_seed(3, 5), mix_seed(5, 3));
    }
}
