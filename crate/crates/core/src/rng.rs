//! Seeded random streams and the variate generators built on them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// An addressable random stream: `(seed, stream)` always yields the same draws,
/// and distinct stream ids yield independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Derives a child stream. Children of the same parent with different ids
    /// are distinct streams; the mapping is fixed, so parallel schedules that
    /// address children by id stay reproducible.
    pub fn child(&self, id: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(id.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Child stream keyed by a label and an index.
    pub fn child2(&self, label: u64, id: u64) -> Self {
        self.child(label).child(id)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Standard normal variates by the Box–Muller transform.
#[derive(Debug, Clone)]
pub struct Gaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> Gaussian<R> {
    pub fn new(rng: R) -> Self {
        Gaussian { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.sample();
        }
    }
}

/// Fills a vector with `len` standard normals drawn from `stream`.
pub fn gaussian_vec(stream: &RngStream, len: usize) -> Vec<f64> {
    let mut g = Gaussian::new(stream.rng());
    let mut v = vec![0.0; len];
    g.fill(&mut v);
    v
}

/// One symmetric p-stable variate (Chambers–Mallows–Stuck), `0 < p <= 2`.
/// For `p = 1` this is a standard Cauchy variate.
pub fn p_stable<R: Rng>(rng: &mut R, p: f64) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    if (p - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let w = -(1.0 - rng.random::<f64>()).ln();
    let a = (p * v).sin() / v.cos().powf(1.0 / p);
    let b = (((1.0 - p) * v).cos() / w).powf((1.0 - p) / p);
    a * b
}

const MEDIAN_SAMPLES: usize = 1_000_000;
const MEDIAN_SEED: u64 = 0x5eed_ab1e_d15c_0001;

fn median_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Monte Carlo estimate of `median(|X|)` for a symmetric p-stable `X`.
pub fn p_stable_abs_median_mc(p: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed).rng();
    let mut xs: Vec<f64> = (0..samples).map(|_| p_stable(&mut rng, p).abs()).collect();
    let mid = samples / 2;
    let (_, m, _) = xs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// `median(|X|)` for a symmetric p-stable `X`. Exact for `p = 1` (equals
/// `tan(pi/4) = 1`); otherwise a cached one-million-sample estimate.
pub fn p_stable_abs_median(p: f64) -> f64 {
    if (p - 1.0).abs() < 1e-12 {
        return 1.0;
    }
    let key = p.to_bits();
    if let Some(m) = median_cache().lock().unwrap().get(&key) {
        return *m;
    }
    let m = p_stable_abs_median_mc(p, MEDIAN_SAMPLES, MEDIAN_SEED);
    median_cache().lock().unwrap().insert(key, m);
    m
}
