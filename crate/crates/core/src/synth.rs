//! Synthetic test matrices and a uniform-sampling baseline.

use rand::Rng;

use crate::matrix::SparseRowMatrix;
use crate::par::{map_chunks, ROW_CHUNK};
use crate::rng::{Gaussian, RngStream};
use crate::sampling::{sample, SampledMatrix, ScoreKind, ScoreVector};

fn build_rows<F>(n: usize, d: usize, rng: &RngStream, row: F) -> SparseRowMatrix
where
    F: Fn(usize, &mut rand_chacha::ChaCha8Rng, &mut Vec<f64>) + Sync + Send,
{
    let parts = map_chunks(n, ROW_CHUNK, |c, range| {
        let mut r = rng.child(c as u64).rng();
        let mut m = SparseRowMatrix::with_capacity(d, range.len(), range.len() * d);
        let mut buf = vec![0.0; d];
        for i in range {
            buf.iter_mut().for_each(|v| *v = 0.0);
            row(i, &mut r, &mut buf);
            m.push_dense_row(&buf);
        }
        m
    });
    let refs: Vec<&SparseRowMatrix> = parts.iter().collect();
    if refs.is_empty() {
        SparseRowMatrix::empty(d)
    } else {
        SparseRowMatrix::vstack(&refs).expect("equal column counts")
    }
}

/// `n x d` matrix whose entries are independently nonzero with probability
/// `density`, with standard normal values.
pub fn gaussian(n: usize, d: usize, density: f64, rng: &RngStream) -> SparseRowMatrix {
    build_rows(n, d, rng, |_, r, buf| {
        for v in buf.iter_mut() {
            if density >= 1.0 || r.random::<f64>() < density {
                *v = Gaussian::new(&mut *r).sample();
            }
        }
    })
}

/// Dense Gaussian rows scaled so that row `i` has norm about `(i + 1)^(-exponent)`.
pub fn power_law_rows(n: usize, d: usize, exponent: f64, rng: &RngStream) -> SparseRowMatrix {
    build_rows(n, d, rng, |i, r, buf| {
        let mut g = Gaussian::new(&mut *r);
        g.fill(buf);
        let s = ((i + 1) as f64).powf(-exponent) / (d as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    })
}

/// Gaussian rows on the first `d - 1` coordinates plus one row, at index
/// `n / 2`, that alone spans the last coordinate. That row has leverage 1.
pub fn coherent_spike(n: usize, d: usize, rng: &RngStream) -> SparseRowMatrix {
    assert!(d >= 2 && n >= 2);
    let spike = n / 2;
    build_rows(n, d, rng, |i, r, buf| {
        if i == spike {
            buf[d - 1] = 1.0;
        } else {
            Gaussian::new(&mut *r).fill(&mut buf[..d - 1]);
        }
    })
}

/// Index of the spike row in [`coherent_spike`].
pub fn spike_index(n: usize) -> usize {
    n / 2
}

/// Keeps every row with probability `m / n`, rescaled by `sqrt(n / m)`.
pub fn uniform_sample(a: &SparseRowMatrix, m: f64, rng: &RngStream) -> SampledMatrix {
    let n = a.n_rows();
    let q = if n == 0 { 0.0 } else { (m / n as f64).min(1.0) };
    let probs = ScoreVector {
        values: vec![q; n],
        kind: ScoreKind::SamplingProbability,
    };
    sample(a, &probs, 2.0, rng).expect("uniform probabilities are valid")
}
