//! Checkers that turn approximation guarantees into pass/fail reports.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::matrix::{gram_with_cap, pinv_sqrt_from_eigen, sym_eigen, DenseMatrix, SparseRowMatrix, DEFAULT_MAX_DIM, DEFAULT_REL_CUTOFF};
use crate::rng::{Gaussian, RngStream};
use rand::Rng;

/// Null-space leak tolerance relative to `||B||_F`.
pub const LEAK_TOL: f64 = 1e-8;

/// Two-sided ℓ2 comparison of `B` against `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Extreme eigenvalues of the whitened `B^T B`, i.e. the extreme values
    /// of `||Bx||^2 / ||Ax||^2` over the range of `A^T`.
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `||B N||_F` for an orthonormal basis `N` of the null space of `A`.
    pub null_space_leak: f64,
    pub leak_tolerance: f64,
    pub rank: usize,
    pub eps_tested: f64,
    pub pass: bool,
}

/// Extreme ratios and null-space leak of `B` relative to `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralRatios {
    pub min: f64,
    pub max: f64,
    pub leak: f64,
    pub leak_tolerance: f64,
    pub rank: usize,
}

impl SpectralRatios {
    /// `lo A^T A <= B^T B <= hi A^T A`, with no leak outside the range of `A^T`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.min >= lo && self.max <= hi && self.leak <= self.leak_tolerance
    }
}

pub fn spectral_ratios(a: &SparseRowMatrix, b: &SparseRowMatrix) -> Result<SpectralRatios> {
    spectral_ratios_with(a, b, DEFAULT_REL_CUTOFF)
}

/// Whitens by `A`: with `W = V_r diag(lambda_r^{-1/2})` from `A^T A`, the
/// eigenvalues of `W^T B^T B W` bound `||Bx||^2 / ||Ax||^2`.
pub fn spectral_ratios_with(a: &SparseRowMatrix, b: &SparseRowMatrix, rel_cutoff: f64) -> Result<SpectralRatios> {
    if a.n_cols() != b.n_cols() {
        return Err(SketchError::contract(format!(
            "column counts differ: {} vs {}",
            a.n_cols(),
            b.n_cols()
        )));
    }
    let d = a.n_cols();
    let eig = sym_eigen(&gram_with_cap(a, DEFAULT_MAX_DIM)?, rel_cutoff)?;
    let gb = gram_with_cap(b, DEFAULT_MAX_DIM)?;
    let w = pinv_sqrt_from_eigen(&eig);
    let (min, max) = if eig.rank == 0 {
        (1.0, 1.0)
    } else {
        let white = w.transpose().matmul(&gb).matmul(&w);
        let sym = white.add(&white.transpose()).scaled(0.5);
        let e = sym_eigen(&sym, 0.0)?;
        (e.lambda_min(), e.lambda_max())
    };
    let null = eig.vectors(eig.rank..d);
    // ||B N||_F^2 = trace(N^T B^T B N).
    let leak_sq: f64 = if null.n_cols() == 0 {
        0.0
    } else {
        let t = null.transpose().matmul(&gb).matmul(&null);
        (0..t.n_rows()).map(|i| t.get(i, i)).sum()
    };
    Ok(SpectralRatios {
        min,
        max,
        leak: leak_sq.max(0.0).sqrt(),
        leak_tolerance: LEAK_TOL * b.frobenius(),
        rank: eig.rank,
    })
}

/// `(1 - eps)^2 A^T A <= B^T B <= (1 + eps)^2 A^T A`.
pub fn loewner_check(a: &SparseRowMatrix, b: &SparseRowMatrix, eps: f64) -> Result<SpectralReport> {
    let r = spectral_ratios(a, b)?;
    let lo = (1.0 - eps).powi(2);
    let hi = (1.0 + eps).powi(2);
    Ok(SpectralReport {
        min_ratio: r.min,
        max_ratio: r.max,
        null_space_leak: r.leak,
        leak_tolerance: r.leak_tolerance,
        rank: r.rank,
        eps_tested: eps,
        pass: r.within(lo, hi),
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DenseMatrix) -> Result<f64> {
    Ok(sym_eigen(m, 0.0)?.lambda_min())
}

/// `C <= D` in the Löwner order, up to `tol * max(|D|, |C|)`.
pub fn loewner_leq(c: &DenseMatrix, d: &DenseMatrix, tol: f64) -> Result<bool> {
    let scale = c.max_abs().max(d.max_abs()).max(f64::MIN_POSITIVE);
    Ok(min_eigenvalue(&d.sub(c))? >= -tol * scale)
}

/// Sampled-direction comparison of `||Bx||_p` against `||Ax||_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub directions_tested: usize,
    /// Directions with `Ax` numerically zero; these require `Bx` zero too.
    pub null_directions: usize,
    pub worst_low: f64,
    pub worst_high: f64,
    pub p: f64,
    pub eps_tested: f64,
    pub pass: bool,
}

const DIRECTION_BATCH: usize = 32;
const NULL_TOL: f64 = 1e-10;

fn col_p_norms(m: &DenseMatrix, p: f64) -> Vec<f64> {
    let mut acc = vec![0.0; m.n_cols()];
    for i in 0..m.n_rows() {
        for (a, v) in acc.iter_mut().zip(m.row(i)) {
            *a += v.abs().powf(p);
        }
    }
    acc.into_iter().map(|s| s.powf(1.0 / p)).collect()
}

/// Directions: `n_dirs / 2` Gaussian, the rest sparse (at most three random
/// coordinates with Gaussian weights), and every coordinate vector.
pub fn directions(d: usize, n_dirs: usize, rng: &RngStream) -> Vec<Vec<f64>> {
    let mut r = rng.rng();
    let mut out = Vec::with_capacity(n_dirs + d);
    let n_gauss = n_dirs / 2;
    let mut g = Gaussian::new(rng.child(1).rng());
    for _ in 0..n_gauss {
        let mut x = vec![0.0; d];
        g.fill(&mut x);
        out.push(x);
    }
    for _ in n_gauss..n_dirs {
        let mut x = vec![0.0; d];
        let support = r.random_range(1..=3.min(d).max(1));
        for _ in 0..support {
            x[r.random_range(0..d)] = g.sample();
        }
        out.push(x);
    }
    for j in 0..d {
        let mut x = vec![0.0; d];
        x[j] = 1.0;
        out.push(x);
    }
    out
}

/// Worst ratios `||Bx||_p / ||Ax||_p` over [`directions`].
pub fn lp_direction_check(
    a: &SparseRowMatrix,
    b: &SparseRowMatrix,
    p: f64,
    eps: f64,
    n_dirs: usize,
    rng: &RngStream,
) -> Result<DirectionReport> {
    if a.n_cols() != b.n_cols() {
        return Err(SketchError::contract("column counts differ"));
    }
    if !(p >= 1.0) {
        return Err(SketchError::param(format!("p must be >= 1, got {p}")));
    }
    let d = a.n_cols();
    let dirs = directions(d, n_dirs, rng);
    let a_scale = crate::matrix::entrywise_p_norm(a, p)?;
    let b_scale = crate::matrix::entrywise_p_norm(b, p)?;
    let mut worst_low = f64::INFINITY;
    let mut worst_high: f64 = 0.0;
    let mut null_directions = 0;
    let mut null_ok = true;
    for batch in dirs.chunks(DIRECTION_BATCH) {
        let mut x = DenseMatrix::zeros(d, batch.len());
        for (t, v) in batch.iter().enumerate() {
            for (j, &xj) in v.iter().enumerate() {
                x.set(j, t, xj);
            }
        }
        let na = col_p_norms(&a.mul_dense(&x), p);
        let nb = col_p_norms(&b.mul_dense(&x), p);
        for (t, v) in batch.iter().enumerate() {
            let xn = crate::matrix::vector_p_norm(v, 2.0);
            if na[t] <= NULL_TOL * a_scale * xn {
                null_directions += 1;
                if nb[t] > NULL_TOL * b_scale.max(a_scale) * xn {
                    null_ok = false;
                }
                continue;
            }
            let ratio = nb[t] / na[t];
            worst_low = worst_low.min(ratio);
            worst_high = worst_high.max(ratio);
        }
    }
    if worst_low == f64::INFINITY {
        worst_low = 1.0;
        worst_high = worst_high.max(1.0);
    }
    Ok(DirectionReport {
        directions_tested: dirs.len(),
        null_directions,
        worst_low,
        worst_high,
        p,
        eps_tested: eps,
        pass: null_ok && worst_low >= 1.0 - eps && worst_high <= 1.0 + eps,
    })
}

/// Binomial 3-sigma test: `failures / trials <= bound + 3 sqrt(bound (1 - bound) / trials)`.
pub fn tail_test(observed_failures: u64, trials: u64, bound: f64) -> bool {
    assert!(trials >= 1, "tail_test needs at least one trial");
    let rate = observed_failures as f64 / trials as f64;
    let b = bound.clamp(0.0, 1.0);
    rate <= b + 3.0 * (b * (1.0 - b) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix() -> SparseRowMatrix {
        SparseRowMatrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, -1.0],
            vec![3.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn identical_matrices_pass() {
        let a = sample_matrix();
        let r = loewner_check(&a, &a, 1e-6).unwrap();
        assert!(r.pass);
        assert!((r.min_ratio - 1.0).abs() < 1e-10 && (r.max_ratio - 1.0).abs() < 1e-10);
        let dr = lp_direction_check(&a, &a, 1.0, 1e-9, 50, &RngStream::new(0)).unwrap();
        assert!(dr.pass);
    }

    #[test]
    fn doubled_matrix_fails() {
        let a = sample_matrix();
        let r = loewner_check(&a, &a.scaled(2.0), 0.5).unwrap();
        assert!((r.min_ratio - 4.0).abs() < 1e-10 && (r.max_ratio - 4.0).abs() < 1e-10);
        assert!(!r.pass);
    }

    #[test]
    fn leak_detected() {
        // A spans only the first coordinate; B has mass on the second.
        let a = SparseRowMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = SparseRowMatrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        let r = loewner_check(&a, &b, 0.5).unwrap();
        assert!(r.null_space_leak > 0.4);
        assert!(!r.pass);
    }

    #[test]
    fn dropping_isolated_row_fails_direction_check() {
        let a = SparseRowMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = SparseRowMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let r = lp_direction_check(&a, &b, 1.0, 0.5, 10, &RngStream::new(1)).unwrap();
        assert!(!r.pass);
        assert!(r.worst_low < 0.5);
    }

    #[test]
    fn tail_test_examples() {
        assert!(tail_test(0, 10, 0.0));
        assert!(tail_test(1000, 100_000, 0.01));
        assert!(!tail_test(2000, 100_000, 0.01));
    }
}
