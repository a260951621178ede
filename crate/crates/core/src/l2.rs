//! Iterative ℓ2 row sampling by Gaussian block reduction.
//!
//! The input is repeatedly shrunk by replacing every block of `R` consecutive
//! rows with `k` random Gaussian combinations of them. Walking back up the
//! ladder, a sketch of each shorter level serves as the reference for stretch
//! estimates on the level above, and those estimates drive the sampling that
//! produces the next reference. The final sketch consists of rescaled rows of
//! the input.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::matrix::{gram_with_cap, sym_eigen, DenseMatrix, SparseRowMatrix, DEFAULT_MAX_DIM, DEFAULT_REL_CUTOFF};
use crate::par::map_chunks;
use crate::rng::{Gaussian, RngStream};
use crate::sampling::{
    approx_str_kernel, approx_str_with, jl_width, oversample_probs, reference_factor, sample, SampledMatrix, ScoreKind,
    ScoreVector, StretchParams,
};

const BLOCKS_PER_CHUNK: usize = 64;

// Stream labels; fixed so that every phase draws from its own child stream.
const LABEL_LADDER: u64 = 1;
const LABEL_ESTIMATE: u64 = 2;
const LABEL_SAMPLE: u64 = 3;
const LABEL_FINAL_ESTIMATE: u64 = 4;
const LABEL_FINAL_SAMPLE: u64 = 5;

/// Tunables for the ℓ2 pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Block size `R`; `None` picks `max(8, round(d^0.25))`.
    pub r: Option<usize>,
    /// Rows per reduced block; `None` picks `max(4, ceil(4 / theta))` with
    /// `theta = ln R / ln d`, capped at `R / 2` so every level shrinks.
    pub k: Option<usize>,
    pub eps: f64,
    pub delta: f64,
    pub c_jl: f64,
    pub c_sample: f64,
    pub c_scale: f64,
    pub rel_cutoff: f64,
    pub max_dim: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            r: None,
            k: None,
            eps: 0.5,
            delta: 0.01,
            c_jl: 4.0,
            c_sample: 0.4,
            c_scale: 1.0,
            rel_cutoff: DEFAULT_REL_CUTOFF,
            max_dim: DEFAULT_MAX_DIM,
            seed: 0,
        }
    }
}

/// Default exponent for `R = d^theta`.
pub const DEFAULT_THETA: f64 = 0.25;

impl PipelineConfig {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rk(mut self, r: usize, k: usize) -> Self {
        self.r = Some(r);
        self.k = Some(k);
        self
    }

    /// Resolved `(R, k)` for a `d`-column input.
    pub fn block_params(&self, d: usize) -> (usize, usize) {
        let r = self
            .r
            .unwrap_or_else(|| ((d as f64).powf(DEFAULT_THETA).round() as usize).max(8));
        let k = self.k.unwrap_or_else(|| {
            let theta = if d >= 2 { (r as f64).ln() / (d as f64).ln() } else { 1.0 };
            ((4.0 / theta).ceil() as usize).max(4).min((r / 2).max(1))
        });
        (r, k)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(SketchError::param(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SketchError::param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        for (name, v) in [("c_jl", self.c_jl), ("c_sample", self.c_sample), ("c_scale", self.c_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SketchError::param(format!("{name} must be positive, got {v}")));
            }
        }
        let (r, k) = self.block_params(d);
        if r < 8 {
            return Err(SketchError::param(format!("reduction rate R must be >= 8, got {r}")));
        }
        if k == 0 {
            return Err(SketchError::param("k must be >= 1"));
        }
        Ok(())
    }
}

/// Output of [`reduce_rk`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub matrix: SparseRowMatrix,
    /// Block index of every input row.
    pub block_map: Vec<usize>,
}

/// The `k x R` Gaussian applied to block `b` by [`reduce_rk`].
pub fn block_gaussian(rng: &RngStream, b: usize, k: usize, r: usize) -> DenseMatrix {
    let mut u = vec![0.0; k * r];
    Gaussian::new(rng.child(b as u64).rng()).fill(&mut u);
    DenseMatrix::from_row_major(k, r, u).expect("finite gaussians")
}

/// Applies an independent `k x R` Gaussian to every block of `R` consecutive
/// rows. A short last block behaves as if padded with zero rows, so the output
/// has `ceil(n / R) * k` rows. Block `b` draws from `rng.child(b)`.
pub fn reduce_rk(a: &SparseRowMatrix, r: usize, k: usize, rng: &RngStream) -> Reduction {
    assert!(r >= 1 && k >= 1, "reduce_rk needs R >= 1 and k >= 1");
    let n = a.n_rows();
    let d = a.n_cols();
    let blocks = n.div_ceil(r);
    let parts = map_chunks(blocks, BLOCKS_PER_CHUNK, |_, range| {
        let mut out = SparseRowMatrix::with_capacity(d, range.len() * k, range.len() * k * d);
        let mut acc = vec![0.0; d];
        for b in range {
            let u = block_gaussian(rng, b, k, r);
            let u = u.as_slice();
            let rows = b * r..((b + 1) * r).min(n);
            for j in 0..k {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for (t, i) in rows.clone().enumerate() {
                    let w = u[j * r + t];
                    for (c, v) in a.row(i).iter() {
                        acc[c] += w * v;
                    }
                }
                out.push_dense_row(&acc);
            }
        }
        out
    });
    let refs: Vec<&SparseRowMatrix> = parts.iter().collect();
    let matrix = if refs.is_empty() {
        SparseRowMatrix::empty(d)
    } else {
        SparseRowMatrix::vstack(&refs).expect("equal column counts")
    };
    Reduction {
        matrix,
        block_map: (0..n).map(|i| i / r).collect(),
    }
}

/// The sequence `A(0), ..., A(L)` of reduced matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionLadder {
    pub levels: Vec<SparseRowMatrix>,
    pub r: usize,
    pub k: usize,
}

impl ReductionLadder {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|m| m.n_rows()).collect()
    }
}

/// `L = max(0, ceil(log_R(n / d)))`.
pub fn ladder_depth(n: usize, d: usize, r: usize) -> usize {
    if n <= d || d == 0 {
        return 0;
    }
    let x = (n as f64 / d as f64).ln() / (r as f64).ln();
    // Guard against ceil(2.0000000001) for exact powers.
    (x - 1e-12).ceil().max(0.0) as usize
}

pub fn build_ladder(a: &SparseRowMatrix, r: usize, k: usize, depth: usize, rng: &RngStream) -> ReductionLadder {
    let mut levels = vec![a.clone()];
    for l in 1..=depth {
        let next = reduce_rk(&levels[l - 1], r, k, &rng.child(l as u64)).matrix;
        levels.push(next);
    }
    ReductionLadder { levels, r, k }
}

/// Recovery step for one level: estimates stretches of `A(l)` against
/// `sqrt(2/3) B(l)`, multiplies by `c_scale R^3 ln d`, and assigns each row
/// of block `b` of `A(l-1)` the ℓ1 mass of the estimates on block `b` of
/// `A(l)`. Zero rows of `A(l-1)` get 0.
pub fn recovery_scores(
    a_prev: &SparseRowMatrix,
    a_l: &SparseRowMatrix,
    b_l: &SparseRowMatrix,
    r: usize,
    k: usize,
    cfg: &PipelineConfig,
    rng: &RngStream,
) -> Result<ScoreVector> {
    let d = a_prev.n_cols();
    let params = StretchParams {
        kappa: 3.0,
        rho: r as f64,
        delta: cfg.delta,
        c_jl: cfg.c_jl,
        rel_cutoff: cfg.rel_cutoff,
        max_dim: cfg.max_dim,
    };
    let est = approx_str_with(a_l, &b_l.scaled((2.0f64 / 3.0).sqrt()), &params, rng)?;
    let factor = cfg.c_scale * (r as f64).powi(3) * (d as f64).ln();
    let blocks = a_prev.n_rows().div_ceil(r);
    let block_mass: Vec<f64> = (0..blocks)
        .map(|b| est.values[b * k..((b + 1) * k).min(est.len())].iter().sum::<f64>() * factor)
        .collect();
    let values = (0..a_prev.n_rows())
        .map(|i| if a_prev.is_row_empty(i) { 0.0 } else { block_mass[i / r] })
        .collect();
    ScoreVector::new(values, ScoreKind::StretchEstimate)
}

/// Diagnostics of one ℓ2 pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Trace {
    pub r: usize,
    pub k: usize,
    pub depth: usize,
    /// Rows of `A(0..=L)`.
    pub ladder_rows: Vec<usize>,
    /// Rows of `B(0..=L)`.
    pub reference_rows: Vec<usize>,
    pub output_rows: usize,
}

/// ℓ2 row sampling seeded from `cfg.seed`.
pub fn row_sample_l2(a: &SparseRowMatrix, cfg: &PipelineConfig) -> Result<SampledMatrix> {
    row_sample_l2_traced(a, cfg, &RngStream::new(cfg.seed)).map(|(s, _)| s)
}

/// ℓ2 row sampling drawing from an explicit stream (`cfg.seed` is ignored).
pub fn row_sample_l2_with_rng(a: &SparseRowMatrix, cfg: &PipelineConfig, rng: &RngStream) -> Result<SampledMatrix> {
    row_sample_l2_traced(a, cfg, rng).map(|(s, _)| s)
}

pub fn row_sample_l2_traced(
    a: &SparseRowMatrix,
    cfg: &PipelineConfig,
    rng: &RngStream,
) -> Result<(SampledMatrix, L2Trace)> {
    let d = a.n_cols();
    if d < 2 {
        return Err(SketchError::param(format!("need at least 2 columns, got {d}")));
    }
    cfg.validate(d)?;
    let (r, k) = cfg.block_params(d);
    let n = a.n_rows();
    if n == 0 {
        let trace = L2Trace {
            r,
            k,
            depth: 0,
            ladder_rows: vec![0],
            reference_rows: vec![0],
            output_rows: 0,
        };
        return Ok((SampledMatrix::identity(a), trace));
    }

    let depth = ladder_depth(n, d, r);
    let ladder = build_ladder(a, r, k, depth, &rng.child(LABEL_LADDER));

    // B(L) = A(L); walking down, B(l-1) is a sample of A(l-1).
    let mut b = SampledMatrix::identity(&ladder.levels[depth]);
    let mut reference_rows = vec![b.n_rows()];
    for l in (1..=depth).rev() {
        let scores = recovery_scores(
            &ladder.levels[l - 1],
            &ladder.levels[l],
            &b.matrix,
            r,
            k,
            cfg,
            &rng.child2(LABEL_ESTIMATE, l as u64),
        )?;
        let probs = oversample_probs(&scores, 0.5, d, cfg.c_sample);
        b = sample(&ladder.levels[l - 1], &probs, 2.0, &rng.child2(LABEL_SAMPLE, l as u64))?;
        reference_rows.push(b.n_rows());
    }
    reference_rows.reverse();
    let b0 = b;

    // Final pass: estimates against B(0) itself with rho = 2.
    let c = reference_factor(&b0.matrix, cfg.rel_cutoff, cfg.max_dim)?;
    let kk = jl_width(cfg.c_jl, cfg.delta, 2.0);
    let est = approx_str_kernel(&b0.matrix, &c, 2.0, kk, &rng.child(LABEL_FINAL_ESTIMATE));
    let probs = oversample_probs(&est, cfg.eps / 3.0, d, cfg.c_sample);
    let out = sample(&b0.matrix, &probs, 2.0, &rng.child(LABEL_FINAL_SAMPLE))?;
    let out = b0.compose(out);

    let trace = L2Trace {
        r,
        k,
        depth,
        ladder_rows: ladder.row_counts(),
        reference_rows,
        output_rows: out.n_rows(),
    };
    Ok((out, trace))
}

/// Result of a sketched least-squares solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub x: Vec<f64>,
    /// True when the sketched Gram matrix was rank deficient and the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
    pub sketch_rows: usize,
}

/// Least squares on an ℓ2 sketch of `[A, b]`.
pub fn solve_l2_regression(a: &SparseRowMatrix, b: &[f64], cfg: &PipelineConfig) -> Result<RegressionSolution> {
    let ab = a.append_column(b)?;
    let sketch = row_sample_l2(&ab, cfg)?;
    let (sa, sb) = sketch.matrix.split_last_column();
    let (x, rank_deficient) = min_norm_least_squares(&sa, &sb, cfg.rel_cutoff, cfg.max_dim)?;
    Ok(RegressionSolution {
        x,
        rank_deficient,
        sketch_rows: sketch.n_rows(),
    })
}

/// Minimum-norm solution of `min ||Ax - b||` via the pseudoinverse of `A^T A`.
pub fn min_norm_least_squares(
    a: &SparseRowMatrix,
    b: &[f64],
    rel_cutoff: f64,
    max_dim: usize,
) -> Result<(Vec<f64>, bool)> {
    let d = a.n_cols();
    let g = gram_with_cap(a, max_dim)?;
    let eig = sym_eigen(&g, rel_cutoff)?;
    let rhs = a.tr_mul_vec(b);
    let v: &DenseMatrix = &eig.eigenvectors;
    let proj = v.tr_mul_vec(&rhs);
    let mut coef = vec![0.0; d];
    for j in 0..eig.rank {
        coef[j] = proj[j] / eig.eigenvalues[j];
    }
    Ok((v.mul_vec(&coef), eig.rank < d))
}

/// `||Ax - b||_2`.
pub fn residual_norm(a: &SparseRowMatrix, x: &[f64], b: &[f64]) -> f64 {
    a.mul_vec(x).iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}
