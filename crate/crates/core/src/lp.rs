//! ℓp row sampling.
//!
//! An ℓ2 sketch of an approximation of `A` yields a change of basis `C`
//! under which `A C` is well conditioned in ℓp. Row norms of `A C` are then
//! estimated with p-stable (or Gaussian, for `p >= 2`) sketches and used as
//! sampling probabilities. Repeating this against ever shorter
//! approximations shrinks the matrix to a size polynomial in `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::l2::{row_sample_l2_with_rng, PipelineConfig};
use crate::matrix::{gram_with_cap, pinv_sqrt_factor, DenseMatrix, SparseRowMatrix};
use crate::par::map_indices;
use crate::rng::{p_stable, p_stable_abs_median, RngStream};
use crate::sampling::{jl_width, sample, sketched_sq_norms, SampledMatrix, ScoreKind, ScoreVector};

/// Largest `eps` covered by the sampling guarantee.
pub const GUARANTEE_EPS: f64 = 1.0 / 7.0;

/// Tunables for the ℓp pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpConfig {
    pub p: f64,
    /// Intermediate norm of the two-level ℓ1 scheme.
    pub p_prime: f64,
    pub theta: f64,
    pub eps: f64,
    /// Estimation error factor; `None` means `d^(theta / (2p))`.
    pub r_est: Option<f64>,
    pub c_p: f64,
    pub n_star_const: f64,
    pub delta: f64,
    pub c_jl: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Settings for the internal ℓ2 sketches (its `eps` is overridden).
    pub l2: PipelineConfig,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            p: 1.0,
            p_prime: std::f64::consts::SQRT_2,
            theta: 0.25,
            eps: 0.5,
            r_est: None,
            c_p: 1.0,
            n_star_const: 2.0,
            delta: 0.01,
            c_jl: 4.0,
            max_iterations: 64,
            seed: 0,
            l2: PipelineConfig::default(),
        }
    }
}

impl LpConfig {
    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(SketchError::param(format!("p must be >= 1, got {}", self.p)));
        }
        if self.p >= 4.0 {
            return Err(SketchError::param(format!(
                "unsupported: p = {} >= 4 needs a multi-step extension that is not implemented",
                self.p
            )));
        }
        if !(self.p_prime > 1.0 && self.p_prime <= 2.0) {
            return Err(SketchError::param(format!("p_prime must lie in (1, 2], got {}", self.p_prime)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(SketchError::param(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.theta > 0.0) {
            return Err(SketchError::param(format!("theta must be positive, got {}", self.theta)));
        }
        if let Some(r) = self.r_est {
            if !(r > 1.0) {
                return Err(SketchError::param(format!("r_est must exceed 1, got {r}")));
            }
        }
        if !(self.c_p > 0.0 && self.n_star_const > 0.0 && self.c_jl > 0.0) {
            return Err(SketchError::param("c_p, n_star_const and c_jl must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SketchError::param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Whether `eps` lies outside the range the sampling guarantee covers.
    pub fn best_effort(&self) -> bool {
        self.eps > GUARANTEE_EPS
    }

    /// `d^(theta / (2p))` unless overridden.
    pub fn r_est_for(&self, d: usize) -> f64 {
        self.r_est.unwrap_or_else(|| (d as f64).powf(self.theta / (2.0 * self.p)))
    }

    /// Row-count threshold below which no further reduction is attempted.
    pub fn n_star(&self, d: usize) -> f64 {
        n_star(self.p, d, self.theta, self.n_star_const)
    }

    fn l2_cfg(&self) -> PipelineConfig {
        PipelineConfig {
            eps: 1.0 / 3.0,
            ..self.l2.clone()
        }
    }
}

/// `c d^(4/p + theta) ln^(2/p) d` for `p <= 2`,
/// `c d^(3p/2 - 1 + theta) ln^((3p-2)/(4-p)) d` for `2 < p < 4`.
pub fn n_star(p: f64, d: usize, theta: f64, c: f64) -> f64 {
    let df = d as f64;
    let ld = df.ln().max(f64::MIN_POSITIVE);
    if p <= 2.0 {
        c * df.powf(4.0 / p + theta) * ld.powf(2.0 / p)
    } else {
        c * df.powf(1.5 * p - 1.0 + theta) * ld.powf((3.0 * p - 2.0) / (4.0 - p))
    }
}

/// Loop threshold of the two-level ℓ1 scheme: `c d^(4/p' + 2p' - 2 + theta)`.
pub fn two_level_threshold(p_prime: f64, d: usize, theta: f64, c: f64) -> f64 {
    c * (d as f64).powf(4.0 / p_prime + 2.0 * p_prime - 2.0 + theta)
}

/// Change of basis `C` (`d x r`, `C C^T = (Ã^T Ã)^+`) with the constants
/// `(alpha, beta)` for which `A C` is claimed well conditioned in ℓp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisCertificate {
    pub c: DenseMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
}

impl BasisCertificate {
    /// `(2 alpha, 2 beta)`, valid for a matrix that `Ã` approximates within
    /// a factor 1/2 to 3/2 in ℓp.
    pub fn inflated(mut self) -> Self {
        self.alpha *= 2.0;
        self.beta *= 2.0;
        self
    }

    pub fn alpha_beta(&self) -> f64 {
        self.alpha * self.beta
    }

    pub fn rank(&self) -> usize {
        self.c.n_cols()
    }
}

/// `(alpha, beta)` for an `n x d` basis built from an ℓ2 sketch.
pub fn basis_constants(n: usize, d: usize, p: f64) -> (f64, f64) {
    let nd = (n as f64) * (d as f64);
    let s2 = std::f64::consts::SQRT_2;
    if p <= 2.0 {
        (s2 * nd.powf(1.0 / p - 0.5) * (d as f64).sqrt(), s2)
    } else {
        (s2 * (d as f64).sqrt(), s2 * nd.powf(0.5 - 1.0 / p))
    }
}

/// Basis from an ℓ2 sketch `a_approx` of an `n`-row matrix.
pub fn well_conditioned_basis_l2(
    a_approx: &SparseRowMatrix,
    n: usize,
    d: usize,
    p: f64,
    cfg: &PipelineConfig,
) -> Result<BasisCertificate> {
    if a_approx.n_cols() != d {
        return Err(SketchError::contract(format!(
            "sketch has {} columns, expected {d}",
            a_approx.n_cols()
        )));
    }
    let c = pinv_sqrt_factor(&gram_with_cap(a_approx, cfg.max_dim)?, cfg.rel_cutoff)?;
    if c.n_cols() == 0 {
        return Err(SketchError::DegenerateBasis("sketch Gram matrix has rank 0".into()));
    }
    let (alpha, beta) = basis_constants(n, d, p);
    Ok(BasisCertificate { c, alpha, beta, p })
}

fn check_estimator_inputs(m: &SparseRowMatrix, c: &DenseMatrix, r_est: f64, delta: f64) -> Result<()> {
    if m.n_cols() != c.n_rows() {
        return Err(SketchError::contract(format!(
            "matrix has {} columns but C has {} rows",
            m.n_cols(),
            c.n_rows()
        )));
    }
    if !(r_est > 1.0) {
        return Err(SketchError::param(format!("r_est must exceed 1, got {r_est}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SketchError::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn median(xs: &mut [f64]) -> f64 {
    let m = xs.len();
    let hi = m / 2;
    let (_, &mut upper, _) = xs.select_nth_unstable_by(hi, |a, b| a.total_cmp(b));
    if m % 2 == 1 {
        upper
    } else {
        let lower = xs[..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Sketch width `ceil(c_jl ln(1/delta) / ln r_est)`.
pub fn estimator_width(c_jl: f64, delta: f64, r_est: f64) -> usize {
    jl_width(c_jl, delta, r_est)
}

/// Estimates `||(M C)_i||_p^p` for `0 < p < 2` from the median of a p-stable
/// sketch: `(median_j |s_ij| / median|X|)^p` with `s_i = M_i C Pi^T`.
pub fn p_stable_estimates(
    m: &SparseRowMatrix,
    c: &DenseMatrix,
    p: f64,
    r_est: f64,
    delta: f64,
    c_jl: f64,
    rng: &RngStream,
) -> Result<ScoreVector> {
    if !(p > 0.0 && p < 2.0) {
        return Err(SketchError::param(format!(
            "p-stable estimates need 0 < p < 2, got {p}; use gaussian_estimates"
        )));
    }
    check_estimator_inputs(m, c, r_est, delta)?;
    let width = estimator_width(c_jl, delta, r_est);
    let r = c.n_cols();
    let mut g = rng.rng();
    let pi: Vec<f64> = (0..width * r).map(|_| p_stable(&mut g, p)).collect();
    let pi_t = DenseMatrix::from_row_major(width, r, pi)
        .map_err(|_| SketchError::Overflow("non-finite p-stable variate".into()))?
        .transpose();
    let sketch = m.mul_dense(&c.matmul(&pi_t));
    let norm = p_stable_abs_median(p);
    let values = map_indices(m.n_rows(), |i| {
        let mut row: Vec<f64> = sketch.row(i).iter().map(|v| v.abs()).collect();
        (median(&mut row) / norm).powf(p)
    });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SketchError::Overflow("p-stable estimate".into()));
    }
    ScoreVector::new(values, ScoreKind::StretchEstimate)
}

/// For `p >= 2`: Gaussian sketch of the ℓ2 row norms of `M C`, returned as
/// `(||Pi z||^2 / k)^(p/2)`. The ℓ2-to-ℓp distortion is accounted for by the
/// caller.
pub fn gaussian_estimates(
    m: &SparseRowMatrix,
    c: &DenseMatrix,
    p: f64,
    r_est: f64,
    delta: f64,
    c_jl: f64,
    rng: &RngStream,
) -> Result<ScoreVector> {
    if !(p >= 2.0) {
        return Err(SketchError::param(format!("gaussian estimates need p >= 2, got {p}")));
    }
    check_estimator_inputs(m, c, r_est, delta)?;
    let k = estimator_width(c_jl, delta, r_est);
    let values = sketched_sq_norms(m, c, k, rng)
        .into_iter()
        .map(|s| (s / k as f64).powf(p / 2.0))
        .collect();
    ScoreVector::new(values, ScoreKind::StretchEstimate)
}

/// Oversampling factor applied on top of `c_p (alpha beta)^p`; grows as
/// `eps` drops below the guarantee threshold.
pub fn eps_oversampling(eps: f64) -> f64 {
    (GUARANTEE_EPS / eps).powi(2).max(1.0)
}

/// Sampling probabilities `c_p R^2p (alpha beta)^p lambda_i / sum(lambda)`,
/// times the `eps` oversampling and, for `p > 2`, `d^(p/2 - 1)`.
pub fn lp_probabilities(lambda: &ScoreVector, cert: &BasisCertificate, r_est: f64, eps: f64, c_p: f64, d: usize) -> ScoreVector {
    let total = lambda.sum();
    let p = cert.p;
    let mut scale = c_p * r_est.powf(2.0 * p) * cert.alpha_beta().powf(p) * eps_oversampling(eps);
    if p > 2.0 {
        scale *= (d as f64).powf(p / 2.0 - 1.0);
    }
    let values = if total > 0.0 {
        lambda.values.iter().map(|l| scale * l / total).collect()
    } else {
        vec![0.0; lambda.len()]
    };
    ScoreVector {
        values,
        kind: ScoreKind::SamplingProbability,
    }
}

/// Estimates ℓp row norms of `A C` and samples `A` accordingly.
pub fn estimate_and_sample_p(
    a: &SparseRowMatrix,
    cert: &BasisCertificate,
    r_est: f64,
    eps: f64,
    cfg: &LpConfig,
    rng: &RngStream,
) -> Result<SampledMatrix> {
    let p = cert.p;
    let est_rng = rng.child(1);
    let lambda = if p < 2.0 {
        p_stable_estimates(a, &cert.c, p, r_est, cfg.delta, cfg.c_jl, &est_rng)?
    } else {
        gaussian_estimates(a, &cert.c, p, r_est, cfg.delta, cfg.c_jl, &est_rng)?
    };
    let probs = lp_probabilities(&lambda, cert, r_est, eps, cfg.c_p, a.n_cols());
    sample(a, &probs, p, &rng.child(2))
}

/// One reduction step: an ℓ2 sketch of `a_approx` gives the basis, whose
/// ℓp row-norm estimates on `a` drive the sample.
pub fn reduce_p(
    a: &SparseRowMatrix,
    a_approx: &SparseRowMatrix,
    eps: f64,
    cfg: &LpConfig,
    rng: &RngStream,
) -> Result<SampledMatrix> {
    let d = a.n_cols();
    if a_approx.n_cols() != d {
        return Err(SketchError::contract("approximation has a different column count"));
    }
    let short = row_sample_l2_with_rng(a_approx, &cfg.l2_cfg(), &rng.child(1))?;
    let cert = well_conditioned_basis_l2(&short.matrix, a_approx.n_rows(), d, cfg.p, &cfg.l2)?.inflated();
    estimate_and_sample_p(a, &cert, cfg.r_est_for(d), eps, cfg, &rng.child(2))
}

/// Result of an iterative ℓp sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpOutcome {
    pub sample: SampledMatrix,
    /// Row counts: the input, then every intermediate approximation.
    pub history: Vec<usize>,
    pub n_star: f64,
    pub early_return: bool,
    /// The loop stopped because an iteration failed to shrink the approximation.
    pub stalled: bool,
    pub best_effort: bool,
}

fn iterate<F>(
    a: &SparseRowMatrix,
    threshold: f64,
    cfg: &LpConfig,
    rng: &RngStream,
    mut step: F,
) -> Result<LpOutcome>
where
    F: FnMut(&SparseRowMatrix, &SparseRowMatrix, f64, &RngStream) -> Result<SampledMatrix>,
{
    let n = a.n_rows();
    let first = step(a, a, 0.2, &rng.child(0))?;
    let mut history = vec![n, first.n_rows()];
    let mut current = first.clone();
    let mut stalled = false;
    let mut iter = 0;
    while current.n_rows() as f64 > threshold {
        iter += 1;
        if iter > cfg.max_iterations {
            return Err(SketchError::IterationLimit {
                limit: cfg.max_iterations,
                history,
            });
        }
        let next = step(&first.matrix, &current.matrix, 0.2, &rng.child(iter as u64))?;
        if next.n_rows() >= current.n_rows() {
            stalled = true;
            break;
        }
        history.push(next.n_rows());
        current = first.compose(next);
    }
    let sample = step(a, &current.matrix, cfg.eps / 2.0, &rng.child(u64::MAX))?;
    Ok(LpOutcome {
        sample,
        history,
        n_star: threshold,
        early_return: false,
        stalled,
        best_effort: cfg.best_effort(),
    })
}

fn early(a: &SparseRowMatrix, threshold: f64, cfg: &LpConfig) -> LpOutcome {
    LpOutcome {
        sample: SampledMatrix::identity(a),
        history: vec![a.n_rows()],
        n_star: threshold,
        early_return: true,
        stalled: false,
        best_effort: cfg.best_effort(),
    }
}

/// Iterative ℓp row sampling. Returns `A` itself when it already has at
/// most `n*` rows.
pub fn row_sample_p(a: &SparseRowMatrix, cfg: &LpConfig, rng: &RngStream) -> Result<LpOutcome> {
    cfg.validate()?;
    let d = a.n_cols();
    if d < 2 {
        return Err(SketchError::param(format!("need at least 2 columns, got {d}")));
    }
    let threshold = cfg.n_star(d);
    if a.n_rows() as f64 <= threshold {
        return Ok(early(a, threshold, cfg));
    }
    iterate(a, threshold, cfg, rng, |src, approx, eps, r| reduce_p(src, approx, eps, cfg, r))
}

/// Rows grouped by nnz class `[2^j, 2^(j+1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnzBucket {
    pub class: u32,
    pub matrix: SparseRowMatrix,
    /// Original index of every bucket row.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnzBuckets {
    pub buckets: Vec<NnzBucket>,
    pub zero_rows: Vec<usize>,
}

pub fn bucket_by_nnz(a: &SparseRowMatrix) -> NnzBuckets {
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    let mut zero_rows = Vec::new();
    for i in 0..a.n_rows() {
        let nnz = a.row(i).nnz();
        if nnz == 0 {
            zero_rows.push(i);
        } else {
            by_class.entry(nnz.ilog2()).or_default().push(i);
        }
    }
    let buckets = by_class
        .into_iter()
        .map(|(class, rows)| NnzBucket {
            class,
            matrix: a.select_rows(&rows, &vec![1.0; rows.len()]),
            rows,
        })
        .collect();
    NnzBuckets { buckets, zero_rows }
}

/// Per-bucket summary of [`row_sample_p_full`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub class: u32,
    pub rows_in: usize,
    pub rows_out: usize,
    pub history: Vec<usize>,
    pub early_return: bool,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpFullOutcome {
    pub sample: SampledMatrix,
    pub buckets: Vec<BucketReport>,
    pub n_star: f64,
    pub dropped_zero_rows: usize,
}

/// Buckets rows by nnz, samples every bucket independently and concatenates
/// the results with provenance pointing at rows of `A`.
pub fn row_sample_p_full(a: &SparseRowMatrix, cfg: &LpConfig, rng: &RngStream) -> Result<LpFullOutcome> {
    cfg.validate()?;
    let b = bucket_by_nnz(a);
    let runs = map_indices(b.buckets.len(), |t| {
        let bucket = &b.buckets[t];
        row_sample_p(&bucket.matrix, cfg, &rng.child(bucket.class as u64))
    });
    let mut parts = Vec::with_capacity(runs.len());
    let mut reports = Vec::with_capacity(runs.len());
    for (bucket, run) in b.buckets.iter().zip(runs) {
        let run = run?;
        reports.push(BucketReport {
            class: bucket.class,
            rows_in: bucket.rows.len(),
            rows_out: run.sample.n_rows(),
            history: run.history,
            early_return: run.early_return,
            stalled: run.stalled,
        });
        parts.push(run.sample.remap_sources(&bucket.rows));
    }
    Ok(LpFullOutcome {
        sample: SampledMatrix::concat(parts, a.n_cols())?,
        buckets: reports,
        n_star: cfg.n_star(a.n_cols()),
        dropped_zero_rows: b.zero_rows.len(),
    })
}

/// `(alpha, beta)` for the two-level scheme: `U = M C` with `C` taken from an
/// ℓ2 sketch of an ℓ_{p'} sample (`n_tilde` rows) of the `n`-row ℓ1
/// approximation `M`.
pub fn two_level_constants(n: usize, n_tilde: usize, d: usize, p_prime: f64) -> (f64, f64) {
    let alpha = 1.5
        * std::f64::consts::SQRT_2
        * (n as f64).powf(1.0 - 1.0 / p_prime)
        * (n_tilde as f64).powf(1.0 / p_prime - 0.5)
        * d as f64;
    (alpha, 3.0)
}

/// One two-level round: sample `s` at `p = 1` with a basis derived from an
/// ℓ_{p'} sample of the approximation `m`.
pub fn two_level_round(
    s: &SparseRowMatrix,
    m: &SparseRowMatrix,
    eps: f64,
    cfg: &LpConfig,
    rng: &RngStream,
) -> Result<SampledMatrix> {
    let d = s.n_cols();
    let inner_cfg = LpConfig {
        p: cfg.p_prime,
        eps: 0.2,
        ..cfg.clone()
    };
    let tilde = row_sample_p(m, &inner_cfg, &rng.child(1))?.sample;
    let short = row_sample_l2_with_rng(&tilde.matrix, &cfg.l2_cfg(), &rng.child(2))?;
    let c = pinv_sqrt_factor(&gram_with_cap(&short.matrix, cfg.l2.max_dim)?, cfg.l2.rel_cutoff)?;
    if c.n_cols() == 0 {
        return Err(SketchError::DegenerateBasis("sketch Gram matrix has rank 0".into()));
    }
    let (alpha, beta) = two_level_constants(m.n_rows(), tilde.n_rows(), d, cfg.p_prime);
    let cert = BasisCertificate { c, alpha, beta, p: 1.0 };
    estimate_and_sample_p(s, &cert, cfg.r_est_for(d), eps, cfg, &rng.child(3))
}

/// Two-level ℓ1 row sampling: the loop of [`row_sample_p`] with every basis
/// built from an intermediate ℓ_{p'} sample.
pub fn two_level_l1(a: &SparseRowMatrix, cfg: &LpConfig, rng: &RngStream) -> Result<LpOutcome> {
    cfg.validate()?;
    if cfg.p != 1.0 {
        return Err(SketchError::param(format!("two-level sampling needs p = 1, got {}", cfg.p)));
    }
    let d = a.n_cols();
    if d < 2 {
        return Err(SketchError::param(format!("need at least 2 columns, got {d}")));
    }
    if a.n_rows() as f64 <= cfg.n_star(d) {
        return Ok(early(a, cfg.n_star(d), cfg));
    }
    let threshold = two_level_threshold(cfg.p_prime, d, cfg.theta, cfg.n_star_const);
    iterate(a, threshold, cfg, rng, |src, approx, eps, r| two_level_round(src, approx, eps, cfg, r))
}
