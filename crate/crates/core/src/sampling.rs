//! Row sampling, exact leverage scores, generalized stretch and the
//! Gaussian-sketch stretch estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::matrix::{gram_with_cap, pinv_sqrt_factor, DenseMatrix, SparseRowMatrix, DEFAULT_MAX_DIM, DEFAULT_REL_CUTOFF};
use crate::par::{map_chunks, ROW_CHUNK};
use crate::rng::{Gaussian, RngStream};

/// What a [`ScoreVector`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    ExactLeverage,
    StretchEstimate,
    SamplingProbability,
}

/// Nonnegative per-row importances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(SketchError::contract(format!("score {i} is {v}; scores must be finite and >= 0")));
        }
        Ok(ScoreVector { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Expected number of rows kept by [`sample`].
    pub fn expected_rows(&self) -> f64 {
        self.values.iter().map(|p| p.min(1.0)).sum()
    }
}

/// Where an output row came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: usize,
    pub scale: f64,
}

/// A sketch whose rows are positive multiples of rows of some origin matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMatrix {
    pub matrix: SparseRowMatrix,
    pub provenance: Vec<Provenance>,
    /// Set when the sketch is degenerate, e.g. all probabilities were zero.
    pub warning: Option<String>,
}

impl SampledMatrix {
    /// `A` itself, every row kept with scale 1.
    pub fn identity(a: &SparseRowMatrix) -> Self {
        SampledMatrix {
            matrix: a.clone(),
            provenance: (0..a.n_rows()).map(|i| Provenance { source: i, scale: 1.0 }).collect(),
            warning: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Re-expresses `outer`, a sample of `self.matrix`, as a sample of this
    /// sketch's origin. Scales multiply.
    pub fn compose(&self, outer: SampledMatrix) -> SampledMatrix {
        let provenance = outer
            .provenance
            .iter()
            .map(|p| {
                let inner = self.provenance[p.source];
                Provenance {
                    source: inner.source,
                    scale: inner.scale * p.scale,
                }
            })
            .collect();
        SampledMatrix {
            matrix: outer.matrix,
            provenance,
            warning: outer.warning.or_else(|| self.warning.clone()),
        }
    }

    /// Maps source indices through `map` (e.g. bucket-local to global).
    pub fn remap_sources(mut self, map: &[usize]) -> Self {
        for p in &mut self.provenance {
            p.source = map[p.source];
        }
        self
    }

    /// Concatenates sketches of the same origin.
    pub fn concat(parts: Vec<SampledMatrix>, n_cols: usize) -> Result<Self> {
        let mats: Vec<&SparseRowMatrix> = parts.iter().map(|s| &s.matrix).collect();
        let matrix = if mats.is_empty() {
            SparseRowMatrix::empty(n_cols)
        } else {
            SparseRowMatrix::vstack(&mats)?
        };
        let warning = parts.iter().find_map(|s| s.warning.clone());
        let provenance = parts.into_iter().flat_map(|s| s.provenance).collect();
        Ok(SampledMatrix { matrix, provenance, warning })
    }
}

/// Keeps row `i` independently with probability `q_i = min(1, probs_i)` and
/// rescales kept rows by `q_i^{-1/norm_p}`, which preserves the expectation
/// of `|<a_i, x>|^norm_p`. Uniforms are drawn per fixed row chunk from child
/// streams, so the result does not depend on the thread count.
pub fn sample(a: &SparseRowMatrix, probs: &ScoreVector, norm_p: f64, rng: &RngStream) -> Result<SampledMatrix> {
    if probs.len() != a.n_rows() {
        return Err(SketchError::contract(format!(
            "probability vector has length {}, matrix has {} rows",
            probs.len(),
            a.n_rows()
        )));
    }
    if !(norm_p >= 1.0) {
        return Err(SketchError::param(format!("norm_p must be >= 1, got {norm_p}")));
    }
    if let Some(i) = probs.values.iter().position(|p| !(*p >= 0.0)) {
        return Err(SketchError::contract(format!("negative probability at row {i}")));
    }
    if a.n_rows() > 0 && probs.values.iter().all(|&p| p == 0.0) {
        return Ok(SampledMatrix {
            matrix: SparseRowMatrix::empty(a.n_cols()),
            provenance: Vec::new(),
            warning: Some("all sampling probabilities are zero".into()),
        });
    }
    let kept = map_chunks(a.n_rows(), ROW_CHUNK, |c, range| {
        let mut r = rng.child(c as u64).rng();
        let mut out = Vec::new();
        for i in range {
            let q = probs.values[i].min(1.0);
            let u: f64 = r.random();
            if q > 0.0 && u < q {
                out.push(Provenance {
                    source: i,
                    scale: if q >= 1.0 { 1.0 } else { q.powf(-1.0 / norm_p) },
                });
            }
        }
        out
    })
    .concat();
    let idx: Vec<usize> = kept.iter().map(|p| p.source).collect();
    let scales: Vec<f64> = kept.iter().map(|p| p.scale).collect();
    Ok(SampledMatrix {
        matrix: a.select_rows(&idx, &scales),
        provenance: kept,
        warning: None,
    })
}

/// Multiplies scores by `c_sample * ln(d) / eps^2`.
pub fn oversample_probs(scores: &ScoreVector, eps: f64, d: usize, c_sample: f64) -> ScoreVector {
    let f = c_sample * (d as f64).ln() / (eps * eps);
    ScoreVector {
        values: scores.values.iter().map(|s| s * f).collect(),
        kind: ScoreKind::SamplingProbability,
    }
}

/// Same as [`oversample_probs`] with a real-valued `d`.
pub fn oversample_probs_real(scores: &ScoreVector, eps: f64, d: f64, c_sample: f64) -> ScoreVector {
    let f = c_sample * d.ln() / (eps * eps);
    ScoreVector {
        values: scores.values.iter().map(|s| s * f).collect(),
        kind: ScoreKind::SamplingProbability,
    }
}

fn squared_row_norms(u: &DenseMatrix) -> Vec<f64> {
    (0..u.n_rows()).map(|i| u.row(i).iter().map(|v| v * v).sum()).collect()
}

/// `C` with `C C^T = (B^T B)^+`.
pub fn reference_factor(b: &SparseRowMatrix, rel_cutoff: f64, max_dim: usize) -> Result<DenseMatrix> {
    pinv_sqrt_factor(&gram_with_cap(b, max_dim)?, rel_cutoff)
}

/// Exact `a_i (B^T B)^+ a_i^T` for every row of `A`, i.e. `||C^T a_i^T||^2`.
pub fn stretch(a: &SparseRowMatrix, b: &SparseRowMatrix) -> Result<ScoreVector> {
    stretch_with(a, b, DEFAULT_REL_CUTOFF, DEFAULT_MAX_DIM)
}

pub fn stretch_with(a: &SparseRowMatrix, b: &SparseRowMatrix, rel_cutoff: f64, max_dim: usize) -> Result<ScoreVector> {
    if a.n_cols() != b.n_cols() {
        return Err(SketchError::contract(format!(
            "column counts differ: {} vs {}",
            a.n_cols(),
            b.n_cols()
        )));
    }
    let c = reference_factor(b, rel_cutoff, max_dim)?;
    Ok(ScoreVector {
        values: squared_row_norms(&a.mul_dense(&c)),
        kind: ScoreKind::StretchEstimate,
    })
}

/// Statistical leverage scores `a_i (A^T A)^+ a_i^T`.
pub fn exact_leverage_scores(a: &SparseRowMatrix) -> Result<ScoreVector> {
    let mut s = stretch(a, a)?;
    s.kind = ScoreKind::ExactLeverage;
    Ok(s)
}

/// Sketch width `ceil(c_jl * ln(1/delta) / ln(rho))`, at least 1.
pub fn jl_width(c_jl: f64, delta: f64, rho: f64) -> usize {
    ((c_jl * (1.0 / delta).ln() / rho.ln()).ceil() as usize).max(1)
}

/// Draws a `k x r` Gaussian `Pi` from `rng` and returns `C Pi^T` (`d x k`).
pub(crate) fn gaussian_projector(c: &DenseMatrix, k: usize, rng: &RngStream) -> DenseMatrix {
    let r = c.n_cols();
    let mut pi = vec![0.0; k * r];
    Gaussian::new(rng.rng()).fill(&mut pi);
    let pi_t = DenseMatrix::from_row_major(k, r, pi).expect("finite gaussians").transpose();
    c.matmul(&pi_t)
}

/// `||Pi C^T a_i^T||^2` for every row, with a fresh `k x r` Gaussian `Pi`.
/// Computed as `A (C Pi^T)` so the `d x k` product is formed once.
pub fn sketched_sq_norms(a: &SparseRowMatrix, c: &DenseMatrix, k: usize, rng: &RngStream) -> Vec<f64> {
    squared_row_norms(&a.mul_dense(&gaussian_projector(c, k, rng)))
}

/// Estimator kernel: `(rho / k) ||Pi C^T a_i^T||^2`. Accepts any `rho > 1`.
pub fn approx_str_kernel(a: &SparseRowMatrix, c: &DenseMatrix, rho: f64, k: usize, rng: &RngStream) -> ScoreVector {
    let f = rho / k as f64;
    ScoreVector {
        values: sketched_sq_norms(a, c, k, rng).into_iter().map(|v| v * f).collect(),
        kind: ScoreKind::StretchEstimate,
    }
}

/// Tunables for [`approx_str_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchParams {
    pub kappa: f64,
    pub rho: f64,
    pub delta: f64,
    pub c_jl: f64,
    pub rel_cutoff: f64,
    pub max_dim: usize,
}

impl StretchParams {
    pub fn new(kappa: f64, rho: f64, delta: f64) -> Self {
        StretchParams {
            kappa,
            rho,
            delta,
            c_jl: 4.0,
            rel_cutoff: DEFAULT_REL_CUTOFF,
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn width(&self) -> usize {
        jl_width(self.c_jl, self.delta, self.rho)
    }
}

/// Upper estimates of the stretch of each row of `A` against `B`, assuming
/// `(1/kappa) A^T A <= B^T B <= A^T A` (not checked here).
pub fn approx_str(
    a: &SparseRowMatrix,
    b: &SparseRowMatrix,
    kappa: f64,
    rho: f64,
    delta: f64,
    rng: &RngStream,
) -> Result<ScoreVector> {
    approx_str_with(a, b, &StretchParams::new(kappa, rho, delta), rng)
}

pub fn approx_str_with(a: &SparseRowMatrix, b: &SparseRowMatrix, params: &StretchParams, rng: &RngStream) -> Result<ScoreVector> {
    let e2 = std::f64::consts::E * std::f64::consts::E;
    if !(params.rho >= e2 * (1.0 - 1e-12)) {
        return Err(SketchError::param(format!("rho must be >= e^2, got {}", params.rho)));
    }
    if !(params.kappa >= 1.0) {
        return Err(SketchError::param(format!("kappa must be >= 1, got {}", params.kappa)));
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(SketchError::param(format!("delta must lie in (0, 1), got {}", params.delta)));
    }
    if a.n_cols() != b.n_cols() {
        return Err(SketchError::contract(format!(
            "column counts differ: {} vs {}",
            a.n_cols(),
            b.n_cols()
        )));
    }
    let c = reference_factor(b, params.rel_cutoff, params.max_dim)?;
    Ok(approx_str_kernel(a, &c, params.rho, params.width(), rng))
}

/// True iff every row of `s` equals its recorded scale times the source row of `a`.
pub fn verify_provenance(a: &SparseRowMatrix, s: &SampledMatrix) -> bool {
    if s.provenance.len() != s.matrix.n_rows() || s.matrix.n_cols() != a.n_cols() {
        return false;
    }
    for (t, p) in s.provenance.iter().enumerate() {
        if p.source >= a.n_rows() || !(p.scale > 0.0) || !p.scale.is_finite() {
            return false;
        }
        let src = a.row(p.source);
        let out = s.matrix.row(t);
        if src.cols != out.cols {
            return false;
        }
        for (&x, &y) in src.vals.iter().zip(out.vals) {
            let want = x * p.scale;
            if (want - y).abs() > 1e-12 * want.abs().max(y.abs()) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> SparseRowMatrix {
        SparseRowMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn probs(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec(), ScoreKind::SamplingProbability).unwrap()
    }

    #[test]
    fn sample_certain_rows_unchanged() {
        let a = m(&[&[1.0, 2.0], &[3.0, 0.0], &[0.0, 4.0]]);
        let s = sample(&a, &probs(&[1.0, 2.5, 7.0]), 2.0, &RngStream::new(1)).unwrap();
        assert_eq!(s.matrix, a);
        assert!(s.provenance.iter().all(|p| p.scale == 1.0));
        assert!(verify_provenance(&a, &s));
    }

    #[test]
    fn sample_zero_probs_is_empty_with_warning() {
        let a = m(&[&[1.0], &[2.0]]);
        let s = sample(&a, &probs(&[0.0, 0.0]), 2.0, &RngStream::new(1)).unwrap();
        assert_eq!(s.n_rows(), 0);
        assert!(s.warning.is_some());
    }

    #[test]
    fn sample_mean_row_count() {
        let a = m(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let p = probs(&[1.0, 0.5, 0.5, 1.0]);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|t| sample(&a, &p, 2.0, &RngStream::new(t)).unwrap().n_rows())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 3.0).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn sample_rescales_by_inverse_root() {
        let a = SparseRowMatrix::from_rows(&vec![vec![1.0]; 64]).unwrap();
        let s = sample(&a, &probs(&[0.25; 64]), 2.0, &RngStream::new(4)).unwrap();
        assert!(s.provenance.iter().all(|p| (p.scale - 2.0).abs() < 1e-15));
        let s1 = sample(&a, &probs(&[0.25; 64]), 1.0, &RngStream::new(4)).unwrap();
        assert!(s1.provenance.iter().all(|p| (p.scale - 4.0).abs() < 1e-15));
    }

    #[test]
    fn sample_rejects_negative() {
        let a = m(&[&[1.0]]);
        let p = ScoreVector {
            values: vec![-0.5],
            kind: ScoreKind::SamplingProbability,
        };
        assert!(matches!(sample(&a, &p, 2.0, &RngStream::new(0)), Err(SketchError::Contract(_))));
    }

    #[test]
    fn oversample_examples() {
        let e = std::f64::consts::E;
        let s = ScoreVector::new(vec![1.0, 1.0], ScoreKind::StretchEstimate).unwrap();
        let o = oversample_probs_real(&s, 1.0, e * e, 1.0);
        assert!(o.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
        let s = ScoreVector::new(vec![0.5], ScoreKind::StretchEstimate).unwrap();
        let o = oversample_probs_real(&s, 0.5, e, 1.0);
        assert!((o.values[0] - 2.0).abs() < 1e-14);
        let z = ScoreVector::new(vec![0.0; 3], ScoreKind::StretchEstimate).unwrap();
        assert!(oversample_probs(&z, 0.3, 10, 8.0).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leverage_examples() {
        let t = exact_leverage_scores(&SparseRowMatrix::identity(3)).unwrap();
        assert!(t.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let t = exact_leverage_scores(&m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert!(t.values.iter().all(|v| (v - 2.0 / 3.0).abs() < 1e-12), "{:?}", t.values);

        let t = exact_leverage_scores(&m(&[&[1.0, 0.0], &[2.0, 0.0]])).unwrap();
        assert!((t.values[0] - 0.2).abs() < 1e-12 && (t.values[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn stretch_reference_scaling() {
        let a = m(&[&[1.0, 2.0], &[0.0, 1.0], &[3.0, -1.0], &[0.0, 0.0]]);
        let lev = exact_leverage_scores(&a).unwrap();
        let half = a.scaled(1.0 / 2f64.sqrt());
        let s = stretch(&a, &half).unwrap();
        for (x, y) in lev.values.iter().zip(&s.values) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        assert_eq!(s.values[3], 0.0);
    }

    #[test]
    fn approx_str_rejects_small_rho() {
        let a = SparseRowMatrix::identity(2);
        assert!(matches!(
            approx_str(&a, &a, 1.0, 2.0, 0.1, &RngStream::new(0)),
            Err(SketchError::Parameter(_))
        ));
    }

    #[test]
    fn approx_str_zero_row_and_mean() {
        let e2 = std::f64::consts::E.powi(2);
        let mut a = SparseRowMatrix::identity(3);
        a.push_dense_row(&[0.0, 0.0, 0.0]);
        let b = SparseRowMatrix::identity(3);
        let trials = 4000;
        let mut mean = [0.0; 3];
        for t in 0..trials {
            let s = approx_str(&a, &b, 1.0, e2, 0.1, &RngStream::new(t)).unwrap();
            assert_eq!(s.values[3], 0.0);
            for (m, v) in mean.iter_mut().zip(&s.values) {
                *m += v / trials as f64;
            }
        }
        for v in mean {
            assert!((v - e2).abs() < 0.05 * e2, "{v}");
        }
    }

    #[test]
    fn provenance_negative_control() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut s = SampledMatrix::identity(&a);
        assert!(verify_provenance(&a, &s));
        s.provenance[1].scale = 1.5;
        assert!(!verify_provenance(&a, &s));
    }

    #[test]
    fn compose_multiplies_scales() {
        let a = m(&[&[1.0], &[2.0], &[3.0]]);
        let inner = SampledMatrix {
            matrix: a.select_rows(&[2, 0], &[2.0, 3.0]),
            provenance: vec![Provenance { source: 2, scale: 2.0 }, Provenance { source: 0, scale: 3.0 }],
            warning: None,
        };
        let outer = SampledMatrix {
            matrix: inner.matrix.select_rows(&[1], &[5.0]),
            provenance: vec![Provenance { source: 1, scale: 5.0 }],
            warning: None,
        };
        let c = inner.compose(outer);
        assert_eq!(c.provenance, vec![Provenance { source: 0, scale: 15.0 }]);
        assert!(verify_provenance(&a, &c));
    }
}
