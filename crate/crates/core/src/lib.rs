//! Row sampling for tall matrices.
//!
//! Given an `n x d` matrix `A` with `n` much larger than `d`, the pipelines in
//! this crate return a matrix `B` made of a few rescaled rows of `A` such that
//! `||Bx||_p` is within `1 ± eps` of `||Ax||_p` for every `x`.
//!
//! * [`l2::row_sample_l2`] handles `p = 2` via Gaussian block reduction and
//!   stretch estimates.
//! * [`lp::row_sample_p`] and [`lp::two_level_l1`] handle `1 <= p < 4` via
//!   well-conditioned bases and p-stable sketches.
//! * [`verify`] holds the checkers used by the tests and the CLI.
//!
//! All randomness flows from explicit [`RngStream`]s. With the default
//! `parallel` feature the row-parallel kernels run on rayon; results are
//! identical with the feature disabled.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod l2;
pub mod lp;
pub mod matrix;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod verify;

pub use error::{Result, SketchError};
pub use l2::{row_sample_l2, solve_l2_regression, PipelineConfig};
pub use lp::{row_sample_p, row_sample_p_full, two_level_l1, BasisCertificate, LpConfig};
pub use matrix::{DenseMatrix, SparseRowMatrix, SymmetricEigen};
pub use rng::RngStream;
pub use sampling::{SampledMatrix, ScoreKind, ScoreVector};
pub use verify::{DirectionReport, SpectralReport};
