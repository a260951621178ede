use proptest::prelude::*;
use sketchrows::matrix::SparseRowMatrix;
use sketchrows::sampling::{exact_leverage_scores, oversample_probs, sample};
use sketchrows::synth::gaussian;
use sketchrows::verify::{loewner_check, lp_direction_check, spectral_ratios, tail_test};
use sketchrows::RngStream;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn row_order_of_b_is_irrelevant(seed in any::<u64>(), shift in 1usize..40) {
        let a = gaussian(60, 4, 1.0, &RngStream::new(seed));
        let b = gaussian(40, 4, 1.0, &RngStream::new(seed ^ 7));
        let rows: Vec<Vec<f64>> = (0..40).map(|i| b.row((i + shift) % 40).to_dense(4)).collect();
        let permuted = SparseRowMatrix::from_rows(&rows).unwrap();
        let (r1, r2) = (spectral_ratios(&a, &b).unwrap(), spectral_ratios(&a, &permuted).unwrap());
        prop_assert!(rel_close(r1.min, r2.min, 1e-9) && rel_close(r1.max, r2.max, 1e-9));
    }

    #[test]
    fn superset_never_shrinks(seed in any::<u64>(), extra in 1usize..30) {
        let a = gaussian(50, 5, 1.0, &RngStream::new(seed));
        let more = gaussian(extra, 5, 1.0, &RngStream::new(seed ^ 3));
        let b = SparseRowMatrix::vstack(&[&a, &more]).unwrap();
        prop_assert!(spectral_ratios(&a, &b).unwrap().min >= 1.0 - 1e-9);
    }

    #[test]
    fn scaling_b_scales_ratios_quadratically(seed in any::<u64>(), c in 0.1..10.0f64) {
        let a = gaussian(50, 4, 1.0, &RngStream::new(seed));
        let b = gaussian(30, 4, 1.0, &RngStream::new(seed ^ 5));
        let r1 = spectral_ratios(&a, &b).unwrap();
        let r2 = spectral_ratios(&a, &b.scaled(c)).unwrap();
        prop_assert!(rel_close(r2.min, c * c * r1.min, 1e-8));
        prop_assert!(rel_close(r2.max, c * c * r1.max, 1e-8));
    }
}

#[test]
fn identical_matrices_pass_and_doubling_fails() {
    let a = gaussian(200, 6, 0.5, &RngStream::new(1));
    let same = loewner_check(&a, &a, 0.1).unwrap();
    assert!(same.pass && rel_close(same.min_ratio, 1.0, 1e-9) && rel_close(same.max_ratio, 1.0, 1e-9));
    let doubled = loewner_check(&a, &a.scaled(2.0), 0.5).unwrap();
    assert!(!doubled.pass && rel_close(doubled.max_ratio, 4.0, 1e-9));
    for p in [1.0, 1.5, 3.0] {
        assert!(lp_direction_check(&a, &a, p, 1e-9, 200, &RngStream::new(2)).unwrap().pass);
        let r = lp_direction_check(&a, &a.scaled(2.0), p, 0.5, 200, &RngStream::new(2)).unwrap();
        assert!(!r.pass && rel_close(r.worst_low, 2.0, 1e-12));
    }
}

#[test]
fn leak_outside_range_is_detected() {
    // A lives in the first two coordinates; B picks up a third.
    let a = SparseRowMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
    let b = SparseRowMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 1e-3]]).unwrap();
    assert!(loewner_check(&a, &a, 0.1).unwrap().pass);
    let r = loewner_check(&a, &b, 0.9).unwrap();
    assert!(!r.pass && r.null_space_leak > r.leak_tolerance);
    let d = lp_direction_check(&a, &b, 1.0, 0.9, 200, &RngStream::new(3)).unwrap();
    assert!(!d.pass && d.null_directions > 0);
}

#[test]
fn exact_leverage_sampling_fails_rarely() {
    let (n, d, eps) = (4000, 12, 0.5);
    let a = gaussian(n, d, 1.0, &RngStream::new(4));
    let probs = oversample_probs(&exact_leverage_scores(&a).unwrap(), eps, d, 2.0);
    let trials = 200u64;
    let failures = (0..trials)
        .filter(|&t| !loewner_check(&a, &sample(&a, &probs, 2.0, &RngStream::with_stream(4, t)).unwrap().matrix, eps).unwrap().pass)
        .count() as u64;
    assert!(tail_test(failures, trials, 0.05), "{failures}/{trials}");
}

#[test]
fn tail_test_slack() {
    assert!(tail_test(0, 100, 0.0));
    assert!(!tail_test(1, 100, 0.0));
    // 3 sigma at b = 0.01, 10^4 trials is 0.002985.
    assert!(tail_test(129, 10_000, 0.01));
    assert!(!tail_test(130, 10_000, 0.01));
}
