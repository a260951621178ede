use std::path::Path;
use std::process::ExitCode;

use serde_json::{json, Value};
use sketchrows::l2::{min_norm_least_squares, residual_norm, row_sample_l2_traced};
use sketchrows::lp::{row_sample_p_full, LpConfig};
use sketchrows::matrix::{gram, sym_eigen, DEFAULT_MAX_DIM, DEFAULT_REL_CUTOFF};
use sketchrows::sampling::{approx_str, exact_leverage_scores, ScoreKind, ScoreVector};
use sketchrows::synth::{coherent_spike, gaussian, power_law_rows, uniform_sample};
use sketchrows::verify::{loewner_check, lp_direction_check};
use sketchrows::{solve_l2_regression, PipelineConfig, RngStream, SampledMatrix, SparseRowMatrix};

use crate::mtx;
use crate::report::{Dims, RunReport};
use crate::{BenchArgs, CliError, LeverageArgs, LeverageMode, LstsqArgs, Norm, SampleArgs, VerifyArgs};

/// Largest `n * d` the bench generator will materialize.
const BENCH_CAPACITY: usize = 200_000_000;

fn emit(report: &RunReport, path: Option<&Path>, to_stderr: bool) -> Result<(), CliError> {
    let text = report.to_json();
    match path {
        Some(p) => mtx::write_text(p, &(text + "\n")),
        None if to_stderr => {
            eprintln!("{text}");
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// The exponent for `--norm`, rejecting `--p` where it has no meaning.
fn norm_exponent(norm: Norm, p: Option<f64>) -> Result<f64, CliError> {
    match (norm, p) {
        (Norm::L2, None) => Ok(2.0),
        (Norm::L2, Some(_)) => Err(CliError::Usage("--p is only valid with --norm lp".into())),
        (Norm::Lp, Some(p)) => Ok(p),
        (Norm::Lp, None) => Err(CliError::Usage("--norm lp requires --p".into())),
    }
}

fn check_eps(eps: f64) -> Result<(), CliError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--eps must lie in (0, 1), got {eps}")))
    }
}

/// Spectral check for l2, direction check otherwise.
fn check(a: &SparseRowMatrix, b: &SparseRowMatrix, norm: Norm, p: f64, eps: f64, dirs: usize, seed: u64) -> Result<(bool, Value), CliError> {
    if a.n_cols() != b.n_cols() {
        return Err(CliError::Input(format!(
            "column counts differ: {} vs {}",
            a.n_cols(),
            b.n_cols()
        )));
    }
    Ok(match norm {
        Norm::L2 => {
            let r = loewner_check(a, b, eps)?;
            (r.pass, json!({ "kind": "spectral", "report": r }))
        }
        Norm::Lp => {
            let r = lp_direction_check(a, b, p, eps, dirs, &RngStream::new(seed))?;
            (r.pass, json!({ "kind": "directions", "report": r }))
        }
    })
}

pub fn leverage(args: &LeverageArgs) -> Result<ExitCode, CliError> {
    let config = json!({ "mode": format!("{:?}", args.mode).to_lowercase(), "rho": args.rho, "delta": args.delta });
    let seeded = args.mode == LeverageMode::Approx;
    let mut report = RunReport::new("leverage", config, seeded.then_some(args.seed));
    let a = report.time("read", || mtx::read_matrix(&args.input))?;
    report.input = Some(Dims::from(&a));
    let mut code = ExitCode::SUCCESS;
    let scores = match args.mode {
        LeverageMode::Exact => {
            let s = report.time("scores", || exact_leverage_scores(&a))?;
            let rank = sym_eigen(&gram(&a)?, DEFAULT_REL_CUTOFF)?.rank;
            eprintln!("sum of scores {:.9} (rank {rank})", s.sum());
            report.details = json!({ "sum": s.sum(), "rank": rank });
            s
        }
        LeverageMode::Approx => {
            let rng = RngStream::new(args.seed);
            let s = report.time("scores", || approx_str(&a, &a, 1.0, args.rho, args.delta, &rng))?;
            let mut details = json!({ "sum": s.sum() });
            if args.self_test {
                let exact = exact_leverage_scores(&a)?;
                let covered = s.values.iter().zip(&exact.values).filter(|(u, t)| u >= t).count();
                let frac = if a.n_rows() == 0 { 1.0 } else { covered as f64 / a.n_rows() as f64 };
                let pass = frac >= 0.99;
                details["self_test"] = json!({ "upper_bounded_fraction": frac, "pass": pass });
                eprintln!("self-test: {:.2}% of rows upper bounded ({})", 100.0 * frac, if pass { "PASS" } else { "FAIL" });
                if !pass {
                    code = ExitCode::from(1);
                }
            }
            report.details = details;
            s
        }
    };
    let csv = mtx::format_scores(&scores);
    match &args.out {
        Some(p) => mtx::write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    emit(&report, args.report.as_deref(), true)?;
    Ok(code)
}

fn l2_config(eps: f64, seed: u64, reduction_rate: Option<usize>) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_eps(eps).with_seed(seed);
    cfg.r = reduction_rate;
    cfg
}

fn lp_config(p: f64, eps: f64, seed: u64, reduction_rate: Option<usize>) -> LpConfig {
    let mut cfg = LpConfig::default().with_p(p).with_eps(eps).with_seed(seed);
    cfg.l2.r = reduction_rate;
    cfg
}

/// Runs the pipeline for `norm`, filling history and details of `report`.
fn run_pipeline(
    a: &SparseRowMatrix,
    norm: Norm,
    p: f64,
    eps: f64,
    seed: u64,
    reduction_rate: Option<usize>,
    report: &mut RunReport,
) -> Result<SampledMatrix, CliError> {
    match norm {
        Norm::L2 => {
            let cfg = l2_config(eps, seed, reduction_rate);
            let (b, trace) = report.time("sample", || row_sample_l2_traced(a, &cfg, &RngStream::new(cfg.seed)))?;
            report.history = trace.ladder_rows.iter().map(|&r| json!(r)).collect();
            report.details = json!({ "trace": trace });
            Ok(b)
        }
        Norm::Lp => {
            let cfg = lp_config(p, eps, seed, reduction_rate);
            let out = report.time("sample", || row_sample_p_full(a, &cfg, &RngStream::new(cfg.seed)))?;
            report.history = out.buckets.iter().map(|b| json!({ "class": b.class, "rows": b.history })).collect();
            report.details = json!({
                "n_star": out.n_star,
                "buckets": out.buckets,
                "dropped_zero_rows": out.dropped_zero_rows,
                "best_effort": cfg.best_effort(),
            });
            Ok(out.sample)
        }
    }
}

pub fn sample(args: &SampleArgs) -> Result<ExitCode, CliError> {
    let p = norm_exponent(args.norm, args.p)?;
    check_eps(args.eps)?;
    let config = json!({
        "norm": format!("{:?}", args.norm).to_lowercase(),
        "p": p,
        "eps": args.eps,
        "reduction_rate": args.reduction_rate,
    });
    let mut report = RunReport::new("sample", config, Some(args.seed));
    let a = report.time("read", || mtx::read_matrix(&args.input))?;
    report.input = Some(Dims::from(&a));
    let b = run_pipeline(&a, args.norm, p, args.eps, args.seed, args.reduction_rate, &mut report)?;
    report.output_rows = Some(b.n_rows());
    if let Some(w) = &b.warning {
        report.warnings.push(w.clone());
    }
    report.time("write", || -> Result<(), CliError> {
        mtx::write_matrix(&args.out, &b.matrix)?;
        if let Some(path) = &args.provenance {
            mtx::write_text(path, &mtx::format_provenance(&b.provenance))?;
        }
        Ok(())
    })?;
    if args.verify {
        let (_, v) = report.time("verify", || check(&a, &b.matrix, args.norm, p, args.eps, args.directions, args.seed))?;
        report.verification = Some(v);
    }
    emit(&report, args.report.as_deref(), false)?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(args: &VerifyArgs) -> Result<ExitCode, CliError> {
    let p = norm_exponent(args.norm, args.p)?;
    if args.eps.is_nan() || args.eps <= 0.0 {
        return Err(CliError::Usage(format!("--eps must be positive, got {}", args.eps)));
    }
    let config = json!({
        "norm": format!("{:?}", args.norm).to_lowercase(),
        "p": p,
        "eps": args.eps,
        "directions": args.directions,
    });
    let seeded = args.norm == Norm::Lp;
    let mut report = RunReport::new("verify", config, seeded.then_some(args.seed));
    let a = report.time("read", || mtx::read_matrix(&args.a))?;
    let b = report.time("read", || mtx::read_matrix(&args.b))?;
    report.input = Some(Dims::from(&a));
    report.output_rows = Some(b.n_rows());
    let (pass, v) = report.time("verify", || check(&a, &b, args.norm, p, args.eps, args.directions, args.seed))?;
    report.verification = Some(v);
    report.details = json!({ "pass": pass });
    emit(&report, None, false)?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn lstsq(args: &LstsqArgs) -> Result<ExitCode, CliError> {
    check_eps(args.eps)?;
    let mut report = RunReport::new("lstsq", json!({ "eps": args.eps }), Some(args.seed));
    let a = report.time("read", || mtx::read_matrix(&args.a))?;
    let b = report.time("read", || mtx::read_vector(&args.b))?;
    report.input = Some(Dims::from(&a));
    if b.len() != a.n_rows() {
        return Err(CliError::Input(format!(
            "right-hand side has {} entries, matrix has {} rows",
            b.len(),
            a.n_rows()
        )));
    }
    let cfg = PipelineConfig::default().with_eps(args.eps).with_seed(args.seed);
    let sol = report.time("solve", || solve_l2_regression(&a, &b, &cfg))?;
    report.output_rows = Some(sol.sketch_rows);
    let sketched = residual_norm(&a, &sol.x, &b);
    let mut details = json!({
        "sketched_residual": sketched,
        "rank_deficient": sol.rank_deficient,
        "x": sol.x,
    });
    if a.n_rows() <= args.exact_max_rows {
        let (x, _) = report.time("exact", || min_norm_least_squares(&a, &b, cfg.rel_cutoff, DEFAULT_MAX_DIM))?;
        let exact = residual_norm(&a, &x, &b);
        details["exact_residual"] = json!(exact);
        details["ratio"] = json!(if exact > 0.0 { sketched / exact } else if sketched == 0.0 { 1.0 } else { f64::INFINITY });
    }
    report.details = details;
    if let Some(path) = &args.out {
        mtx::write_text(path, &mtx::format_vector(&sol.x))?;
    }
    emit(&report, None, false)?;
    Ok(ExitCode::SUCCESS)
}

type Design = fn(&BenchArgs, &RngStream) -> SparseRowMatrix;

/// Uniform row sample with the same expected size, rescaled for the norm.
fn uniform_baseline(a: &SparseRowMatrix, m: f64, p: f64, rng: &RngStream) -> Result<SampledMatrix, CliError> {
    if p == 2.0 {
        return Ok(uniform_sample(a, m, rng));
    }
    let q = (m / a.n_rows().max(1) as f64).min(1.0);
    let probs = ScoreVector::new(vec![q; a.n_rows()], ScoreKind::SamplingProbability)?;
    Ok(sketchrows::sampling::sample(a, &probs, p, rng)?)
}

pub fn bench(args: &BenchArgs) -> Result<ExitCode, CliError> {
    let p = norm_exponent(args.norm, args.p)?;
    check_eps(args.eps)?;
    if args.n == 0 || args.d < 2 || args.trials == 0 || !(args.density > 0.0 && args.density <= 1.0) {
        return Err(CliError::Usage("need n >= 1, d >= 2, trials >= 1 and density in (0, 1]".into()));
    }
    if args.n.saturating_mul(args.d) > BENCH_CAPACITY {
        return Err(CliError::Usage(format!(
            "n * d = {} exceeds the bench capacity of {BENCH_CAPACITY} entries",
            args.n.saturating_mul(args.d)
        )));
    }
    let config = json!({
        "n": args.n, "d": args.d, "density": args.density, "trials": args.trials,
        "norm": format!("{:?}", args.norm).to_lowercase(), "p": p, "eps": args.eps,
    });
    let mut report = RunReport::new("bench", config, Some(args.seed));
    let root = RngStream::new(args.seed);
    let designs: [(&str, Design); 3] = [
        ("gaussian", |b, r| gaussian(b.n, b.d, b.density, r)),
        ("power_law", |b, r| power_law_rows(b.n, b.d, 1.0, r)),
        ("coherent_spike", |b, r| coherent_spike(b.n, b.d, r)),
    ];
    let mut results = Vec::new();
    for (di, (name, make)) in designs.iter().enumerate() {
        let mut trials = Vec::new();
        let (mut passes, mut baseline_passes) = (0u64, 0u64);
        for t in 0..args.trials {
            let rng = root.child2(di as u64, t);
            let a = report.time(&format!("{name}/generate"), || make(args, &rng.child(0)));
            let seed = args.seed.wrapping_add(t);
            let mut inner = RunReport::new("bench-trial", Value::Null, Some(seed));
            let b = run_pipeline(&a, args.norm, p, args.eps, seed, None, &mut inner)?;
            let (pass, _) = check(&a, &b.matrix, args.norm, p, args.eps, args.directions, seed)?;
            let u = uniform_baseline(&a, b.n_rows() as f64, p, &rng.child(1))?;
            let (upass, _) = check(&a, &u.matrix, args.norm, p, args.eps, args.directions, seed)?;
            passes += pass as u64;
            baseline_passes += upass as u64;
            let secs = inner.timings.get("sample").copied().unwrap_or(0.0);
            *report.timings.entry(format!("{name}/sample")).or_default() += secs;
            trials.push(json!({
                "trial": t, "seed": seed, "rows": b.n_rows(), "seconds": secs, "pass": pass,
                "uniform_rows": u.n_rows(), "uniform_pass": upass, "history": inner.history,
            }));
        }
        eprintln!(
            "{name}: {passes}/{} sketches pass, uniform baseline {baseline_passes}/{}",
            args.trials, args.trials
        );
        results.push(json!({
            "design": name, "passes": passes, "uniform_passes": baseline_passes, "trials": trials,
        }));
    }
    report.details = json!({ "designs": results });
    emit(&report, None, false)?;
    Ok(ExitCode::SUCCESS)
}
