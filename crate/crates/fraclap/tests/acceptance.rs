//! End-to-end acceptance battery. Each numbered check prints one PASS/FAIL
//! line; the test asserts that every check passes and reports the failures
//! in the panic message otherwise.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! on success as well.

use fraclap::analysis::{
    self, OperatorKind, OptimizerConfig, QuotientReport, TrialFamily,
};
use fraclap::cli;
use fraclap::quadrature::{Method, QuadratureSpec};
use fraclap::specfun::{self, FracParams};
use fraclap::trialspace::{make_bubble, TrialFunction};
use std::time::Instant;

struct Outcome {
    label: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn det_spec(budget: u64) -> QuadratureSpec {
    QuadratureSpec {
        method: Method::TensorGauss,
        budget,
        ..QuadratureSpec::default()
    }
}

fn mc_spec(budget: u64, seed: u64) -> QuadratureSpec {
    QuadratureSpec {
        method: Method::ImportanceMc,
        budget,
        seed,
        ..QuadratureSpec::default()
    }
}

/// First-order error estimate for quotient = numerator / denominator^2,
/// propagated from the reported energy/norm error estimates.
fn quotient_err(r: &QuotientReport) -> f64 {
    let rel_num = r.numerator.err_est / r.numerator.value.abs().max(1e-300);
    let rel_den = r.denominator.err_est / r.denominator.value.abs().max(1e-300);
    r.quotient.abs() * (rel_num + 2.0 * rel_den)
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// individual checks
// ---------------------------------------------------------------------------

/// 1. Closed-form constants against their exact Gamma-function values,
/// 12 significant digits.
fn check_constants() -> (bool, String) {
    use std::f64::consts::PI;
    let tol = 1e-12;
    let cases: [(&str, f64, f64); 4] = [
        (
            "sobolev_const(2, 1/2)",
            specfun::sobolev_const(2, 0.5).unwrap().value,
            PI,
        ),
        (
            "gamma_half(1/2)",
            specfun::gamma_half(0.5).unwrap().value,
            1.0 / PI,
        ),
        (
            "b_beta(1/2, 1/2)",
            specfun::b_beta(0.5, 0.5).unwrap().value,
            PI / 2.0,
        ),
        (
            "c_frac(1, 1/2)",
            specfun::c_frac(FracParams::new(1, 0.5).unwrap())
                .unwrap()
                .value,
            1.0 / PI,
        ),
    ];
    let mut bad = Vec::new();
    for (name, got, want) in cases {
        if rel_dev(got, want) > tol {
            bad.push(format!("{name} = {got:.12e}, expected {want:.12e}"));
        }
    }
    if bad.is_empty() {
        (true, "four closed forms match to 12 digits".into())
    } else {
        (false, bad.join("; "))
    }
}

/// 2. The bubble realizes the sharp Dirichlet quotient at (n=1, s=1/4)
/// within 2%, and the quotient is scale invariant up to quadrature error.
fn check_bubble_extremality() -> (bool, String) {
    let params = FracParams::new(1, 0.25).unwrap();
    let spec = det_spec(100_000);
    let s_const = specfun::sobolev_const(1, 0.25).unwrap().value;

    let base = make_bubble(params, 0.0, 1.0).unwrap();
    let r0 = analysis::rayleigh(&base, OperatorKind::Dirichlet, params, &spec).unwrap();
    let dev = rel_dev(r0.quotient, s_const);
    if dev > 0.02 {
        return (
            false,
            format!(
                "quotient {:.6} vs constant {:.6}, deviation {:.2e} > 2%",
                r0.quotient, s_const, dev
            ),
        );
    }

    let mut worst = 0.0f64;
    let mut err_budget = 0.0f64;
    for scale in [0.5, 1.5] {
        let u = make_bubble(params, 0.0, scale).unwrap();
        let r = analysis::rayleigh(&u, OperatorKind::Dirichlet, params, &spec).unwrap();
        worst = worst.max((r.quotient - r0.quotient).abs());
        err_budget = err_budget.max(3.0 * (quotient_err(&r) + quotient_err(&r0)));
    }
    let pass = worst <= err_budget;
    (
        pass,
        format!(
            "quotient {:.6} matches constant {:.6} (dev {:.1e}); \
             scale +/-50% shifts it by {:.2e} (error budget {:.2e})",
            r0.quotient, s_const, dev, worst, err_budget
        ),
    )
}

/// 3. Spectral quotient of the restricted bubble equals 2^{-2s/n} times the
/// sharp constant within 3x the propagated error, at both desk points.
/// 4. Restricted quotient sits strictly below that constant with a gap
/// exceeding 3x the propagated error.
fn check_spectral_and_restricted() -> ((bool, String), (bool, String)) {
    let mut spectral_lines = Vec::new();
    let mut restricted_lines = Vec::new();
    let mut spectral_ok = true;
    let mut restricted_ok = true;
    for (n, s) in [(1u32, 0.25f64), (2, 0.5)] {
        let params = FracParams::new(n, s).unwrap();
        let spec = mc_spec(1_000_000, 42);
        let target = specfun::spectral_neumann_const(n, s).unwrap().value;
        let u = make_bubble(params, 0.0, 1.0).unwrap();

        let sp = analysis::rayleigh(&u, OperatorKind::Spectral, params, &spec).unwrap();
        let sp_err = quotient_err(&sp);
        let sp_dev = (sp.quotient - target).abs();
        if sp_dev > 3.0 * sp_err {
            spectral_ok = false;
        }
        spectral_lines.push(format!(
            "({n},{s}): {:.4} vs {:.4} (|dev| {:.1e}, 3x err {:.1e})",
            sp.quotient,
            target,
            sp_dev,
            3.0 * sp_err
        ));

        let re = analysis::rayleigh(&u, OperatorKind::Restricted, params, &spec).unwrap();
        let re_err = quotient_err(&re);
        let gap = target - re.quotient;
        if gap <= 3.0 * re_err {
            restricted_ok = false;
        }
        restricted_lines.push(format!(
            "({n},{s}): {:.4} below {:.4} (gap {:.2e}, 3x err {:.1e})",
            re.quotient,
            target,
            gap,
            3.0 * re_err
        ));
    }
    (
        (spectral_ok, spectral_lines.join("; ")),
        (restricted_ok, restricted_lines.join("; ")),
    )
}

/// 5. Identity suite (a)-(i): deterministic n=1 run at 1e-6, Monte Carlo
/// n=2 run at 1e-2, seed 42, budget 1e6.
fn check_identity_suite() -> (bool, String) {
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    let runs = [
        (FracParams::new(1, 0.25).unwrap(), det_spec(1_000_000), 1e-6),
        (
            FracParams::new(2, 0.3).unwrap(),
            mc_spec(1_000_000, 42),
            1e-2,
        ),
    ];
    for (params, spec, tol) in runs {
        let records = analysis::identity_suite(params, &spec, tol).unwrap();
        counts.push(format!(
            "n={} tol {:.0e}: {} items",
            params.n,
            tol,
            records.len()
        ));
        for r in records {
            if !r.pass {
                failures.push(format!(
                    "n={} {}: lhs {:.6e} rhs {:.6e} tol {:.0e}",
                    params.n, r.name, r.lhs, r.rhs, r.tol
                ));
            }
        }
    }
    if failures.is_empty() {
        (true, counts.join("; "))
    } else {
        (false, failures.join("; "))
    }
}

/// 6. Projector battery: idempotence on a 50-point grid, Pythagoras within
/// summed error, pointwise operator residual at 10 lower-half points.
/// These are the i-items of the deterministic identity suite.
fn check_projector_battery() -> (bool, String) {
    let params = FracParams::new(1, 0.25).unwrap();
    let spec = det_spec(1_000_000);
    let records = analysis::identity_suite(params, &spec, 1e-6).unwrap();
    let mut seen = 0;
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for r in records {
        if !r.name.starts_with("i1") && !r.name.starts_with("i2") && !r.name.starts_with("i3") {
            continue;
        }
        seen += 1;
        details.push(format!("{} defect {:.2e} (tol {:.1e})", r.name, (r.lhs - r.rhs).abs(), r.tol));
        if !r.pass {
            failures.push(r.name.clone());
        }
    }
    if seen != 3 {
        return (false, format!("expected 3 projector items, found {seen}"));
    }
    if failures.is_empty() {
        (true, details.join("; "))
    } else {
        (false, format!("failed: {}", failures.join(", ")))
    }
}

/// 7. Strict full/semirestricted energy ratio beyond 4/3 at (1, 0.45),
/// resolved beyond 3x error, and the exact chain threshold constant.
fn check_strict_chain() -> (bool, String) {
    let params = FracParams::new(1, 0.45).unwrap();
    let spec = det_spec(1_000_000);
    let cfg = OptimizerConfig::default();
    let report = analysis::theorem_gap_report(params, &cfg, &spec).unwrap();

    let expected_threshold = (1.5f64).ln() / (2.0f64).ln();
    if report.threshold_constant != expected_threshold {
        return (
            false,
            format!(
                "threshold constant {:.16} != ln(1.5)/ln(2) = {:.16}",
                report.threshold_constant, expected_threshold
            ),
        );
    }

    let item = report
        .items
        .iter()
        .find(|i| i.name == "full_over_semirestricted_exceeds_4_3");
    match item {
        Some(i) if i.resolved == Some(true) => (
            true,
            format!(
                "ratio {:.4} > {:.4} resolved (err {:.1e}); threshold constant exact",
                i.value, i.reference, i.err
            ),
        ),
        Some(i) => (
            false,
            format!(
                "ratio {:.4} vs {:.4} not resolved (err {:.1e}, resolved {:?})",
                i.value, i.reference, i.err, i.resolved
            ),
        ),
        None => (false, "ratio item missing from gap report".into()),
    }
}

/// 8. Small-s and s->1 limits of a Gaussian trial: weighted masses at
/// s = 0.02 within 10%, classical energies at s = 0.98 within 15%.
fn check_limits() -> (bool, String) {
    let u = TrialFunction::Gaussian {
        center: vec![0.0],
        width: 1.0,
    };
    let spec = det_spec(1_000_000);
    let table = analysis::limit_sweep(&u, &[0.02, 0.98], 1, &spec).unwrap();
    let lo = &table.rows[0];
    let hi = &table.rows[1];
    let checks = [
        ("s=0.02 full", lo.dev0_full, 0.10),
        ("s=0.02 upper pairs", lo.dev0_upper, 0.10),
        ("s=0.02 semirestricted", lo.dev0_semi, 0.10),
        ("s=0.02 projected", lo.dev0_semi_ext, 0.10),
        ("s=0.98 full", hi.dev1_full, 0.15),
        ("s=0.98 upper pairs", hi.dev1_upper, 0.15),
    ];
    let mut failures = Vec::new();
    let mut devs = Vec::new();
    for (name, dev, lim) in checks {
        devs.push(format!("{name} {:.1}%", 100.0 * dev.abs()));
        if dev.abs() > lim {
            failures.push(format!("{name}: |{:.3}| > {lim}", dev));
        }
    }
    if failures.is_empty() {
        (true, devs.join(", "))
    } else {
        (false, failures.join("; "))
    }
}

/// 9. Weighted classical quotient at (3, s=1, sigma=1/2): the sigma-bubble
/// is a local minimum under five multiplicative perturbations, and the
/// reflection factor identity closes within 3%.
fn check_weighted_quotient() -> (bool, String) {
    let params = FracParams::with_sigma(3, 1.0, 0.5).unwrap();
    let spec = det_spec(1_000_000);
    let cfg = OptimizerConfig::default();
    let report = analysis::hardy_sobolev_report(params, &cfg, &spec).unwrap();

    let mut failures = Vec::new();
    if report.perturbed_quotients.len() != 5 {
        failures.push(format!(
            "expected 5 perturbations, got {}",
            report.perturbed_quotients.len()
        ));
    }
    if report.base_is_min != Some(true) {
        failures.push(format!(
            "base quotient {:?} not minimal among perturbations {:?}",
            report.base_quotient, report.perturbed_quotients
        ));
    }
    if !report.identity_pass {
        failures.push(format!(
            "factor identity {:.5} vs {:.5} outside 3%",
            report.identity_lhs, report.identity_rhs
        ));
    }
    if failures.is_empty() {
        (
            true,
            format!(
                "base {:.5} minimal over 5 perturbations; identity {:.5} vs {:.5}",
                report.base_quotient.unwrap(),
                report.identity_lhs,
                report.identity_rhs
            ),
        )
    } else {
        (false, failures.join("; "))
    }
}

/// 10. Reproducibility: the same config and seed produce byte-identical
/// CSV output through the CLI driver.
fn check_reproducibility() -> (bool, String) {
    let dir = std::env::temp_dir().join(format!("fraclap-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = cli::RunConfig {
        command: cli::Command::Energy,
        n: 2,
        s: 0.5,
        sigma: None,
        spec: mc_spec(50_000, 0),
        optimizer: OptimizerConfig::default(),
        trial: Some(TrialFunction::Gaussian {
            center: vec![0.3],
            width: 1.0,
        }),
        region: None,
        operator: None,
        s_grid: None,
        points: None,
        identity_tol: None,
        out: None,
        format: cli::OutputFormat::Csv,
        cache_dir: None,
    };
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let mut payloads = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("out-{run}.csv"));
        let cli = cli::Cli {
            config: config_path.clone(),
            seed: Some(7),
            budget: None,
            out: Some(out.clone()),
            format: None,
            cache: None,
        };
        let code = cli::run(&cli);
        if code != 0 {
            let _ = std::fs::remove_dir_all(&dir);
            return (false, format!("run {run} exited with code {code}"));
        }
        payloads.push(std::fs::read(&out).unwrap());
    }
    let identical = payloads[0] == payloads[1];
    let _ = std::fs::remove_dir_all(&dir);
    if identical {
        (
            true,
            format!("two runs produced identical {}-byte CSV", payloads[0].len()),
        )
    } else {
        (false, "CSV outputs differ between identical runs".into())
    }
}

/// Substituted stability check: upper bounds from five optimizer restarts
/// spread by at most 1%.
fn check_optimizer_stability() -> (bool, String) {
    let params = FracParams::new(1, 0.25).unwrap();
    let spec = det_spec(100_000);
    let cfg = OptimizerConfig {
        family: TrialFamily::ShiftScaleBubble,
        restarts: 5,
        max_iters: 60,
        simplex_tol: 1e-4,
        seed: 42,
    };
    let out = analysis::minimize_quotient(OperatorKind::Dirichlet, params, &cfg, &spec).unwrap();
    let lo = out
        .restart_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = out
        .restart_values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo.abs().max(1e-300);
    (
        spread <= 0.01,
        format!(
            "5 restarts in [{:.6}, {:.6}], spread {:.2e}",
            lo, hi, spread
        ),
    )
}

// ---------------------------------------------------------------------------
// driver
// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    fn run(
        outcomes: &mut Vec<Outcome>,
        label: &'static str,
        f: fn() -> (bool, String),
    ) {
        let t = Instant::now();
        let (pass, detail) = f();
        outcomes.push(Outcome {
            label,
            pass,
            detail,
            secs: t.elapsed().as_secs_f64(),
        });
    }

    let mut outcomes: Vec<Outcome> = Vec::new();
    run(&mut outcomes, "1 closed-form constants", check_constants);
    run(
        &mut outcomes,
        "2 bubble extremality and scale invariance",
        check_bubble_extremality,
    );
    {
        let t = Instant::now();
        let ((p3, d3), (p4, d4)) = check_spectral_and_restricted();
        let secs = t.elapsed().as_secs_f64() / 2.0;
        outcomes.push(Outcome { label: "3 spectral factor identity", pass: p3, detail: d3, secs });
        outcomes.push(Outcome { label: "4 restricted strictness", pass: p4, detail: d4, secs });
    }
    run(&mut outcomes, "5 identity suite", check_identity_suite);
    run(&mut outcomes, "6 projector battery", check_projector_battery);
    run(&mut outcomes, "7 strict energy chain", check_strict_chain);
    run(&mut outcomes, "8 limit sweep", check_limits);
    run(&mut outcomes, "9 weighted quotient minimality", check_weighted_quotient);
    run(&mut outcomes, "10 seeded reproducibility", check_reproducibility);
    run(
        &mut outcomes,
        "stability: optimizer restart spread",
        check_optimizer_stability,
    );

    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {status} ({:.1}s) — {}", o.label, o.secs, o.detail);
        if !o.pass {
            failed.push(format!("{} — {}", o.label, o.detail));
        }
    }
    assert!(
        failed.is_empty(),
        "acceptance failures:\n{}",
        failed.join("\n")
    );
}
