//! Acceptance criteria. Each test prints one `AC<n> PASS|FAIL` line to
//! stdout (bypassing the harness capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use kinv_core::field::write_dump;
use kinv_core::inverse::{random_psi_family, stability_estimate, InverseOperator, StabilityReport};
use kinv_core::model::{check_alpha, FieldSource, QTermConfig};
use kinv_core::nonlinear::solve_nonlinear_forward;
use kinv_core::oracle::{convergence_study, oracle_inverse};
use kinv_core::{AlphaSpec, Geometry, GridFunction2, KinvError, Mode, ProblemConfig, ProblemSpec};

const PI: f64 = std::f64::consts::PI;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "AC{id} {} {name}: {detail} [{:.3} s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn sci(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", v.join(", "))
}

fn geometry() -> Geometry {
    Geometry::new(1.0, 1.0, 2.0, 1.5).unwrap()
}

fn small_kernel(c: &mut ProblemConfig) {
    c.coefficients.alpha = AlphaSpec::SoftAbs { c: 0.1 };
    c.coefficients.q = vec![QTermConfig {
        q1: "0.2*(1 + x)".into(),
        q2: "0.2*cos(x)".into(),
    }];
}

fn tight(c: &mut ProblemConfig) {
    c.solver.picard_tol = 1e-15;
    c.solver.newton_tol = 1e-13;
}

fn relative_sup(a: &GridFunction2, b: &GridFunction2) -> f64 {
    a.sub(b).sup_norm() / b.sup_norm()
}

#[test]
fn ac1_zero_data_uniqueness() {
    let start = Instant::now();
    let mut c = ProblemConfig::new(geometry(), 16, 8, 16, Mode::InverseSource);
    small_kernel(&mut c);
    c.coefficients.j = Some("0.2".into());
    c.set_psi("0");
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    spec.ensure_valid(true).unwrap();
    let res = InverseOperator::for_spec(&spec)
        .unwrap()
        .solve(spec.psi.as_ref().unwrap())
        .unwrap();
    let (f, u) = (res.control.sup_norm(), res.state.sup_norm());
    let elapsed = start.elapsed();
    let pass = f <= 1e-10 && u <= 1e-10 && elapsed < Duration::from_secs(1);
    report(
        1,
        "zero-data uniqueness",
        pass,
        elapsed,
        &format!("|f| = {f:e}, |u| = {u:e}, {} Newton steps", res.report.iterations),
    );
    assert!(pass);
}

#[test]
fn ac2_linear_oracle_equivalence() {
    let start = Instant::now();
    let mut c = ProblemConfig::new(geometry(), 6, 4, 8, Mode::InverseSource);
    c.coefficients.j = Some("0.2".into());
    c.coefficients.g = Some("1 + t".into());
    c.set_psi("sin(pi*x)*(1 + 0.1*v)");
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    spec.ensure_valid(true).unwrap();
    let psi = spec.psi.clone().unwrap();
    let oracle = oracle_inverse(&spec, &psi).unwrap();
    let newton = InverseOperator::for_spec(&spec).unwrap().solve(&psi).unwrap();
    let diff = newton.control.sub(&oracle.control).sup_norm();
    let cond = oracle.system.conditioning;
    let elapsed = start.elapsed();
    let pass = diff <= 1e-8 && cond.is_finite() && elapsed < Duration::from_secs(10);
    report(
        2,
        "linear oracle equivalence",
        pass,
        elapsed,
        &format!("max |f_newton - f_dense| = {diff:e}, condition number = {cond:e}"),
    );
    assert!(pass);
}

#[test]
fn ac3_nonlinear_round_trip() {
    let start = Instant::now();
    let mut c = ProblemConfig::new(geometry(), 16, 8, 32, Mode::InverseSource);
    small_kernel(&mut c);
    tight(&mut c);
    c.coefficients.j = Some("0.1".into());
    c.coefficients.g = Some("exp(-t)".into());
    c.set_psi("0");
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    spec.ensure_valid(true).unwrap();
    assert!(spec.kernel_smallness() < 0.5);
    let op = InverseOperator::for_spec(&spec).unwrap();
    let f_star = GridFunction2::sample(spec.grid.clone(), |x, _| 0.1 * (PI * x).sin());
    let psi = op.forward(&op.chi_from_control(&f_star)).unwrap().0;
    let res = op.solve(&psi).unwrap();
    let err = relative_sup(&res.control, &f_star);
    let mut hist = vec![res.report.initial_residual];
    hist.extend(&res.report.residual_history);
    let decreasing = hist.windows(2).all(|w| w[1] < w[0]);
    let elapsed = start.elapsed();
    let pass = res.report.converged
        && err <= 1e-8
        && res.report.iterations <= 8
        && decreasing
        && elapsed < Duration::from_secs(60);
    report(
        3,
        "nonlinear round trip",
        pass,
        elapsed,
        &format!(
            "relative error {err:e}, {} Newton steps, residuals {}",
            res.report.iterations,
            sci(&hist)
        ),
    );
    assert!(pass);
}

#[test]
fn ac4_absorption_round_trip() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (nx, nv, nt) = (16, 8, 32);

    // u0: a precomputed forward solution, u0 = 1 + min(t, time since entry)
    let mut pre = ProblemConfig::new(geometry(), nx, nv, nt, Mode::Forward);
    pre.coefficients.source = Some("1".into());
    pre.coefficients.phi = Some("1".into());
    pre.coefficients.mu = Some("1".into());
    let pre = ProblemSpec::from_config(pre, ".").unwrap();
    let (u0, _) = solve_nonlinear_forward(&pre, &pre.source).unwrap();
    let u0_path = dir.path().join("u0.bin");
    write_dump(&u0_path, &[nt + 1, nx, nv], u0.values()).unwrap();
    let u0_min = u0.final_slice().values().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));

    let mut c = ProblemConfig::new(geometry(), nx, nv, nt, Mode::InverseAbsorption);
    small_kernel(&mut c);
    tight(&mut c);
    c.coefficients.j = Some("0.1".into());
    c.coefficients.g = Some("exp(-0.5*t)".into());
    c.coefficients.source = Some("1 + 0.5*sin(pi*x)".into());
    c.coefficients.u0 = Some(FieldSource::File { file: "u0.bin".into() });
    c.set_psi("0");
    let spec = ProblemSpec::from_config(c, dir.path()).unwrap();
    spec.ensure_valid(true).unwrap();
    let op = InverseOperator::for_spec(&spec).unwrap();
    let sigma_star = GridFunction2::sample(spec.grid.clone(), |x, _| 0.1 * (1.0 + 0.5 * (PI * x).cos()));
    let psi = op.forward(&op.chi_from_control(&sigma_star)).unwrap().0;
    let res = op.solve(&psi).unwrap();
    let err = relative_sup(&res.control, &sigma_star);
    let elapsed = start.elapsed();
    let pass = res.report.converged && u0_min >= 0.1 && err <= 1e-8 && elapsed < Duration::from_secs(60);
    report(
        4,
        "absorption round trip",
        pass,
        elapsed,
        &format!(
            "relative error {err:e}, {} Newton steps, min |u0(T)| = {u0_min}",
            res.report.iterations
        ),
    );
    assert!(pass);
}

#[test]
fn ac5_mms_convergence() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for case in 1..=3 {
        let table = convergence_study(case, 3, 16, 4, 16).unwrap();
        let orders = table.orders();
        pass &= orders.len() == 3 && orders.iter().all(|o| (0.7..=1.3).contains(o));
        detail.push(format!("case {case} orders {orders:.3?}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    report(5, "MMS convergence", pass, elapsed, &detail.join("; "));
    assert!(pass);
}

#[test]
fn ac6_frechet_derivative() {
    let start = Instant::now();
    let mut c = ProblemConfig::new(geometry(), 16, 8, 16, Mode::InverseSource);
    c.coefficients.alpha = AlphaSpec::SoftAbs { c: 1.0 };
    c.coefficients.q = vec![QTermConfig {
        q1: "0.1*(1 + x)".into(),
        q2: "cos(x)".into(),
    }];
    c.coefficients.j = Some("0.1".into());
    c.coefficients.g = Some("exp(-t)".into());
    tight(&mut c);
    c.set_psi("0");
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    let op = InverseOperator::for_spec(&spec).unwrap();
    let chi = GridFunction2::sample(spec.grid.clone(), |x, _| (PI * x).sin());
    let d = GridFunction2::sample(spec.grid.clone(), |x, v| 1.0 + 0.5 * x * v);
    let (m, u) = op.forward(&chi).unwrap();
    let jd = op.jacobian_apply(&d, &u).unwrap();
    let eps = [1e-2, 1e-3, 1e-4];
    let errs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let me = op.forward(&chi.add(&d.scale(e))).unwrap().0;
            me.sub(&m).scale(1.0 / e).sub(&jd).sup_norm()
        })
        .collect();
    // least-squares slope of log(err) against log(eps)
    let xs: Vec<f64> = eps.iter().map(|e| e.log10()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.log10()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let pass = (slope - 1.0).abs() <= 0.3 && errs.windows(2).all(|w| w[1] < w[0]);
    report(
        6,
        "Frechet-derivative check",
        pass,
        start.elapsed(),
        &format!("errors {}, log-log slope {slope:.4}", sci(&errs)),
    );
    assert!(pass);
}

#[test]
fn ac7_paperform_consistency() {
    let start = Instant::now();
    let gap = |n: usize| {
        let mut c = ProblemConfig::new(geometry(), n, 8, n, Mode::InverseSource);
        small_kernel(&mut c);
        c.coefficients.g = Some("1 + t".into());
        c.coefficients.sigma = Some("1 + 0.5*x".into());
        c.coefficients.u0 = Some("2 + cos(pi*x)".into());
        c.coefficients.j = Some("0.2".into());
        c.set_psi("0");
        let spec = ProblemSpec::from_config(c, ".").unwrap();
        let op = InverseOperator::for_spec(&spec).unwrap();
        let chi = GridFunction2::sample(spec.grid.clone(), |x, v| 1.0 + x + 0.1 * v);
        let m = op.forward(&chi).unwrap().0;
        op.forward_paperform(&chi).unwrap().sub(&m).sup_norm()
    };
    let gaps: Vec<f64> = [16, 32, 64].iter().map(|&n| gap(n)).collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&r| r >= 1.5);
    report(
        7,
        "paper-form consistency",
        pass,
        start.elapsed(),
        &format!("gaps {}, reduction factors {ratios:.3?}", sci(&gaps)),
    );
    assert!(pass);
}

#[test]
fn ac8_picard_contraction() {
    let start = Instant::now();
    let mut c = ProblemConfig::new(geometry(), 16, 8, 16, Mode::Forward);
    c.coefficients.alpha = AlphaSpec::SoftAbs { c: 1.0 };
    c.coefficients.q = vec![QTermConfig {
        q1: "0.1*(1 + x)".into(),
        q2: "0.5".into(),
    }];
    c.coefficients.source = Some("1 + sin(pi*x)".into());
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    let smallness = spec.kernel_smallness();
    let (_, rep) = solve_nonlinear_forward(&spec, &spec.source).unwrap();
    let max_ratio = rep.contraction_ratios.iter().copied().fold(0.0, f64::max);
    let contracts = smallness < 0.5 && rep.converged && rep.contraction_ratios.iter().all(|&r| r < 1.0);
    let big = spec.with_kernel_scaled(1e3);
    let diverged = matches!(
        solve_nonlinear_forward(&big, &big.source),
        Err(KinvError::PicardDivergence { .. })
    );
    let pass = contracts && diverged;
    report(
        8,
        "Picard contraction",
        pass,
        start.elapsed(),
        &format!(
            "C1 |Q| meas = {smallness}, {} iterations, max ratio {max_ratio:.3e}; x1e3 kernel diverged: {diverged}",
            rep.iterations
        ),
    );
    assert!(pass);
}

#[test]
fn ac9_alpha_conditions() {
    let start = Instant::now();
    let families = [
        AlphaSpec::Zero,
        AlphaSpec::SoftAbs { c: 1.0 },
        AlphaSpec::SoftAbs { c: 0.1 },
        AlphaSpec::CubicSaturating { c: 1.0 },
        AlphaSpec::CubicSaturating { c: 2.5 },
    ];
    let checks: Vec<_> = families.iter().map(|a| check_alpha(a, 10_000, 1e-6)).collect();
    let pass = checks.iter().all(|c| c.passed && c.samples >= 10_000);
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} fd {:.1e} violations {}", c.family, c.max_fd_rel_error, c.bound_violations))
        .collect();
    report(9, "alpha conditions", pass, start.elapsed(), &detail.join("; "));
    assert!(pass);
}

fn stability_run(threads: usize) -> StabilityReport {
    let mut c = ProblemConfig::new(geometry(), 16, 8, 16, Mode::InverseSource);
    c.coefficients.j = Some("0.2".into());
    c.coefficients.g = Some("exp(-t)".into());
    c.set_psi("0");
    let spec = ProblemSpec::from_config(c, ".").unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let family = random_psi_family(&spec.grid, 20, 0x5eed);
        stability_estimate(&spec, &family).unwrap()
    })
}

#[test]
fn ac10_stability_bound() {
    let start = Instant::now();
    let a = stability_run(1);
    let b = stability_run(4);
    let c = stability_run(4);
    let bits = |r: &StabilityReport| r.ratios.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let reproducible = bits(&a) == bits(&b) && bits(&b) == bits(&c);
    let c_bar = a.c_bar.unwrap_or(f64::NAN);
    let median = a.median.unwrap_or(f64::NAN);
    let pass = a.skipped.is_empty()
        && a.ratios.len() == 20
        && c_bar.is_finite()
        && c_bar <= 10.0 * median
        && reproducible;
    report(
        10,
        "stability bound",
        pass,
        start.elapsed(),
        &format!("C = {c_bar:e}, median {median:e}, bitwise reproducible across 1/4 threads: {reproducible}"),
    );
    assert!(pass);
}
