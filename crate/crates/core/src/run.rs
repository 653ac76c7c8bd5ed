//! Command drivers behind the `kinv` binary. Each run writes its artifacts
//! and a `manifest.json` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{KinvError, Result};
use crate::field::{GridFunction2, GridFunction3};
use crate::forward::apriori_bound_terms;
use crate::inverse::{random_psi_family, stability_estimate, InverseOperator};
use crate::model::{check_alpha, AlphaSpec, Bindings, Expr, Mode, ProblemSpec, Severity, SolverConfig};
use crate::nonlinear::solve_nonlinear_forward;
use crate::oracle::{convergence_study, oracle_inverse, MMS_CASES};

pub const MANIFEST: &str = "manifest.json";

/// Joint doublings in the MMS suite.
pub const MMS_REFINEMENTS: usize = 3;
/// Base `(Nx, Nv, Nt)` of the MMS suite.
pub const MMS_BASE: (usize, usize, usize) = (16, 4, 16);
/// Accepted band for observed orders.
pub const MMS_ORDER_BAND: (f64, f64) = (0.7, 1.3);
/// Allowed Newton-vs-oracle discrepancy.
pub const ORACLE_TOL: f64 = 1e-8;
pub const STABILITY_MEMBERS: usize = 20;
pub const STABILITY_SEED: u64 = 0x5eed;
/// No member ratio may exceed this multiple of the median.
pub const STABILITY_SPREAD: f64 = 10.0;
pub const ALPHA_SAMPLES: usize = 10_000;
pub const ALPHA_FD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok,
    ValidationFailed,
    SolverFailed,
    IoFailed,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::ValidationFailed => 2,
            Self::SolverFailed => 3,
            Self::IoFailed => 4,
        }
    }

    fn from_error(e: &KinvError) -> Self {
        match e.exit_code() {
            2 => Self::ValidationFailed,
            4 => Self::IoFailed,
            _ => Self::SolverFailed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Mms,
    Oracle,
    Stability,
    Alpha,
}

impl std::str::FromStr for Suite {
    type Err = KinvError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mms" => Ok(Self::Mms),
            "oracle" => Ok(Self::Oracle),
            "stability" => Ok(Self::Stability),
            "alpha" => Ok(Self::Alpha),
            other => Err(KinvError::Config(format!(
                "unknown suite `{other}`; expected mms, oracle, stability or alpha"
            ))),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mms => "mms",
            Self::Oracle => "oracle",
            Self::Stability => "stability",
            Self::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub wall_time: f64,
    /// File names relative to `output_dir`, excluding the manifest itself.
    pub artifact_list: Vec<String>,
    pub exit_status: ExitStatus,
    pub error: Option<String>,
    pub tolerances: Value,
    pub summary: Value,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        self.exit_status.code()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Treat validation warnings as errors.
    pub strict: bool,
}

/// Artifacts written so far.
struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| KinvError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| KinvError::io(&p, e))
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let body = serde_json::to_string_pretty(v).expect("serializable") + "\n";
        self.text(name, &body)
    }

    fn field3(&mut self, name: &str, f: &GridFunction3) -> Result<()> {
        let p = self.path(name);
        f.write_binary(p)
    }

    fn field2(&mut self, name: &str, f: &GridFunction2, csv: &str) -> Result<()> {
        let p = self.path(name);
        f.write_binary(p)?;
        let p = self.path(csv);
        f.write_csv(p)
    }
}

struct Outcome {
    summary: Value,
    tolerances: Value,
    /// A hard check failed after all artifacts were written.
    failed: Option<String>,
}

fn load(config: &Path, opts: RunOptions) -> Result<ProblemSpec> {
    let spec = ProblemSpec::load(config)?;
    for v in &spec.violations {
        match v.severity {
            Severity::Error => log::error!("{}: {}", v.code, v.message),
            Severity::Warning => log::warn!("{}: {}", v.code, v.message),
        }
    }
    spec.ensure_valid(opts.strict)?;
    Ok(spec)
}

fn solver_tolerances(s: &SolverConfig) -> Value {
    serde_json::to_value(s).expect("serializable")
}

fn exact_slice(spec: &ProblemSpec, text: &str) -> Result<GridFunction2> {
    let e = Expr::parse(text)?;
    let mut vals = Vec::with_capacity(spec.grid.slice_len());
    for &x in spec.grid.x_centers() {
        for &v in spec.grid.v_nodes() {
            vals.push(e.eval(&Bindings {
                x: Some(x),
                v: Some(v),
                t: None,
                vp: None,
            })?);
        }
    }
    GridFunction2::new(spec.grid.clone(), vals)
}

fn exact_field(spec: &ProblemSpec, text: &str) -> Result<GridFunction3> {
    let e = Expr::parse(text)?;
    let g = &spec.grid;
    let mut vals = Vec::with_capacity((g.nt() + 1) * g.slice_len());
    for k in 0..=g.nt() {
        for &x in g.x_centers() {
            for &v in g.v_nodes() {
                vals.push(e.at(x, v, g.time(k))?);
            }
        }
    }
    GridFunction3::new(g.clone(), vals)
}

fn forward_body(config: &Path, out: &mut Out, opts: RunOptions) -> Result<Outcome> {
    let spec = load(config, opts)?;
    if spec.mode != Mode::Forward {
        return Err(KinvError::Config(format!(
            "config mode is {}; use `kinv inverse`",
            spec.mode
        )));
    }
    let (u, picard) = solve_nonlinear_forward(&spec, &spec.source)?;
    let norms = u.norms();
    let bound = apriori_bound_terms(&spec, &spec.source);
    let ratio = if bound == 0.0 { 0.0 } else { norms.h_inf / bound };
    out.field3("u.bin", &u)?;
    out.field2("final.bin", &u.final_slice(), "final.csv")?;
    out.json(
        "norms.json",
        &json!({ "norms": norms, "apriori_bound": bound, "apriori_ratio": ratio }),
    )?;
    if !spec.is_linear() {
        out.json("picard.json", &picard)?;
    }
    let mut summary = json!({
        "sup_norm": norms.sup,
        "apriori_ratio": ratio,
        "picard_iterations": picard.iterations,
        "warnings": spec.violations,
    });
    if let Some(text) = spec.config.data.as_ref().and_then(|d| d.exact_u.as_ref()) {
        let err = u.sub(&exact_field(&spec, text)?).sup_norm();
        summary["exact_error"] = json!(err);
    }
    Ok(Outcome {
        summary,
        tolerances: solver_tolerances(&spec.solver),
        failed: None,
    })
}

fn inverse_body(config: &Path, out: &mut Out, opts: RunOptions) -> Result<Outcome> {
    let spec = load(config, opts)?;
    let op = InverseOperator::for_spec(&spec)?;
    let psi = spec.psi.clone().ok_or_else(|| KinvError::Config("psi required".into()))?;
    let res = op.solve(&psi)?;
    out.field2("control.bin", &res.control, "control.csv")?;
    out.field3("state.bin", &res.state)?;
    out.json("newton.json", &res.report)?;
    let mut csv = String::from("iteration,residual\n");
    csv.push_str(&format!("0,{:?}\n", res.report.initial_residual));
    for (k, r) in res.report.residual_history.iter().enumerate() {
        csv.push_str(&format!("{},{r:?}\n", k + 1));
    }
    out.text("residual_history.csv", &csv)?;
    let mut summary = json!({
        "kind": op.kind(),
        "newton_iterations": res.report.iterations,
        "final_residual": res.report.final_residual(),
        "control_sup_norm": res.control.sup_norm(),
        "warnings": spec.violations,
    });
    if let Some(text) = spec.config.data.as_ref().and_then(|d| d.exact_control.as_ref()) {
        let exact = exact_slice(&spec, text)?;
        let err = res.control.sub(&exact).sup_norm();
        let scale = exact.sup_norm();
        summary["exact_error"] = json!(err);
        summary["exact_relative_error"] = json!(if scale > 0.0 { err / scale } else { err });
    }
    Ok(Outcome {
        summary,
        tolerances: solver_tolerances(&spec.solver),
        failed: None,
    })
}

fn verify_mms(out: &mut Out) -> Result<Outcome> {
    let (nx, nv, nt) = MMS_BASE;
    let (lo, hi) = MMS_ORDER_BAND;
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for id in MMS_CASES {
        let table = convergence_study(id, MMS_REFINEMENTS, nx, nv, nt)?;
        out.text(&format!("mms_case{id}.csv"), &table.to_csv())?;
        let orders = table.orders();
        // the steady case is exact; its errors must stay at roundoff
        let passed = if id == 4 {
            orders.is_empty()
        } else {
            orders.len() == MMS_REFINEMENTS && orders.iter().all(|o| (lo..=hi).contains(o))
        };
        if !passed {
            failures.push(format!("case {id}"));
        }
        cases.push(json!({ "case": id, "passed": passed, "table": table }));
    }
    Ok(Outcome {
        summary: json!({ "cases": cases }),
        tolerances: json!({
            "order_band": [lo, hi],
            "refinements": MMS_REFINEMENTS,
            "base": { "Nx": nx, "Nv": nv, "Nt": nt },
        }),
        failed: (!failures.is_empty()).then(|| format!("mms orders out of band: {}", failures.join(", "))),
    })
}

fn need_config(config: Option<&Path>, suite: Suite) -> Result<&Path> {
    config.ok_or_else(|| KinvError::Config(format!("suite {} needs --config", suite.name())))
}

fn verify_oracle(config: &Path, out: &mut Out, opts: RunOptions) -> Result<Outcome> {
    let spec = load(config, opts)?;
    let psi = spec.psi.clone().ok_or_else(|| KinvError::Config("psi required".into()))?;
    let oracle = oracle_inverse(&spec, &psi)?;
    let newton = InverseOperator::for_spec(&spec)?.solve(&psi)?;
    let diff = newton.control.sub(&oracle.control);
    let max = diff.sup_norm();
    out.field2("oracle_control.bin", &oracle.control, "oracle_control.csv")?;
    out.text("oracle_discrepancy.csv", &diff.to_csv())?;
    let passed = max <= ORACLE_TOL;
    eprintln!("oracle: max discrepancy {max:e}, condition {:e}", oracle.system.conditioning);
    Ok(Outcome {
        summary: json!({
            "passed": passed,
            "max_discrepancy": max,
            "condition_number": oracle.system.conditioning,
            "newton_iterations": newton.report.iterations,
        }),
        tolerances: json!({ "discrepancy": ORACLE_TOL, "solver": solver_tolerances(&spec.solver) }),
        failed: (!passed).then(|| format!("Newton and dense oracle differ by {max:e}")),
    })
}

fn verify_stability(config: &Path, out: &mut Out, opts: RunOptions) -> Result<Outcome> {
    let spec = load(config, opts)?;
    let family = random_psi_family(&spec.grid, STABILITY_MEMBERS, STABILITY_SEED);
    let rep = stability_estimate(&spec, &family)?;
    let mut csv = String::from("member,ratio\n");
    let mut k = 0;
    for i in 0..family.len() {
        if rep.skipped.iter().any(|s| s.index == i) {
            csv.push_str(&format!("{i},n/a\n"));
        } else {
            csv.push_str(&format!("{i},{:?}\n", rep.ratios[k]));
            k += 1;
        }
    }
    out.text("stability.csv", &csv)?;
    let spread_ok = match (rep.c_bar, rep.median) {
        (Some(c), Some(m)) => c.is_finite() && c <= STABILITY_SPREAD * m,
        _ => false,
    };
    Ok(Outcome {
        summary: json!({ "passed": spread_ok, "report": rep }),
        tolerances: json!({
            "members": STABILITY_MEMBERS,
            "seed": STABILITY_SEED,
            "spread": STABILITY_SPREAD,
            "solver": solver_tolerances(&spec.solver),
        }),
        failed: (!spread_ok).then(|| "stability constant not finite or spread too wide".to_string()),
    })
}

fn verify_alpha(config: Option<&Path>, out: &mut Out, opts: RunOptions) -> Result<Outcome> {
    let mut families = vec![
        AlphaSpec::Zero,
        AlphaSpec::SoftAbs { c: 1.0 },
        AlphaSpec::CubicSaturating { c: 1.0 },
    ];
    if let Some(p) = config {
        let a = load(p, opts)?.alpha;
        if !families.contains(&a) {
            families.push(a);
        }
    }
    let checks: Vec<_> = families
        .iter()
        .map(|a| check_alpha(a, ALPHA_SAMPLES, ALPHA_FD_TOL))
        .collect();
    let mut csv = String::from("family,c1,c2,samples,bound_violations,origin_ok,max_fd_rel_error,passed\n");
    for (a, c) in families.iter().zip(&checks) {
        csv.push_str(&format!(
            "{},{:?},{:?},{},{},{},{:?},{}\n",
            c.family,
            a.c1(),
            a.c2(),
            c.samples,
            c.bound_violations,
            c.origin_ok,
            c.max_fd_rel_error,
            c.passed
        ));
    }
    out.text("alpha.csv", &csv)?;
    let passed = checks.iter().all(|c| c.passed);
    Ok(Outcome {
        summary: json!({ "passed": passed, "checks": checks }),
        tolerances: json!({ "samples": ALPHA_SAMPLES, "fd_relative": ALPHA_FD_TOL }),
        failed: (!passed).then(|| "alpha conditions violated".to_string()),
    })
}

fn finish(
    command: String,
    config: Option<&Path>,
    out_dir: &Path,
    start: Instant,
    out: Option<Out>,
    result: Result<Outcome>,
) -> RunManifest {
    let mut artifact_list = out.map(|o| o.files).unwrap_or_default();
    let (exit_status, error, tolerances, summary) = match result {
        Ok(o) => {
            let status = if o.failed.is_some() {
                ExitStatus::SolverFailed
            } else {
                ExitStatus::Ok
            };
            (status, o.failed, o.tolerances, o.summary)
        }
        Err(e) => {
            let violations = match &e {
                KinvError::Validation(v) => json!(v),
                _ => Value::Null,
            };
            (
                ExitStatus::from_error(&e),
                Some(e.to_string()),
                Value::Null,
                json!({ "violations": violations }),
            )
        }
    };
    // only files that made it to disk are listed
    artifact_list.retain(|f| out_dir.join(f).is_file());
    let manifest = RunManifest {
        command,
        config_path: config.map(Path::to_path_buf),
        output_dir: out_dir.to_path_buf(),
        wall_time: start.elapsed().as_secs_f64(),
        artifact_list,
        exit_status,
        error,
        tolerances,
        summary,
    };
    if out_dir.is_dir() {
        let body = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        if let Err(e) = fs::write(out_dir.join(MANIFEST), body) {
            log::error!("could not write manifest: {e}");
        }
    }
    manifest
}

fn run(
    command: String,
    config: Option<&Path>,
    out_dir: &Path,
    body: impl FnOnce(&mut Out) -> Result<Outcome>,
) -> RunManifest {
    let start = Instant::now();
    match Out::new(out_dir) {
        Ok(mut out) => {
            let result = body(&mut out);
            finish(command, config, out_dir, start, Some(out), result)
        }
        Err(e) => finish(command, config, out_dir, start, None, Err(e)),
    }
}

/// Solves the direct problem; writes `u.bin`, `final.bin`, `final.csv`,
/// `norms.json` and, when nonlinear, `picard.json`.
pub fn cmd_forward(config: &Path, out_dir: &Path, opts: RunOptions) -> RunManifest {
    run("forward".into(), Some(config), out_dir, |out| forward_body(config, out, opts))
}

/// Solves the inverse problem; writes `control.bin`, `control.csv`,
/// `state.bin`, `newton.json` and `residual_history.csv`.
pub fn cmd_inverse(config: &Path, out_dir: &Path, opts: RunOptions) -> RunManifest {
    run("inverse".into(), Some(config), out_dir, |out| inverse_body(config, out, opts))
}

/// Runs a verification suite; writes its CSV tables and `verify.json`.
pub fn cmd_verify(suite: Suite, config: Option<&Path>, out_dir: &Path, opts: RunOptions) -> RunManifest {
    run(format!("verify {}", suite.name()), config, out_dir, |out| {
        let outcome = match suite {
            Suite::Mms => verify_mms(out),
            Suite::Oracle => verify_oracle(need_config(config, suite)?, out, opts),
            Suite::Stability => verify_stability(need_config(config, suite)?, out, opts),
            Suite::Alpha => verify_alpha(config, out, opts),
        }?;
        let passed = outcome.failed.is_none();
        out.json(
            "verify.json",
            &json!({ "suite": suite.name(), "passed": passed, "summary": outcome.summary }),
        )?;
        Ok(outcome)
    })
}
