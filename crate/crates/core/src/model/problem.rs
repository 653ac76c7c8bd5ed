//! Problem configuration (JSON) and the materialized problem on a grid.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::alpha::AlphaSpec;
use super::expr::{Bindings, Expr, Var};
use super::validate::{validate_problem, Severity, Violation};
use crate::error::{KinvError, Result};
use crate::field::{GridFunction2, GridFunction3};
use crate::geometry::{Geometry, PhaseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Forward,
    InverseSource,
    InverseAbsorption,
}

impl Mode {
    pub fn is_inverse(self) -> bool {
        !matches!(self, Mode::Forward)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Forward => "forward",
            Mode::InverseSource => "inverse_source",
            Mode::InverseAbsorption => "inverse_absorption",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "Nv")]
    pub nv: usize,
    #[serde(rename = "Nt")]
    pub nt: usize,
}

/// A coefficient given either as an expression or as a binary dump on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Expr(String),
    File { file: PathBuf },
}

impl From<&str> for FieldSource {
    fn from(s: &str) -> Self {
        FieldSource::Expr(s.to_string())
    }
}

/// One separable term `q1(x, v, t) · q2(x′, v′)` of the kernel `Q`.
/// `q2` is written in the variables `x`, `v` standing for `x′`, `v′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTermConfig {
    pub q1: String,
    pub q2: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    /// Absorption coefficient `Σ(x, v, t)`. In absorption mode this is the
    /// Newton prior.
    #[serde(rename = "Sigma", default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    /// `σ(x, v)` with `Σ = σ g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_g: Option<String>,
    /// Scattering kernel `J(x, v, t, vp)`, weighting transfer from `vp` to `v`.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<String>,
    #[serde(rename = "Q", default, skip_serializing_if = "Vec::is_empty")]
    pub q: Vec<QTermConfig>,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<FieldSource>,
    /// Full source `F(x, v, t)`.
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Stationary factor `f(x, v)` with `F = f g + h`.
    #[serde(rename = "f", default, skip_serializing_if = "Option::is_none")]
    pub source_factor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<FieldSource>,
    /// Known solution `u(x, v, t)`; `kinv forward` reports the error against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_u: Option<String>,
    /// Known control `f` or `σ` over `(x, v)`; `kinv inverse` reports the error against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_control: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    /// Dense up to `dense_limit` unknowns, Krylov above.
    #[default]
    Auto,
    Dense,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub newton_tol: f64,
    pub max_picard: usize,
    pub max_newton: usize,
    pub newton_damping: bool,
    /// Lower bound demanded of `|g(x, v, T)|` in inverse modes.
    pub g0: f64,
    /// Lower bound demanded of `|u0(x, v, T)|` in absorption mode.
    pub u_min: f64,
    /// Optional lower bound on `|Σ(x, v, T)|` for recovered absorption.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    pub jacobian: JacobianMethod,
    pub dense_limit: usize,
    pub krylov_tol: f64,
    pub krylov_restart: usize,
    pub krylov_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-10,
            newton_tol: 1e-10,
            max_picard: 50,
            max_newton: 20,
            newton_damping: true,
            g0: 1e-8,
            u_min: 1e-8,
            sigma0: None,
            jacobian: JacobianMethod::Auto,
            dense_limit: 4096,
            krylov_tol: 1e-13,
            krylov_restart: 60,
            krylov_max_iter: 2000,
        }
    }
}

/// The JSON problem description, as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub geometry: Geometry,
    pub grid: GridConfig,
    pub mode: Mode,
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub strict: bool,
}

impl ProblemConfig {
    pub fn new(geometry: Geometry, nx: usize, nv: usize, nt: usize, mode: Mode) -> Self {
        Self {
            geometry,
            grid: GridConfig { nx, nv, nt },
            mode,
            coefficients: CoefficientsConfig::default(),
            data: None,
            solver: SolverConfig::default(),
            strict: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| KinvError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_psi(&mut self, psi: impl Into<FieldSource>) {
        self.data.get_or_insert_with(DataConfig::default).psi = Some(psi.into());
    }
}

/// Scattering kernel sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Scattering {
    Zero,
    /// `J ≡ c`.
    Constant(f64),
    /// Values laid out `[time][space][v][v′]`.
    Full(Vec<f64>),
}

impl Scattering {
    /// `∫_V J(x_i, v_j, t_k, v′) u(x_i, v′) dv′` for every ordinate `j`, written to `out`.
    pub fn apply_row(&self, grid: &PhaseGrid, k: usize, i: usize, u_row: &[f64], out: &mut [f64]) {
        let w = grid.v_weights();
        match self {
            Scattering::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Scattering::Constant(c) => {
                let total: f64 = u_row.iter().zip(w).map(|(u, w)| w * u).sum();
                out.iter_mut().for_each(|o| *o = c * total);
            }
            Scattering::Full(vals) => {
                let nv = grid.nv();
                let base = (k * grid.nx() + i) * nv * nv;
                for (j, o) in out.iter_mut().enumerate() {
                    let row = &vals[base + j * nv..base + (j + 1) * nv];
                    *o = scattering_integral(u_row, row, w);
                }
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Scattering::Zero => 0.0,
            Scattering::Constant(c) => c.abs(),
            Scattering::Full(v) => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }
}

/// Weighted dot product `Σ_j w_j J_j u_j`, summed in index order.
pub fn scattering_integral(u_slice: &[f64], j_row: &[f64], weights: &[f64]) -> f64 {
    debug_assert!(u_slice.len() == j_row.len() && j_row.len() == weights.len());
    let mut acc = 0.0;
    for ((u, j), w) in u_slice.iter().zip(j_row).zip(weights) {
        acc += w * j * u;
    }
    acc
}

/// Sampled separable kernel term.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub q1: GridFunction3,
    pub q2: GridFunction2,
}

/// Parsed coefficient expressions, kept for checks at exact boundary points.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExprs {
    pub mu: Expr,
    pub phi: Expr,
    pub g: Expr,
    pub h: Expr,
    pub psi: Option<Expr>,
}

/// A problem materialized on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub config: ProblemConfig,
    pub base_dir: PathBuf,
    pub grid: Arc<PhaseGrid>,
    pub mode: Mode,
    pub alpha: AlphaSpec,
    /// `Σ`; the prior in absorption mode.
    pub sigma: GridFunction3,
    pub scattering: Scattering,
    pub q_terms: Vec<SeparableTerm>,
    pub g: GridFunction3,
    pub h: GridFunction3,
    pub u0: GridFunction3,
    /// Known source `F`, zero when absent (and unused in source mode).
    pub source: GridFunction3,
    /// Inflow data `μ` at the inflow face, laid out `[time][ordinate]`.
    pub inflow: Vec<f64>,
    /// Initial data `φ`.
    pub initial: GridFunction2,
    pub psi: Option<GridFunction2>,
    pub exprs: CoefficientExprs,
    pub solver: SolverConfig,
    pub violations: Vec<Violation>,
}

fn parse(name: &str, text: &str) -> Result<Expr> {
    Expr::parse(text).map_err(|e| KinvError::Config(format!("coefficient `{name}`: {e}")))
}

fn parse_or(name: &str, text: Option<&String>, default: &str) -> Result<Expr> {
    parse(name, text.map(String::as_str).unwrap_or(default))
}

fn sample3(name: &str, e: &Expr, grid: &Arc<PhaseGrid>) -> Result<GridFunction3> {
    let mut values = Vec::with_capacity((grid.nt() + 1) * grid.slice_len());
    for k in 0..=grid.nt() {
        let t = grid.time(k);
        for &x in grid.x_centers() {
            for &v in grid.v_nodes() {
                values.push(
                    e.at(x, v, t)
                        .map_err(|err| KinvError::Config(format!("coefficient `{name}` at (x={x}, v={v}, t={t}): {err}")))?,
                );
            }
        }
    }
    Ok(GridFunction3::from_raw(grid.clone(), values))
}

fn sample2(name: &str, e: &Expr, grid: &Arc<PhaseGrid>) -> Result<GridFunction2> {
    if e.uses(Var::T) {
        return Err(KinvError::Config(format!("coefficient `{name}` must not depend on t")));
    }
    let mut values = Vec::with_capacity(grid.slice_len());
    for &x in grid.x_centers() {
        for &v in grid.v_nodes() {
            let b = Bindings {
                x: Some(x),
                v: Some(v),
                t: None,
                vp: None,
            };
            values.push(
                e.eval(&b)
                    .map_err(|err| KinvError::Config(format!("coefficient `{name}` at (x={x}, v={v}): {err}")))?,
            );
        }
    }
    Ok(GridFunction2::from_raw(grid.clone(), values))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn reject_vp(name: &str, e: &Expr) -> Result<()> {
    if e.uses(Var::Vp) {
        Err(KinvError::Config(format!("coefficient `{name}` must not use vp")))
    } else {
        Ok(())
    }
}

impl ProblemSpec {
    /// Builds and validates a problem; relative file paths resolve against `base_dir`.
    pub fn from_config(config: ProblemConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        let gc = config.grid;
        let grid = Arc::new(PhaseGrid::build(config.geometry, gc.nx, gc.nv, gc.nt)?);
        let c = &config.coefficients;
        let mode = config.mode;
        c.alpha.check()?;
        check_solver(&config.solver)?;

        let g_expr = parse_or("g", c.g.as_ref(), "1")?;
        let h_expr = parse_or("h", c.h.as_ref(), "0")?;
        let mu_expr = parse_or("mu", c.mu.as_ref(), "0")?;
        let phi_expr = parse_or("phi", c.phi.as_ref(), "0")?;
        for (n, e) in [("g", &g_expr), ("h", &h_expr), ("mu", &mu_expr), ("phi", &phi_expr)] {
            reject_vp(n, e)?;
        }
        let g = sample3("g", &g_expr, &grid)?;
        let h = sample3("h", &h_expr, &grid)?;
        let initial = sample2("phi", &phi_expr, &grid)?;

        let sigma = match (&c.sigma, &c.sigma_g) {
            (Some(_), Some(_)) => {
                return Err(KinvError::Config("give at most one of `Sigma` and `sigma_g`".into()))
            }
            (Some(s), None) => {
                let e = parse("Sigma", s)?;
                reject_vp("Sigma", &e)?;
                sample3("Sigma", &e, &grid)?
            }
            (None, Some(s)) => {
                let e = parse("sigma_g", s)?;
                reject_vp("sigma_g", &e)?;
                sample2("sigma_g", &e, &grid)?;
                sample3("sigma_g", &e, &grid)?.mul(&g)
            }
            (None, None) => GridFunction3::zeros(grid.clone()),
        };

        let scattering = match &c.j {
            None => Scattering::Zero,
            Some(s) => {
                let e = parse("J", s)?;
                sample_scattering(&e, &grid)?
            }
        };

        let mut q_terms = Vec::with_capacity(c.q.len());
        for (n, term) in c.q.iter().enumerate() {
            let e1 = parse(&format!("Q[{n}].q1"), &term.q1)?;
            let e2 = parse(&format!("Q[{n}].q2"), &term.q2)?;
            reject_vp("q1", &e1)?;
            reject_vp("q2", &e2)?;
            q_terms.push(SeparableTerm {
                q1: sample3("q1", &e1, &grid)?,
                q2: sample2("q2", &e2, &grid)?,
            });
        }

        let u0 = match &c.u0 {
            None => GridFunction3::zeros(grid.clone()),
            Some(FieldSource::Expr(s)) => {
                let e = parse("u0", s)?;
                reject_vp("u0", &e)?;
                sample3("u0", &e, &grid)?
            }
            Some(FieldSource::File { file }) => {
                GridFunction3::read_binary(grid.clone(), resolve(&base_dir, file))?
            }
        };

        let source = match (&c.source, &c.source_factor) {
            (Some(_), Some(_)) => {
                return Err(KinvError::Config("give at most one of `F` and `f`".into()))
            }
            (Some(s), None) => {
                let e = parse("F", s)?;
                reject_vp("F", &e)?;
                sample3("F", &e, &grid)?
            }
            (None, Some(s)) => {
                let e = parse("f", s)?;
                reject_vp("f", &e)?;
                sample2("f", &e, &grid)?;
                sample3("f", &e, &grid)?.mul(&g).add(&h)
            }
            (None, None) => GridFunction3::zeros(grid.clone()),
        };

        let mut inflow = Vec::with_capacity((grid.nt() + 1) * grid.nv());
        for k in 0..=grid.nt() {
            let t = grid.time(k);
            for j in 0..grid.nv() {
                let x = grid.boundary_coordinate(grid.inflow_side(j));
                let v = grid.v_nodes()[j];
                inflow.push(
                    mu_expr
                        .at(x, v, t)
                        .map_err(|e| KinvError::Config(format!("coefficient `mu`: {e}")))?,
                );
            }
        }

        let psi_source = config.data.as_ref().and_then(|d| d.psi.as_ref());
        if mode.is_inverse() && psi_source.is_none() {
            return Err(KinvError::Config("psi required".into()));
        }
        let (psi, psi_expr) = match psi_source {
            None => (None, None),
            Some(FieldSource::Expr(s)) => {
                let e = parse("psi", s)?;
                reject_vp("psi", &e)?;
                (Some(sample2("psi", &e, &grid)?), Some(e))
            }
            Some(FieldSource::File { file }) => (
                Some(GridFunction2::read_binary(grid.clone(), resolve(&base_dir, file))?),
                None,
            ),
        };

        let mut spec = Self {
            alpha: c.alpha,
            solver: config.solver,
            mode,
            grid,
            sigma,
            scattering,
            q_terms,
            g,
            h,
            u0,
            source,
            inflow,
            initial,
            psi,
            exprs: CoefficientExprs {
                mu: mu_expr,
                phi: phi_expr,
                g: g_expr,
                h: h_expr,
                psi: psi_expr,
            },
            violations: Vec::new(),
            base_dir,
            config,
        };
        spec.violations = validate_problem(&spec);
        Ok(spec)
    }

    /// Reads, builds, and validates a config file.
    ///
    /// With `"strict": true`, error-severity violations become an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KinvError::io(path, e))?;
        let config = ProblemConfig::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let spec = Self::from_config(config, base)?;
        if spec.config.strict {
            spec.ensure_valid(false)?;
        }
        Ok(spec)
    }

    /// Fails on error-severity violations, and on warnings too when `warnings_fatal`.
    pub fn ensure_valid(&self, warnings_fatal: bool) -> Result<()> {
        let fatal: Vec<Violation> = self
            .violations
            .iter()
            .filter(|v| warnings_fatal || v.severity == Severity::Error)
            .cloned()
            .collect();
        if fatal.is_empty() {
            Ok(())
        } else {
            Err(KinvError::Validation(fatal))
        }
    }

    pub fn to_json(&self) -> String {
        self.config.to_json()
    }

    /// Same problem with different final-time data.
    pub fn with_psi(&self, psi: GridFunction2) -> Self {
        let mut s = self.clone();
        s.psi = Some(psi);
        s.exprs.psi = None;
        s.violations = validate_problem(&s);
        s
    }

    /// Same problem with a different nonlinearity.
    pub fn with_alpha(&self, alpha: AlphaSpec) -> Self {
        let mut s = self.clone();
        s.alpha = alpha;
        s.config.coefficients.alpha = alpha;
        s
    }

    /// Same problem with every `q1` multiplied by `factor`.
    pub fn with_kernel_scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for t in &mut s.q_terms {
            t.q1 = t.q1.scale(factor);
        }
        s
    }

    pub fn with_solver(&self, solver: SolverConfig) -> Self {
        let mut s = self.clone();
        s.solver = solver;
        s.config.solver = solver;
        s
    }

    /// True when `S` vanishes identically.
    pub fn is_linear(&self) -> bool {
        self.alpha.is_zero() || self.q_terms.is_empty()
    }

    /// Inflow value for ordinate `j` at time level `k`.
    pub fn inflow_at(&self, k: usize, j: usize) -> f64 {
        self.inflow[k * self.grid.nv() + j]
    }

    /// `C1 · Σ_terms ‖q1‖ ‖q2‖ · |G| |V| T`, the Lipschitz constant of `S` in
    /// the sup norm.
    pub fn kernel_smallness(&self) -> f64 {
        let geom = self.grid.geometry();
        let meas = geom.length * geom.velocity_measure() * geom.final_time;
        let q: f64 = self
            .q_terms
            .iter()
            .map(|t| t.q1.sup_norm() * t.q2.sup_norm())
            .sum();
        self.alpha.c1() * q * meas
    }
}

fn check_solver(s: &SolverConfig) -> Result<()> {
    let positive = |name: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(KinvError::Config(format!("solver.{name} must be positive")))
        }
    };
    positive("picard_tol", s.picard_tol)?;
    positive("newton_tol", s.newton_tol)?;
    positive("g0", s.g0)?;
    positive("u_min", s.u_min)?;
    positive("krylov_tol", s.krylov_tol)?;
    if s.max_picard == 0 || s.max_newton == 0 || s.krylov_restart == 0 {
        return Err(KinvError::Config("iteration limits must be at least 1".into()));
    }
    Ok(())
}

fn sample_scattering(e: &Expr, grid: &Arc<PhaseGrid>) -> Result<Scattering> {
    let constant = ![Var::X, Var::V, Var::T, Var::Vp].iter().any(|&v| e.uses(v));
    if constant {
        let c = e.eval(&Bindings::default())?;
        return Ok(if c == 0.0 {
            Scattering::Zero
        } else {
            Scattering::Constant(c)
        });
    }
    let nv = grid.nv();
    let mut vals = Vec::with_capacity((grid.nt() + 1) * grid.nx() * nv * nv);
    for k in 0..=grid.nt() {
        let t = grid.time(k);
        for &x in grid.x_centers() {
            for &v in grid.v_nodes() {
                for &vp in grid.v_nodes() {
                    vals.push(
                        e.eval(&Bindings::xvt(x, v, t).with_vp(vp))
                            .map_err(|err| KinvError::Config(format!("coefficient `J`: {err}")))?,
                    );
                }
            }
        }
    }
    Ok(Scattering::Full(vals))
}
