//! Independent checks: the dense matrix of the linear map `M`, a direct
//! inverse through it, and manufactured solutions for convergence studies.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KinvError, Result};
use crate::field::{GridFunction2, GridFunction3};
use crate::geometry::Geometry;
use crate::inverse::InverseOperator;
use crate::model::{AlphaSpec, Expr, Mode, ProblemConfig, ProblemSpec, QTermConfig};
use crate::nonlinear::solve_nonlinear_forward;

/// Condition number above which the discrete inverse problem is declared
/// ill-posed at the given resolution.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Affine map `flatten(χ) ↦ matrix · flatten(χ) + offset = flatten(M(χ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub offset: GridFunction2,
    /// Ratio of extreme singular values.
    pub conditioning: f64,
}

impl DenseSystem {
    /// `matrix · χ + offset`.
    pub fn apply(&self, chi: &GridFunction2) -> GridFunction2 {
        let y = &self.matrix * DVector::from_column_slice(chi.values());
        let values = y.iter().zip(self.offset.values()).map(|(y, o)| y + o).collect();
        GridFunction2::new(chi.grid().clone(), values).expect("shape preserved")
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Columns `M(e_p) − M(0)` by direct forward solves, in parallel.
pub fn assemble_dense(spec: &ProblemSpec) -> Result<DenseSystem> {
    if !spec.is_linear() {
        return Err(KinvError::Nonlinear(format!(
            "dense assembly requires a linear map, alpha is {}",
            spec.alpha.name()
        )));
    }
    let op = InverseOperator::for_spec(spec)?;
    let grid = op.grid().clone();
    let n = grid.slice_len();
    let offset = op.forward(&GridFunction2::zeros(grid.clone()))?.0;
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            op.forward(&GridFunction2::unit(grid.clone(), p))
                .map(|(m, _)| m.sub(&offset).into_values())
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(n, n, |r, c| cols[c][r]);
    let conditioning = condition_number(&matrix);
    Ok(DenseSystem {
        matrix,
        offset,
        conditioning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `χ / g(T)`.
    pub control: GridFunction2,
    pub chi: GridFunction2,
    pub system: DenseSystem,
}

/// Solves `matrix · χ = ψ − offset` directly.
pub fn oracle_inverse(spec: &ProblemSpec, psi: &GridFunction2) -> Result<OracleSolution> {
    let system = assemble_dense(spec)?;
    if !(system.conditioning <= CONDITION_LIMIT) {
        return Err(KinvError::IllConditioned(system.conditioning));
    }
    let op = InverseOperator::for_spec(spec)?;
    let b = DVector::from_column_slice(psi.sub(&system.offset).values());
    let x = system
        .matrix
        .clone()
        .lu()
        .solve(&b)
        .ok_or(KinvError::IllConditioned(f64::INFINITY))?;
    let chi = GridFunction2::new(op.grid().clone(), x.as_slice().to_vec())?;
    Ok(OracleSolution {
        control: op.control_from_chi(&chi),
        chi,
        system,
    })
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson_nodes(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// `∫_0^T ∫_G ∫_V f(x, v, t)` by tensor Simpson with `n` panels per
/// interval (each velocity band separately).
fn simpson3(geom: &Geometry, n: usize, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let xs = simpson_nodes(0.0, geom.length, n);
    let ts = simpson_nodes(0.0, geom.final_time, n);
    let mut vs = simpson_nodes(-geom.v1, -geom.v0, n);
    vs.extend(simpson_nodes(geom.v0, geom.v1, n));
    let mut acc = 0.0;
    for &(t, wt) in &ts {
        for &(x, wx) in &xs {
            for &(v, wv) in &vs {
                acc += wt * wx * wv * f(x, v, t);
            }
        }
    }
    acc
}

/// Panels per interval for the reference quadrature of the nonlinear case.
const QUAD_PANELS: usize = 48;
/// Allowed relative change of that quadrature under 4× refinement.
const QUAD_CHANGE: f64 = 1e-6;

/// A manufactured solution: the forward problem in `config` has the exact
/// solution `exact_u` when driven by `forcing`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmsCase {
    pub id: usize,
    pub description: &'static str,
    pub config: ProblemConfig,
    pub exact_u: Expr,
    /// The source `F*`.
    pub forcing: Expr,
    /// Set for the nonlinear case: `∫∫∫ q2 α(u*)` at base and 4× quadrature.
    pub quadrature: Option<(f64, f64)>,
}

pub const MMS_CASES: [usize; 4] = [1, 2, 3, 4];

fn expr(text: &str) -> Expr {
    Expr::parse(text).expect("catalog expressions parse")
}

/// Case catalog. Cases 1 to 3 converge at first order; case 4 is exactly
/// representable.
pub fn mms_case(id: usize) -> Result<MmsCase> {
    let geom = Geometry::new(1.0, 1.0, 2.0, 0.5)?;
    let mut config = ProblemConfig::new(geom, 16, 4, 16, Mode::Forward);
    let u_star = "t*sin(pi*x)";
    let (description, exact, forcing, quadrature) = match id {
        1 => {
            let f = "sin(pi*x) + v*t*pi*cos(pi*x)";
            ("advection only, u = t sin(pi x / L)", u_star.to_string(), f.to_string(), None)
        }
        2 => {
            let j0 = 0.5;
            let meas = geom.velocity_measure();
            config.coefficients.j = Some(format!("{j0:?}"));
            let f = format!("sin(pi*x) + v*t*pi*cos(pi*x) - {:?}*t*sin(pi*x)", j0 * meas);
            ("constant scattering J = 0.5, v-independent u", u_star.to_string(), f, None)
        }
        3 => {
            let alpha = AlphaSpec::SoftAbs { c: 0.5 };
            let (q1, q2) = ("1 + 0.5*x", "cos(x)*(1 + 0.1*v)");
            config.coefficients.alpha = alpha;
            config.coefficients.q = vec![QTermConfig {
                q1: q1.into(),
                q2: q2.into(),
            }];
            let (e_u, e_q2) = (expr(u_star), expr(q2));
            let integrand = |x: f64, v: f64, t: f64| {
                let u = e_u.at(x, v, t).expect("finite");
                e_q2.at(x, v, t).expect("finite") * alpha.value(u)
            };
            let coarse = simpson3(&geom, QUAD_PANELS, integrand);
            let fine = simpson3(&geom, 4 * QUAD_PANELS, integrand);
            let change = ((fine - coarse) / fine).abs();
            if !(change <= QUAD_CHANGE) {
                return Err(KinvError::Nonlinear(format!(
                    "reference quadrature changed by {change:e} under refinement"
                )));
            }
            let f = format!("sin(pi*x) + v*t*pi*cos(pi*x) + ({q1})*{fine:?}");
            ("softabs c = 0.5 with separable Q, S(u) by quadrature", u_star.to_string(), f, Some((coarse, fine)))
        }
        4 => {
            let (c, j0) = (2.0, 0.5);
            config.coefficients.j = Some(format!("{j0:?}"));
            config.coefficients.phi = Some(format!("{c:?}"));
            config.coefficients.mu = Some(format!("{c:?}"));
            let f = format!("-{:?}", j0 * geom.velocity_measure() * c);
            ("steady constant u = 2", format!("{c:?}"), f, None)
        }
        _ => {
            return Err(KinvError::Config(format!(
                "unknown MMS case {id}; known cases are {MMS_CASES:?}"
            )))
        }
    };
    config.coefficients.source = Some(forcing.clone());
    Ok(MmsCase {
        id,
        description,
        config,
        exact_u: expr(&exact),
        forcing: expr(&forcing),
        quadrature,
    })
}

impl MmsCase {
    /// Problem at the given resolution.
    pub fn spec(&self, nx: usize, nv: usize, nt: usize) -> Result<ProblemSpec> {
        let mut c = self.config.clone();
        c.grid.nx = nx;
        c.grid.nv = nv;
        c.grid.nt = nt;
        ProblemSpec::from_config(c, ".")
    }

    /// `max |u − u*|` over all nodes.
    pub fn error(&self, spec: &ProblemSpec) -> Result<f64> {
        let (u, _) = solve_nonlinear_forward(spec, &spec.source)?;
        let exact = GridFunction3::new(spec.grid.clone(), {
            let mut vals = Vec::with_capacity(u.values().len());
            for k in 0..=spec.grid.nt() {
                let t = spec.grid.time(k);
                for &x in spec.grid.x_centers() {
                    for &v in spec.grid.v_nodes() {
                        vals.push(self.exact_u.at(x, v, t)?);
                    }
                }
            }
            vals
        })?;
        Ok(u.sub(&exact).sup_norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub error: f64,
    /// `log₂(e_prev / e)`; absent on the first row and at machine precision.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub case: usize,
    pub rows: Vec<ConvergenceRow>,
}

/// Errors at or below this count as exact.
pub const MACHINE_ERROR: f64 = 1e-12;

impl ConvergenceTable {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,error,order\n");
        for r in &self.rows {
            let order = r.order.map_or_else(|| "n/a".to_string(), |o| format!("{o:?}"));
            s.push_str(&format!("{:?},{:?},{order}\n", r.h, r.error));
        }
        s
    }
}

/// Runs a case at `(Nx, Nt)` doubled jointly `refinements` times from
/// `(nx, nt)`, with `nv` fixed.
pub fn convergence_study(case: usize, refinements: usize, nx: usize, nv: usize, nt: usize) -> Result<ConvergenceTable> {
    if refinements < 2 {
        return Err(KinvError::Config("convergence study needs at least 2 refinements".into()));
    }
    let mms = mms_case(case)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in 0..=refinements {
        let (nx, nt) = (nx << level, nt << level);
        let spec = mms.spec(nx, nv, nt)?;
        let error = mms.error(&spec)?;
        let order = rows.last().and_then(|prev| {
            (prev.error > MACHINE_ERROR && error > MACHINE_ERROR).then(|| (prev.error / error).log2())
        });
        log::info!("mms case {case}: nx={nx} nt={nt} error={error:e}");
        rows.push(ConvergenceRow {
            nx,
            nt,
            h: spec.grid.dx(),
            error,
            order,
        });
    }
    Ok(ConvergenceTable { case, rows })
}
