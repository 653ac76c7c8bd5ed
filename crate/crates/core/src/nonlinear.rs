//! The global space-time operator `S(u)` and the nonlinear forward solve.
//!
//! `S(u)(x, v, t) = Σ_terms q1(x, v, t) · ∫∫∫ q2(x′, v′) α(u(x′, v′, t′))`.
//! Because the kernel is separable, the triple integral is one scalar per
//! term, evaluated once and broadcast. It couples all of `[0, T]`, so the
//! direct problem is solved by Picard iteration over the whole space-time
//! field rather than step by step.

use serde::Serialize;

use crate::error::{KinvError, Result};
use crate::field::GridFunction3;
use crate::forward::transport_solve;
use crate::model::{ProblemSpec, SeparableTerm};

/// Consecutive residual increases that count as divergence.
const DIVERGENCE_RUN: usize = 3;

/// Residuals below this multiple of `ε ‖u‖_∞` are roundoff and count as converged.
const ROUNDOFF: f64 = 16.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// `‖uᵐ⁺¹ − uᵐ‖_∞` per iteration.
    pub residual_history: Vec<f64>,
    /// Quotients of successive residuals.
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
}

impl PicardReport {
    fn linear() -> Self {
        Self {
            iterations: 1,
            residual_history: vec![0.0],
            contraction_ratios: Vec::new(),
            converged: true,
        }
    }
}

/// `Σ_{k,i,j} w_t dx w_v q2(x_i, v_j) integrand(k, i, j)` in fixed order.
fn term_integral(spec: &ProblemSpec, term: &SeparableTerm, integrand: impl Fn(usize) -> f64) -> f64 {
    let grid = &spec.grid;
    let (nx, nv) = (grid.nx(), grid.nv());
    let tw = grid.time_weights();
    let vw = grid.v_weights();
    let dx = grid.dx();
    let q2 = term.q2.values();
    let mut acc = 0.0;
    for (k, &wt) in tw.iter().enumerate() {
        let base = k * nx * nv;
        for i in 0..nx {
            for j in 0..nv {
                let p = i * nv + j;
                acc += wt * dx * vw[j] * q2[p] * integrand(base + p);
            }
        }
    }
    acc
}

fn broadcast(spec: &ProblemSpec, scalars: &[f64]) -> GridFunction3 {
    let mut out = GridFunction3::zeros(spec.grid.clone());
    let vals = out.values_mut();
    for (term, &s) in spec.q_terms.iter().zip(scalars) {
        for (o, q1) in vals.iter_mut().zip(term.q1.values()) {
            *o += q1 * s;
        }
    }
    out
}

/// Per-term scalars `∫∫∫ q2 α(u)`.
pub fn s_moments(u: &GridFunction3, spec: &ProblemSpec) -> Vec<f64> {
    let a = spec.alpha;
    let vals = u.values();
    spec.q_terms
        .iter()
        .map(|t| term_integral(spec, t, |p| a.value(vals[p])))
        .collect()
}

pub fn apply_s(u: &GridFunction3, spec: &ProblemSpec) -> GridFunction3 {
    if spec.is_linear() {
        return GridFunction3::zeros(spec.grid.clone());
    }
    broadcast(spec, &s_moments(u, spec))
}

/// Fréchet derivative `S′(u)[du]`: integrand `α′(u) du`.
pub fn apply_s_derivative(u: &GridFunction3, du: &GridFunction3, spec: &ProblemSpec) -> GridFunction3 {
    if spec.is_linear() {
        return GridFunction3::zeros(spec.grid.clone());
    }
    let a = spec.alpha;
    let (uv, dv) = (u.values(), du.values());
    let scalars: Vec<f64> = spec
        .q_terms
        .iter()
        .map(|t| term_integral(spec, t, |p| a.derivative(uv[p]) * dv[p]))
        .collect();
    broadcast(spec, &scalars)
}

/// Fixed-point iteration `uᵐ⁺¹ = step(uᵐ)` from `start`, with the
/// divergence and iteration-limit rules shared by the forward and
/// linearized solves.
pub(crate) fn picard(
    start: GridFunction3,
    tol: f64,
    max_iter: usize,
    mut step: impl FnMut(&GridFunction3) -> Result<GridFunction3>,
) -> Result<(GridFunction3, PicardReport)> {
    let mut report = PicardReport {
        iterations: 0,
        residual_history: Vec::new(),
        contraction_ratios: Vec::new(),
        converged: false,
    };
    let mut u = start;
    let mut increases = 0;
    for _ in 0..max_iter {
        let next = match step(&u) {
            Ok(n) => n,
            Err(KinvError::BlowUp { .. }) => {
                return Err(KinvError::PicardDivergence {
                    iterations: report.iterations + 1,
                    residual: f64::INFINITY,
                })
            }
            Err(e) => return Err(e),
        };
        let r = next.sub(&u).sup_norm();
        let floor = ROUNDOFF * next.sup_norm();
        report.iterations += 1;
        if let Some(&prev) = report.residual_history.last() {
            report.contraction_ratios.push(if prev > 0.0 { r / prev } else { 0.0 });
            if r > prev {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        report.residual_history.push(r);
        u = next;
        if r <= tol || r <= floor {
            report.converged = true;
            return Ok((u, report));
        }
        if !r.is_finite() || increases >= DIVERGENCE_RUN {
            return Err(KinvError::PicardDivergence {
                iterations: report.iterations,
                residual: r,
            });
        }
    }
    Err(KinvError::PicardMaxIterations {
        iterations: report.iterations,
        residual: report.residual_history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Solves the nonlinear direct problem with source `f_field`.
///
/// `u⁰` is the linear solution; each iteration re-solves the linear problem
/// with source `F − S(uᵐ)`.
pub fn solve_nonlinear_forward(
    spec: &ProblemSpec,
    f_field: &GridFunction3,
) -> Result<(GridFunction3, PicardReport)> {
    solve_nonlinear_with(spec, &spec.sigma, f_field)
}

/// As [`solve_nonlinear_forward`] with the absorption coefficient `sigma`
/// in place of the spec's.
pub fn solve_nonlinear_with(
    spec: &ProblemSpec,
    sigma: &GridFunction3,
    f_field: &GridFunction3,
) -> Result<(GridFunction3, PicardReport)> {
    let base = f_field.sub(&sigma.mul(&spec.u0));
    let march = |rhs: &GridFunction3| {
        transport_solve(
            &spec.grid,
            &spec.scattering,
            rhs,
            Some(spec.initial.values()),
            Some(&spec.inflow),
        )
    };
    let u0 = march(&base)?;
    if spec.is_linear() {
        return Ok((u0, PicardReport::linear()));
    }
    picard(u0, spec.solver.picard_tol, spec.solver.max_picard, |u| {
        march(&base.sub(&apply_s(u, spec)))
    })
}
