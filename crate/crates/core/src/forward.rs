//! Linear modified transport solver (`S ≡ 0`).
//!
//! Time stepping is implicit first-order upwind for the streaming term with
//! the scattering integral and all sources lagged at the old level:
//!
//! ```text
//! (uᵏ⁺¹ − uᵏ)/dt + v D_up uᵏ⁺¹ = ∫ J uᵏ dv′ + rᵏ
//! ```
//!
//! Each ordinate is then a bidiagonal solve, swept downwind from the inflow
//! face.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{KinvError, Result};
use crate::field::{GridFunction2, GridFunction3, NormReport};
use crate::geometry::PhaseGrid;
use crate::model::{ProblemSpec, Scattering};

/// Sup norm above which a time march is declared blown up.
pub const BLOW_UP: f64 = 1e12;

/// Slice size from which ordinate sweeps run on the thread pool.
const PAR_SLICE: usize = 4096;

/// One implicit upwind step for a single ordinate.
///
/// Solves `(u − u_prev)/dt + v D_up u = source` with the upwind ghost value
/// `inflow_value` on the inflow side.
pub fn advect_step(
    u_prev: &[f64],
    v: f64,
    dt: f64,
    dx: f64,
    inflow_value: f64,
    source: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; u_prev.len()];
    advect_into(u_prev, v, dt, dx, inflow_value, source, &mut out);
    out
}

fn advect_into(
    u_prev: &[f64],
    v: f64,
    dt: f64,
    dx: f64,
    inflow_value: f64,
    source: &[f64],
    out: &mut [f64],
) {
    let n = u_prev.len();
    let c = v.abs() * dt / dx;
    let denom = 1.0 + c;
    let mut upstream = inflow_value;
    if v > 0.0 {
        for i in 0..n {
            let u = (u_prev[i] + dt * source[i] + c * upstream) / denom;
            out[i] = u;
            upstream = u;
        }
    } else {
        for i in (0..n).rev() {
            let u = (u_prev[i] + dt * source[i] + c * upstream) / denom;
            out[i] = u;
            upstream = u;
        }
    }
}

/// Marches `u_t + v u_x = ∫ J u dv′ + rhs` from `initial` with inflow data
/// laid out `[time][ordinate]`. `None` means homogeneous data.
pub fn transport_solve(
    grid: &Arc<PhaseGrid>,
    scattering: &Scattering,
    rhs: &GridFunction3,
    initial: Option<&[f64]>,
    inflow: Option<&[f64]>,
) -> Result<GridFunction3> {
    let (nx, nv, nt) = (grid.nx(), grid.nv(), grid.nt());
    let n = nx * nv;
    let dt = grid.dt();
    let dx = grid.dx();
    let mut values = vec![0.0; (nt + 1) * n];
    if let Some(init) = initial {
        values[..n].copy_from_slice(init);
    }

    let mut explicit = vec![0.0; n];
    let mut scat = vec![0.0; nv];
    // per-ordinate scratch, column-major [ordinate][space]
    let mut cols_prev = vec![0.0; n];
    let mut cols_src = vec![0.0; n];
    let mut cols_new = vec![0.0; n];
    let parallel = n >= PAR_SLICE;

    for k in 0..nt {
        let (done, rest) = values.split_at_mut((k + 1) * n);
        let level = &done[k * n..];
        let next = &mut rest[..n];
        let r = rhs.level(k);

        if scattering.is_zero() {
            explicit.copy_from_slice(r);
        } else {
            for i in 0..nx {
                scattering.apply_row(grid, k, i, &level[i * nv..(i + 1) * nv], &mut scat);
                for j in 0..nv {
                    explicit[i * nv + j] = scat[j] + r[i * nv + j];
                }
            }
        }

        for i in 0..nx {
            for j in 0..nv {
                cols_prev[j * nx + i] = level[i * nv + j];
                cols_src[j * nx + i] = explicit[i * nv + j];
            }
        }
        let ghost = |j: usize| inflow.map_or(0.0, |f| f[(k + 1) * nv + j]);
        let v_nodes = grid.v_nodes();
        if parallel {
            cols_new
                .par_chunks_mut(nx)
                .enumerate()
                .for_each(|(j, out)| {
                    let s = j * nx..(j + 1) * nx;
                    advect_into(&cols_prev[s.clone()], v_nodes[j], dt, dx, ghost(j), &cols_src[s], out);
                });
        } else {
            for (j, out) in cols_new.chunks_mut(nx).enumerate() {
                let s = j * nx..(j + 1) * nx;
                advect_into(&cols_prev[s.clone()], v_nodes[j], dt, dx, ghost(j), &cols_src[s], out);
            }
        }
        let mut sup: f64 = 0.0;
        for i in 0..nx {
            for j in 0..nv {
                let u = cols_new[j * nx + i];
                next[i * nv + j] = u;
                sup = sup.max(u.abs());
            }
        }
        if !(sup <= BLOW_UP) {
            return Err(KinvError::BlowUp {
                norm: sup,
                level: k + 1,
            });
        }
    }
    Ok(GridFunction3::from_raw(grid.clone(), values))
}

/// Sup norm of the discrete equation residual of `u` for the explicit
/// source `rhs`, initial data and inflow data.
pub fn transport_residual(
    grid: &PhaseGrid,
    scattering: &Scattering,
    u: &GridFunction3,
    rhs: &GridFunction3,
    initial: Option<&[f64]>,
    inflow: Option<&[f64]>,
) -> f64 {
    let (nx, nv, nt) = (grid.nx(), grid.nv(), grid.nt());
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut worst: f64 = 0.0;
    let zeros = vec![0.0; nx * nv];
    let init = initial.unwrap_or(&zeros);
    for (a, b) in u.level(0).iter().zip(init) {
        worst = worst.max((a - b).abs());
    }
    let mut scat = vec![0.0; nv];
    for k in 0..nt {
        let old = u.level(k);
        let new = u.level(k + 1);
        let r = rhs.level(k);
        for i in 0..nx {
            scattering.apply_row(grid, k, i, &old[i * nv..(i + 1) * nv], &mut scat);
            for (j, &v) in grid.v_nodes().iter().enumerate() {
                let ghost = inflow.map_or(0.0, |f| f[(k + 1) * nv + j]);
                let up = if v > 0.0 {
                    if i == 0 {
                        ghost
                    } else {
                        new[(i - 1) * nv + j]
                    }
                } else if i + 1 == nx {
                    ghost
                } else {
                    new[(i + 1) * nv + j]
                };
                let p = i * nv + j;
                let res = (new[p] - old[p]) / dt + v.abs() * (new[p] - up) / dx - scat[j] - r[p];
                worst = worst.max(res.abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForwardResult {
    pub u: GridFunction3,
    /// Explicit source actually marched: `F − Σ u₀`.
    pub source_used: GridFunction3,
    /// `‖u‖_{H∞}` over the right-hand side of the a priori estimate.
    pub apriori_ratio: f64,
}

/// Solves the linear problem with source `f_field`, the spec's `Σ u₀`
/// absorption term, and the spec's inflow and initial data.
pub fn solve_linear_forward(spec: &ProblemSpec, f_field: &GridFunction3) -> Result<LinearForwardResult> {
    let source_used = f_field.sub(&spec.sigma.mul(&spec.u0));
    let u = transport_solve(
        &spec.grid,
        &spec.scattering,
        &source_used,
        Some(spec.initial.values()),
        Some(&spec.inflow),
    )?;
    let apriori_ratio = apriori_ratio(spec, f_field, &u.norms());
    Ok(LinearForwardResult {
        u,
        source_used,
        apriori_ratio,
    })
}

/// Residual of a [`LinearForwardResult`] against the spec's data.
pub fn linear_residual(spec: &ProblemSpec, result: &LinearForwardResult) -> f64 {
    transport_residual(
        &spec.grid,
        &spec.scattering,
        &result.u,
        &result.source_used,
        Some(spec.initial.values()),
        Some(&spec.inflow),
    )
}

/// Right-hand side of the a priori estimate:
/// `‖F‖_{W∞ᵗ} + ‖φ‖_{h∞} + ‖μ‖_{W∞ᵗ(Γ₋)} + |V| ‖Σ‖_∞ + |V| ‖u₀‖_{H∞}`.
pub fn apriori_bound_terms(spec: &ProblemSpec, f_field: &GridFunction3) -> f64 {
    let grid = &spec.grid;
    let nv = grid.nv();
    let mv = grid.geometry().velocity_measure();
    let mu_sup = spec.inflow.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut mu_dt: f64 = 0.0;
    for k in 0..grid.nt() {
        for j in 0..nv {
            let d = (spec.inflow_at(k + 1, j) - spec.inflow_at(k, j)) / grid.dt();
            mu_dt = mu_dt.max(d.abs());
        }
    }
    f_field.w_inf_t_norm()
        + spec.initial.h_inf_norm()
        + mu_sup
        + mu_dt
        + mv * spec.sigma.sup_norm()
        + mv * spec.u0.norms().h_inf
}

fn apriori_ratio(spec: &ProblemSpec, f_field: &GridFunction3, norms: &NormReport) -> f64 {
    let denom = apriori_bound_terms(spec, f_field);
    if denom == 0.0 {
        0.0
    } else {
        norms.h_inf / denom
    }
}

/// Convenience: `F` for the linear solve from a stationary factor, `f g + h`.
pub fn factor_source(spec: &ProblemSpec, f: &GridFunction2) -> GridFunction3 {
    GridFunction3::replicate(f).mul(&spec.g).add(&spec.h)
}
