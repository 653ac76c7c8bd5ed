//! Hypothesis checks for a materialized problem. Violations are data; the
//! caller decides whether they are fatal.

use serde::{Deserialize, Serialize};

use super::problem::{Mode, ProblemSpec};
use crate::geometry::Side;

/// Pointwise tolerance for the zero-trace and compatibility conditions.
pub const TRACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            severity: Severity::Error,
            message: message.into(),
        }
    }
    fn warning(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

pub fn validate_problem(spec: &ProblemSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let grid = &spec.grid;
    let geom = grid.geometry();
    let nt = grid.nt();
    let t_final = geom.final_time;

    if !grid.flight_time_short() {
        out.push(Violation::warning(
            "flight_time",
            format!(
                "flight time L/v0 = {} is not below T = {}",
                geom.max_flight_time(),
                t_final
            ),
        ));
    }

    let cfl = grid.dt() * spec.scattering.sup_norm() * geom.velocity_measure();
    if cfl >= 1.0 {
        out.push(Violation::warning(
            "scattering_step",
            format!("dt * sup|J| * |V| = {cfl} is not below 1"),
        ));
    }

    if !spec.is_linear() {
        let k = spec.kernel_smallness();
        if k >= 0.5 {
            out.push(Violation::warning(
                "kernel_smallness",
                format!("C1 * |Q| * meas = {k} is not below 1/2; Picard contraction not certified"),
            ));
        }
    }

    match spec.mode {
        Mode::Forward => {
            // φ(x, v) = μ(x, v, 0) on γ₋
            let bad = grid.inflow_set().iter().any(|face| {
                let x = grid.boundary_coordinate(face.side);
                let v = grid.v_nodes()[face.ordinate];
                match (spec.exprs.phi.at(x, v, 0.0), spec.exprs.mu.at(x, v, 0.0)) {
                    (Ok(p), Ok(m)) => (p - m).abs() > TRACE_TOL,
                    _ => true,
                }
            });
            if bad {
                out.push(Violation::error(
                    "compatibility",
                    "compatibility phi=mu(·,0) fails on gamma_minus",
                ));
            }
        }
        Mode::InverseSource | Mode::InverseAbsorption => {
            let g0 = spec.solver.g0;
            let g_min = spec
                .g
                .level(nt)
                .iter()
                .fold(f64::INFINITY, |m, g| m.min(g.abs()));
            if g_min < g0 {
                out.push(Violation::error(
                    "g_lower_bound",
                    format!("min |g(x,v,T)| = {g_min:e} is below g0 = {g0:e}"),
                ));
            }

            if let Some(psi) = &spec.exprs.psi {
                let bad = grid.inflow_set().iter().any(|face| {
                    let x = match face.side {
                        Side::Left => 0.0,
                        Side::Right => geom.length,
                    };
                    let v = grid.v_nodes()[face.ordinate];
                    match psi.eval(&super::expr::Bindings {
                        x: Some(x),
                        v: Some(v),
                        t: None,
                        vp: None,
                    }) {
                        Ok(p) => p.abs() > TRACE_TOL,
                        Err(_) => true,
                    }
                });
                if bad {
                    out.push(Violation::error(
                        "psi_trace",
                        "psi nonzero on gamma_minus",
                    ));
                }
            }

            let mu_zero = spec.inflow.iter().all(|&m| m == 0.0);
            let phi_zero = spec.initial.sup_norm() == 0.0;
            let h_zero = spec.h.sup_norm() == 0.0;
            if !(mu_zero && phi_zero && h_zero) {
                out.push(Violation::error(
                    "inverse_zero_data",
                    "inverse modes require mu = 0, phi = 0 and h = 0",
                ));
            }

            if spec.mode == Mode::InverseAbsorption {
                let u_min = spec.solver.u_min;
                let lo = spec
                    .u0
                    .level(nt)
                    .iter()
                    .fold(f64::INFINITY, |m, u| m.min(u.abs()));
                if lo < u_min {
                    out.push(Violation::error(
                        "u0_lower_bound",
                        format!("min |u0(x,v,T)| = {lo:e} is below u_min = {u_min:e}"),
                    ));
                }
            }
        }
    }
    out
}
