//! Recovery of the stationary factor of the source (`F = f g`) or of the
//! absorption coefficient (`Σ = σ g`) from the final state `u(·, ·, T) = ψ`.
//!
//! The working unknown is the scaled control `χ = f g(T)` (or `σ g(T)`),
//! which enters the direct problem through the coefficient
//! `χ g(t) / g(T)`. The map `M: χ ↦ u(·, ·, T)` is inverted by Newton
//! iteration with backtracking, starting from the centre of the local basin.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KinvError, Result};
use crate::field::{GridFunction2, GridFunction3};
use crate::forward::transport_solve;
use crate::geometry::{PhaseGrid, Side};
use crate::krylov::gmres;
use crate::model::{JacobianMethod, Mode, ProblemSpec};
use crate::nonlinear::{apply_s, apply_s_derivative, picard, solve_nonlinear_with};

/// Smallest backtracking multiplier tried before giving up.
pub const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Source,
    Absorption,
}

impl ControlKind {
    pub fn for_mode(mode: Mode) -> Result<Self> {
        match mode {
            Mode::InverseSource => Ok(Self::Source),
            Mode::InverseAbsorption => Ok(Self::Absorption),
            Mode::Forward => Err(KinvError::Config("forward mode has no control".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariable {
    pub chi: GridFunction2,
    pub kind: ControlKind,
}

impl ControlVariable {
    pub fn new(chi: GridFunction2, kind: ControlKind) -> Self {
        Self { chi, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianSolveStats {
    /// `dense` or `krylov`.
    pub method: String,
    /// Linearized solves (dense) or GMRES iterations (krylov).
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    /// Accepted Newton steps.
    pub iterations: usize,
    /// `‖M(χ⁰) − ψ‖_∞`.
    pub initial_residual: f64,
    /// `‖M(χᵏ) − ψ‖_∞` after each step.
    pub residual_history: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub damping_factors: Vec<f64>,
    pub jacobian_solve_stats: Vec<JacobianSolveStats>,
    pub converged: bool,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history
            .last()
            .copied()
            .unwrap_or(self.initial_residual)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseResult {
    /// `f` or `σ`, i.e. `χ / g(·, ·, T)`.
    pub control: GridFunction2,
    pub chi: GridFunction2,
    pub state: GridFunction3,
    pub report: NewtonReport,
}

/// The map `M` and its derivative for one problem and control kind.
#[derive(Debug, Clone)]
pub struct InverseOperator<'a> {
    spec: &'a ProblemSpec,
    kind: ControlKind,
    /// `g(t) / g(T)`.
    ratio: GridFunction3,
    g_final: GridFunction2,
}

impl<'a> InverseOperator<'a> {
    /// Fails if `|g(x, v, T)| < g0` anywhere.
    pub fn new(spec: &'a ProblemSpec, kind: ControlKind) -> Result<Self> {
        let grid = &spec.grid;
        let nt = grid.nt();
        let g_final = spec.g.final_slice();
        let g0 = spec.solver.g0;
        for (p, &gt) in g_final.values().iter().enumerate() {
            if !(gt.abs() >= g0) {
                let (i, j) = (p / grid.nv(), p % grid.nv());
                return Err(KinvError::Domain(format!(
                    "|g(x, v, T)| = {:e} below g0 = {g0:e} at x = {}, v = {}",
                    gt.abs(),
                    grid.x_centers()[i],
                    grid.v_nodes()[j]
                )));
            }
        }
        let n = grid.slice_len();
        let gv = spec.g.values();
        let ratio: Vec<f64> = (0..(nt + 1) * n).map(|q| gv[q] / gv[nt * n + q % n]).collect();
        Ok(Self {
            spec,
            kind,
            ratio: GridFunction3::from_raw(grid.clone(), ratio),
            g_final,
        })
    }

    /// Operator for the spec's own inverse mode.
    pub fn for_spec(spec: &'a ProblemSpec) -> Result<Self> {
        Self::new(spec, ControlKind::for_mode(spec.mode)?)
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn grid(&self) -> &std::sync::Arc<PhaseGrid> {
        &self.spec.grid
    }

    /// `χ g(t) / g(T)` on the full grid.
    pub fn coefficient(&self, chi: &GridFunction2) -> GridFunction3 {
        GridFunction3::replicate(chi).mul(&self.ratio)
    }

    /// `(F, Σ)` seen by the direct problem for control `χ`.
    fn coefficients(&self, chi: &GridFunction2) -> (GridFunction3, GridFunction3) {
        let c = self.coefficient(chi);
        match self.kind {
            ControlKind::Source => (c.add(&self.spec.h), self.spec.sigma.clone()),
            ControlKind::Absorption => (self.spec.source.clone(), c),
        }
    }

    /// `P(χ)`: the full forward state.
    pub fn solve_state(&self, chi: &GridFunction2) -> Result<GridFunction3> {
        let (f, sigma) = self.coefficients(chi);
        solve_nonlinear_with(self.spec, &sigma, &f).map(|(u, _)| u)
    }

    /// `M(χ) = P(χ)|_{t=T}` with the state it came from.
    pub fn forward(&self, chi: &GridFunction2) -> Result<(GridFunction2, GridFunction3)> {
        let u = self.solve_state(chi)?;
        Ok((u.final_slice(), u))
    }

    /// Evaluates `{F − u_t − v u_x − S(u) + ∫ J u} · u / (Σ u₀)` at `t = T`
    /// from the discrete state. In the continuum the braced factor is
    /// `Σ u₀`, so this is a consistency diagnostic for [`Self::forward`].
    pub fn forward_paperform(&self, chi: &GridFunction2) -> Result<GridFunction2> {
        let spec = self.spec;
        let grid = &spec.grid;
        let (nx, nv, nt) = (grid.nx(), grid.nv(), grid.nt());
        let (dt, dx) = (grid.dt(), grid.dx());
        let (f, sigma) = self.coefficients(chi);
        let (u, _) = solve_nonlinear_with(spec, &sigma, &f)?;
        let s = apply_s(&u, spec);
        let (now, before) = (u.level(nt), u.level(nt - 1));
        let (f_t, s_t) = (f.level(nt), s.level(nt));
        let (sig_t, u0_t) = (sigma.level(nt), spec.u0.level(nt));
        let threshold = spec.solver.g0;
        let mut scat = vec![0.0; nv];
        let mut out = vec![0.0; nx * nv];
        for i in 0..nx {
            spec.scattering
                .apply_row(grid, nt, i, &now[i * nv..(i + 1) * nv], &mut scat);
            for (j, &v) in grid.v_nodes().iter().enumerate() {
                let p = i * nv + j;
                let ghost = spec.inflow_at(nt, j);
                let up = match grid.inflow_side(j) {
                    Side::Left if i == 0 => ghost,
                    Side::Left => now[p - nv],
                    Side::Right if i + 1 == nx => ghost,
                    Side::Right => now[p + nv],
                };
                let u_t = (now[p] - before[p]) / dt;
                let stream = v.abs() * (now[p] - up) / dx;
                let braced = f_t[p] - u_t - stream - s_t[p] + scat[j];
                let denom = sig_t[p] * u0_t[p];
                if !(denom.abs() >= threshold) {
                    return Err(KinvError::Domain(format!(
                        "|Sigma(T) u0(T)| = {:e} below {threshold:e} at x = {}, v = {v}",
                        denom.abs(),
                        grid.x_centers()[i]
                    )));
                }
                out[p] = braced * now[p] / denom;
            }
        }
        Ok(GridFunction2::from_raw(grid.clone(), out))
    }

    /// `M′(χ)[d]` at the converged state `u_base`: the final slice of the
    /// linearized solution with zero data.
    pub fn jacobian_apply(&self, d_chi: &GridFunction2, u_base: &GridFunction3) -> Result<GridFunction2> {
        let spec = self.spec;
        let mut r = self.coefficient(d_chi);
        if self.kind == ControlKind::Absorption {
            r = r.mul(&spec.u0).scale(-1.0);
        }
        let march = |rhs: &GridFunction3| transport_solve(&spec.grid, &spec.scattering, rhs, None, None);
        let du0 = march(&r)?;
        if spec.is_linear() {
            return Ok(du0.final_slice());
        }
        let (du, _) = picard(du0, spec.solver.picard_tol, spec.solver.max_picard, |du| {
            march(&r.sub(&apply_s_derivative(u_base, du, spec)))
        })?;
        Ok(du.final_slice())
    }

    /// Columns `M′(χ)[e_p]` in flat order, computed in parallel.
    pub fn jacobian_dense(&self, u_base: &GridFunction3) -> Result<DMatrix<f64>> {
        let grid = self.grid();
        let n = grid.slice_len();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|p| {
                self.jacobian_apply(&GridFunction2::unit(grid.clone(), p), u_base)
                    .map(GridFunction2::into_values)
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(n, n, |row, col| cols[col][row]))
    }

    /// Solves `M′(χ)[δ] = rhs`.
    fn solve_jacobian(&self, u_base: &GridFunction3, rhs: &GridFunction2) -> Result<(GridFunction2, JacobianSolveStats)> {
        let grid = self.grid();
        let n = grid.slice_len();
        let solver = &self.spec.solver;
        let dense = match solver.jacobian {
            JacobianMethod::Dense => true,
            JacobianMethod::Krylov => false,
            JacobianMethod::Auto => n <= solver.dense_limit,
        };
        if dense {
            let a = self.jacobian_dense(u_base)?;
            let b = DVector::from_column_slice(rhs.values());
            let x = a
                .clone()
                .lu()
                .solve(&b)
                .ok_or_else(|| KinvError::JacobianSolve("dense Jacobian is singular".into()))?;
            let b_norm = b.norm();
            let rel = if b_norm == 0.0 { 0.0 } else { (&a * &x - &b).norm() / b_norm };
            if !rel.is_finite() {
                return Err(KinvError::JacobianSolve("dense solve produced non-finite values".into()));
            }
            Ok((
                GridFunction2::from_raw(grid.clone(), x.as_slice().to_vec()),
                JacobianSolveStats {
                    method: "dense".into(),
                    iterations: n,
                    relative_residual: rel,
                },
            ))
        } else {
            let apply = |p: &[f64]| {
                self.jacobian_apply(&GridFunction2::from_raw(grid.clone(), p.to_vec()), u_base)
                    .map(GridFunction2::into_values)
            };
            let (x, out) = gmres(
                apply,
                rhs.values(),
                solver.krylov_tol,
                solver.krylov_restart,
                solver.krylov_max_iter,
            )?;
            Ok((
                GridFunction2::from_raw(grid.clone(), x),
                JacobianSolveStats {
                    method: "krylov".into(),
                    iterations: out.iterations,
                    relative_residual: out.relative_residual,
                },
            ))
        }
    }

    /// Newton starting point: zero, or the `Σ` prior at `T`.
    pub fn initial_control(&self) -> GridFunction2 {
        match self.kind {
            ControlKind::Source => GridFunction2::zeros(self.grid().clone()),
            ControlKind::Absorption => self.spec.sigma.final_slice(),
        }
    }

    /// `χ / g(T)`.
    pub fn control_from_chi(&self, chi: &GridFunction2) -> GridFunction2 {
        chi.zip_with(&self.g_final, |c, g| c / g)
    }

    /// `c g(T)`.
    pub fn chi_from_control(&self, control: &GridFunction2) -> GridFunction2 {
        control.zip_with(&self.g_final, |c, g| c * g)
    }

    /// Newton iteration for `M(χ) = ψ`.
    pub fn solve(&self, psi: &GridFunction2) -> Result<InverseResult> {
        let solver = &self.spec.solver;
        let tol = solver.newton_tol;
        let mut chi = self.initial_control();
        let (mut m, mut state) = self.forward(&chi)?;
        let mut residual = m.sub(psi).sup_norm();
        let mut report = NewtonReport {
            iterations: 0,
            initial_residual: residual,
            residual_history: Vec::new(),
            step_norms: Vec::new(),
            damping_factors: Vec::new(),
            jacobian_solve_stats: Vec::new(),
            converged: residual <= tol,
        };
        while !report.converged {
            if report.iterations >= solver.max_newton {
                return Err(KinvError::NewtonMaxIterations {
                    iterations: report.iterations,
                    residual,
                });
            }
            let (delta, stats) = self.solve_jacobian(&state, &psi.sub(&m))?;
            report.jacobian_solve_stats.push(stats);
            let mut lambda = 1.0;
            let accepted = loop {
                let trial = chi.add(&delta.scale(lambda));
                match self.forward(&trial) {
                    Ok((m_try, u_try)) => {
                        let r = m_try.sub(psi).sup_norm();
                        // without damping the full step is always taken
                        if r < residual || !solver.newton_damping {
                            break Some((trial, m_try, u_try, r));
                        }
                    }
                    Err(
                        KinvError::PicardDivergence { .. }
                        | KinvError::PicardMaxIterations { .. }
                        | KinvError::BlowUp { .. },
                    ) => {}
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
                if lambda < MIN_DAMPING || !solver.newton_damping {
                    break None;
                }
            };
            let Some((trial, m_try, u_try, r)) = accepted else {
                return Err(KinvError::LineSearch {
                    iteration: report.iterations + 1,
                    residual,
                });
            };
            report.iterations += 1;
            report.step_norms.push(lambda * delta.sup_norm());
            report.damping_factors.push(lambda);
            report.residual_history.push(r);
            log::info!("newton {}: residual {r:e}, damping {lambda}", report.iterations);
            chi = trial;
            m = m_try;
            state = u_try;
            residual = r;
            report.converged = residual <= tol;
        }
        Ok(InverseResult {
            control: self.control_from_chi(&chi),
            chi,
            state,
            report,
        })
    }
}

/// `χ g(t) / g(T)` on the full grid.
pub fn control_to_coefficient(chi: &ControlVariable, spec: &ProblemSpec) -> Result<GridFunction3> {
    Ok(InverseOperator::new(spec, chi.kind)?.coefficient(&chi.chi))
}

/// `(M(χ), P(χ))`.
pub fn forward_map_m(chi: &ControlVariable, spec: &ProblemSpec) -> Result<(GridFunction2, GridFunction3)> {
    InverseOperator::new(spec, chi.kind)?.forward(&chi.chi)
}

pub fn forward_map_m_paperform(chi: &ControlVariable, spec: &ProblemSpec) -> Result<GridFunction2> {
    InverseOperator::new(spec, chi.kind)?.forward_paperform(&chi.chi)
}

pub fn jacobian_apply(
    chi: &ControlVariable,
    d_chi: &GridFunction2,
    u_base: &GridFunction3,
    spec: &ProblemSpec,
) -> Result<GridFunction2> {
    InverseOperator::new(spec, chi.kind)?.jacobian_apply(d_chi, u_base)
}

/// Recovers the control for the spec's inverse mode from `psi`.
pub fn solve_inverse(spec: &ProblemSpec, psi: &GridFunction2) -> Result<InverseResult> {
    InverseOperator::for_spec(spec)?.solve(psi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedMember {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `‖f‖_∞ / ‖ψ‖_{h∞}` per solved member, in family order.
    pub ratios: Vec<f64>,
    pub skipped: Vec<SkippedMember>,
    /// Largest ratio; `None` when every member was skipped.
    pub c_bar: Option<f64>,
    pub median: Option<f64>,
}

/// Empirical constant of `‖f‖_∞ ≤ C̄ ‖ψ‖_{h∞}` over a family of data.
/// Only defined for the linear problem.
pub fn stability_estimate(spec: &ProblemSpec, psi_family: &[GridFunction2]) -> Result<StabilityReport> {
    if !spec.is_linear() {
        return Err(KinvError::Nonlinear(
            "stability estimate requires alpha = zero".into(),
        ));
    }
    let op = InverseOperator::for_spec(spec)?;
    let mut ratios = Vec::new();
    let mut skipped = Vec::new();
    for (index, psi) in psi_family.iter().enumerate() {
        let norm = psi.h_inf_norm();
        if norm == 0.0 {
            ratios.push(0.0);
            continue;
        }
        match op.solve(psi) {
            Ok(res) => ratios.push(res.control.sup_norm() / norm),
            Err(e) => {
                log::warn!("stability member {index} skipped: {e}");
                skipped.push(SkippedMember {
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    let c_bar = ratios.iter().copied().reduce(f64::max);
    let median = median(&ratios);
    Ok(StabilityReport {
        ratios,
        skipped,
        c_bar,
        median,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Smooth random final data vanishing at `x = 0` and `x = L`:
/// `Σ_m a_m sin(mπx/L) (1 + b_m v / v1)` for `m = 1..3`.
pub fn random_psi_family(grid: &std::sync::Arc<PhaseGrid>, count: usize, seed: u64) -> Vec<GridFunction2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = *grid.geometry();
    let pi = std::f64::consts::PI;
    (0..count)
        .map(|_| {
            let coeffs: Vec<(f64, f64)> = (1..=3)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)))
                .collect();
            GridFunction2::sample(grid.clone(), |x, v| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, (a, b))| {
                        a * ((m + 1) as f64 * pi * x / geom.length).sin() * (1.0 + b * v / geom.v1)
                    })
                    .sum()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_linear_forward;
    use crate::geometry::Geometry;
    use crate::model::{AlphaSpec, ProblemConfig, QTermConfig};

    fn config(mode: Mode, n: (usize, usize, usize)) -> ProblemConfig {
        let mut c = ProblemConfig::new(Geometry::new(1.0, 1.0, 2.0, 1.0).unwrap(), n.0, n.1, n.2, mode);
        c.set_psi("0");
        c
    }

    fn nonlinear(c: &mut ProblemConfig) {
        c.coefficients.alpha = AlphaSpec::SoftAbs { c: 0.1 };
        c.coefficients.q = vec![QTermConfig {
            q1: "0.5*(1 + x)".into(),
            q2: "0.5*cos(x)".into(),
        }];
    }

    fn source_spec(n: (usize, usize, usize), nonlinear_term: bool) -> ProblemSpec {
        let mut c = config(Mode::InverseSource, n);
        c.coefficients.g = Some("exp(-t)".into());
        c.coefficients.j = Some("0.2".into());
        if nonlinear_term {
            nonlinear(&mut c);
        }
        ProblemSpec::from_config(c, ".").unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let spec = source_spec((4, 2, 4), false);
        let op = InverseOperator::for_spec(&spec).unwrap();
        let one = GridFunction2::from_fn(spec.grid.clone(), |_, _| 1.0);
        let c = op.coefficient(&one);
        for k in 0..=4 {
            let t = spec.grid.time(k);
            for &x in c.level(k) {
                assert!((x - (1.0 - t).exp()).abs() < 1e-15);
            }
        }
        assert!(c.final_slice().values().iter().all(|&x| x == 1.0));
        assert_eq!(op.coefficient(&GridFunction2::zeros(spec.grid.clone())).sup_norm(), 0.0);

        let mut cfg = config(Mode::InverseSource, (4, 2, 4));
        cfg.coefficients.g = Some("1".into());
        let spec = ProblemSpec::from_config(cfg, ".").unwrap();
        let chi = GridFunction2::from_fn(spec.grid.clone(), |i, j| (i + 3 * j) as f64);
        let c = control_to_coefficient(&ControlVariable::new(chi.clone(), ControlKind::Source), &spec).unwrap();
        assert_eq!(c, GridFunction3::replicate(&chi));
    }

    #[test]
    fn g_guard() {
        let mut c = config(Mode::InverseSource, (4, 2, 4));
        c.coefficients.g = Some("1 - t".into());
        let spec = ProblemSpec::from_config(c, ".").unwrap();
        assert!(matches!(InverseOperator::for_spec(&spec), Err(KinvError::Domain(_))));
    }

    #[test]
    fn zero_control_zero_map() {
        let spec = source_spec((6, 4, 6), true);
        let chi = ControlVariable::new(GridFunction2::zeros(spec.grid.clone()), ControlKind::Source);
        let (m, u) = forward_map_m(&chi, &spec).unwrap();
        assert_eq!(m.sup_norm(), 0.0);
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn linear_map_is_additive() {
        let spec = source_spec((6, 4, 8), false);
        let op = InverseOperator::for_spec(&spec).unwrap();
        let a = GridFunction2::sample(spec.grid.clone(), |x, v| x * v);
        let b = GridFunction2::sample(spec.grid.clone(), |x, _| (3.0 * x).cos());
        let ma = op.forward(&a).unwrap().0;
        let mb = op.forward(&b).unwrap().0;
        let mab = op.forward(&a.add(&b)).unwrap().0;
        assert!(mab.sub(&ma.add(&mb)).sup_norm() <= 1e-12);
        // and the derivative is the map itself
        let u = op.forward(&a).unwrap().1;
        assert!(op.jacobian_apply(&b, &u).unwrap().sub(&mb).sup_norm() <= 1e-15);
        assert_eq!(op.jacobian_apply(&GridFunction2::zeros(spec.grid.clone()), &u).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn absorption_substitution_identity() {
        let mut c = config(Mode::InverseAbsorption, (8, 4, 8));
        c.coefficients.u0 = Some("1 + 0.5*x*v".into());
        c.coefficients.source = Some("1 + x".into());
        let spec = ProblemSpec::from_config(c, ".").unwrap();
        let chi = GridFunction2::from_fn(spec.grid.clone(), |_, _| 0.3);
        let (m, _) = forward_map_m(&ControlVariable::new(chi, ControlKind::Absorption), &spec).unwrap();
        let mut direct_spec = spec.clone();
        direct_spec.sigma = GridFunction3::from_fn(spec.grid.clone(), |_, _, _| 0.0);
        let f = spec.source.sub(&spec.u0.scale(0.3));
        let direct = solve_linear_forward(&direct_spec, &f).unwrap();
        assert!(m.sub(&direct.u.final_slice()).sup_norm() <= 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let spec = source_spec((8, 4, 8), true);
        let op = InverseOperator::for_spec(&spec).unwrap();
        let chi = GridFunction2::sample(spec.grid.clone(), |x, _| 2.0 * (std::f64::consts::PI * x).sin());
        let d = GridFunction2::sample(spec.grid.clone(), |x, v| 1.0 + x * v);
        let (m, u) = op.forward(&chi).unwrap();
        let jd = op.jacobian_apply(&d, &u).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&e| {
                let me = op.forward(&chi.add(&d.scale(e))).unwrap().0;
                me.sub(&m).scale(1.0 / e).sub(&jd).sup_norm()
            })
            .collect();
        let slope = (errs[0] / errs[1]).log10();
        assert!((slope - 1.0).abs() < 0.3, "{errs:?}");
    }

    #[test]
    fn zero_psi_gives_zero_control() {
        let spec = source_spec((6, 4, 8), true);
        let psi = GridFunction2::zeros(spec.grid.clone());
        let res = solve_inverse(&spec, &psi).unwrap();
        assert!(res.report.converged);
        assert!(res.report.iterations <= 1);
        assert_eq!(res.control.sup_norm(), 0.0);
        assert_eq!(res.state.sup_norm(), 0.0);
    }

    #[test]
    fn linear_newton_is_one_step_and_dense_matches_krylov() {
        let spec = source_spec((6, 4, 8), false);
        let op = InverseOperator::for_spec(&spec).unwrap();
        let chi_star = GridFunction2::sample(spec.grid.clone(), |x, v| 0.1 * (std::f64::consts::PI * x).sin() + 0.01 * v);
        let psi = op.forward(&chi_star).unwrap().0;
        let dense = op.solve(&psi).unwrap();
        assert_eq!(dense.report.iterations, 1);
        assert_eq!(dense.report.damping_factors, vec![1.0]);
        assert!(dense.chi.sub(&chi_star).sup_norm() < 1e-10);

        let mut s = spec.solver;
        s.jacobian = JacobianMethod::Krylov;
        let kspec = spec.with_solver(s);
        let kry = solve_inverse(&kspec, &psi).unwrap();
        assert_eq!(kry.report.jacobian_solve_stats[0].method, "krylov");
        assert!(kry.control.sub(&dense.control).sup_norm() < 1e-8);
    }

    #[test]
    fn nonlinear_round_trip() {
        let spec = source_spec((8, 4, 12), true);
        let op = InverseOperator::for_spec(&spec).unwrap();
        let f_star = GridFunction2::sample(spec.grid.clone(), |x, _| 0.1 * (std::f64::consts::PI * x).sin());
        let psi = op.forward(&op.chi_from_control(&f_star)).unwrap().0;
        let res = op.solve(&psi).unwrap();
        assert!(res.report.converged);
        assert!(res.report.residual_history.windows(2).all(|w| w[1] < w[0]));
        assert!(res.control.sub(&f_star).sup_norm() / f_star.sup_norm() < 1e-8);
        // consistency invariant
        assert!(op.forward(&res.chi).unwrap().0.sub(&psi).sup_norm() <= spec.solver.newton_tol);
    }

    #[test]
    fn large_data_leaves_basin() {
        let mut c = config(Mode::InverseSource, (6, 4, 6));
        c.coefficients.alpha = AlphaSpec::SoftAbs { c: 1.0 };
        c.coefficients.q = vec![QTermConfig {
            q1: "4".into(),
            q2: "1".into(),
        }];
        let spec = ProblemSpec::from_config(c, ".").unwrap();
        let shape = GridFunction2::sample(spec.grid.clone(), |x, _| (std::f64::consts::PI * x).sin());
        let small = solve_inverse(&spec, &shape.scale(1e-3)).unwrap();
        assert!(small.report.converged);
        let err = solve_inverse(&spec, &shape).unwrap_err();
        assert!(matches!(err, KinvError::LineSearch { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn stability_scale_invariance_and_zero_member() {
        let spec = source_spec((6, 4, 8), false);
        let base = GridFunction2::sample(spec.grid.clone(), |x, v| (std::f64::consts::PI * x).sin() * (1.0 + 0.1 * v));
        let family = vec![base.clone(), base.scale(3.0), base.scale(0.01), GridFunction2::zeros(spec.grid.clone())];
        let rep = stability_estimate(&spec, &family).unwrap();
        assert!(rep.skipped.is_empty());
        assert_eq!(rep.ratios[3], 0.0);
        for r in &rep.ratios[1..3] {
            assert!((r - rep.ratios[0]).abs() <= 1e-9 * rep.ratios[0]);
        }
        assert!(stability_estimate(&source_spec((4, 2, 4), true), &family[..0]).is_err());
    }

    #[test]
    fn random_family_is_seeded_and_vanishes_on_inflow() {
        let spec = source_spec((8, 4, 8), false);
        let a = random_psi_family(&spec.grid, 5, 7);
        let b = random_psi_family(&spec.grid, 5, 7);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn paperform_agrees_and_gap_shrinks() {
        let gap = |n: usize| {
            let mut c = config(Mode::InverseSource, (n, 4, n));
            c.coefficients.g = Some("1 + t".into());
            c.coefficients.sigma = Some("1".into());
            c.coefficients.u0 = Some("1".into());
            c.coefficients.j = Some("0.2".into());
            nonlinear(&mut c);
            let spec = ProblemSpec::from_config(c, ".").unwrap();
            let op = InverseOperator::for_spec(&spec).unwrap();
            let chi = GridFunction2::sample(spec.grid.clone(), |x, _| 1.0 + x);
            let m = op.forward(&chi).unwrap().0;
            op.forward_paperform(&chi).unwrap().sub(&m).sup_norm()
        };
        let (a, b) = (gap(16), gap(32));
        assert!(a / b >= 1.5, "{a} {b}");
    }
}
