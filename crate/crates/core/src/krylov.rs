//! Restarted GMRES for matrix-free Jacobian solves.

use crate::error::{KinvError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    /// Final `‖b − A x‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x = 0`; `apply` computes `A p`.
///
/// Stops when the relative residual drops below `tol`; fails after
/// `max_iter` inner iterations or on breakdown without convergence.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, GmresOutcome)> {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            GmresOutcome {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let m = restart.min(n).max(1);
    let mut total = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        let rel = beta / b_norm;
        if rel <= tol {
            return Ok((
                x,
                GmresOutcome {
                    iterations: total,
                    relative_residual: rel,
                },
            ));
        }
        if total >= max_iter {
            return Err(KinvError::JacobianSolve(format!(
                "GMRES stagnated after {total} iterations at relative residual {rel:e}"
            )));
        }

        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg matrix stored by columns, each of length j + 2
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..m {
            let mut w = apply(&basis[j])?;
            let mut col = vec![0.0; j + 2];
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dot(&w, q);
                    col[i] += c;
                    for (wk, qk) in w.iter_mut().zip(q) {
                        *wk -= c * qk;
                    }
                }
            }
            let w_norm = norm(&w);
            col[j + 1] = w_norm;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[j] / denom, col[j + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            h.push(col);
            steps = j + 1;
            total += 1;
            let happy = w_norm <= 1e-14 * beta;
            if g[j + 1].abs() / b_norm <= tol || happy || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / w_norm).collect());
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for k in i + 1..steps {
                acc -= h[k][i] * y[k];
            }
            if h[i][i] == 0.0 {
                return Err(KinvError::JacobianSolve("GMRES breakdown: singular Hessenberg".into()));
            }
            y[i] = acc / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, qi) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * qi;
            }
        }
    }
}
