//! Forward and inverse solvers for the modified nonlinear kinetic transport
//! equation on a 1-D slab.
//!
//! The forward problem is
//!
//! ```text
//! u_t + v u_x + Σ u₀ + S(u) = ∫_V J u dv′ + F
//! ```
//!
//! with inflow data on `γ₋` and initial data at `t = 0`, where `S` is the
//! global space-time integral operator with separable kernel `Q` applied to
//! `α(u)`. The inverse problems recover the stationary factor `f` of
//! `F = f g` or `σ` of `Σ = σ g` from the final state `u(·, ·, T) = ψ` by
//! Newton iteration.

pub mod error;
pub mod field;
pub mod forward;
pub mod geometry;
pub mod krylov;
pub mod inverse;
pub mod model;
pub mod nonlinear;
pub mod oracle;
pub mod run;

pub use error::{KinvError, Result};
pub use field::{GridFunction2, GridFunction3, NormReport};
pub use geometry::{Geometry, PhaseGrid, Side};
pub use model::{AlphaSpec, Expr, Mode, ProblemConfig, ProblemSpec};
