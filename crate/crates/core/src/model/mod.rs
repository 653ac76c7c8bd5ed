//! Problem definition: coefficient expressions, nonlinearities, config
//! ingestion, and hypothesis validation.

pub mod alpha;
pub mod expr;
pub mod problem;
pub mod validate;

pub use alpha::{check_alpha, AlphaCheck, AlphaSpec};
pub use expr::{Bindings, Expr, Var};
pub use problem::{
    scattering_integral, CoefficientsConfig, DataConfig, FieldSource, GridConfig, JacobianMethod,
    Mode, ProblemConfig, ProblemSpec, QTermConfig, Scattering, SeparableTerm, SolverConfig,
};
pub use validate::{validate_problem, Severity, Violation};
