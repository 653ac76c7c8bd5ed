use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = KinvError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KinvError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid field: {0}")]
    Field(String),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown name `{name}` at offset {offset}")]
    UnknownName { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {}", summarize(.0))]
    Validation(Vec<Violation>),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solution blew up: sup norm {norm:e} at time level {level}")]
    BlowUp { norm: f64, level: usize },
    #[error("Picard iteration diverged after {iterations} iterations (residual {residual:e})")]
    PicardDivergence { iterations: usize, residual: f64 },
    #[error("Picard iteration did not converge in {iterations} iterations (residual {residual:e})")]
    PicardMaxIterations { iterations: usize, residual: f64 },
    #[error("line search failed at Newton iteration {iteration}: outside local basin, reduce psi magnitude")]
    LineSearch { iteration: usize, residual: f64 },
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonMaxIterations { iterations: usize, residual: f64 },
    #[error("Jacobian solve failed: {0}")]
    JacobianSolve(String),
    #[error("operation requires a linear problem: {0}")]
    Nonlinear(String),
    #[error("ill-conditioned system: condition estimate {0:e}")]
    IllConditioned(f64),
}

fn summarize(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

impl KinvError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this failure: 2 validation, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Geometry(_)
            | Self::Grid(_)
            | Self::Field(_)
            | Self::Syntax { .. }
            | Self::UnknownName { .. }
            | Self::Unbound(_)
            | Self::Domain(_)
            | Self::Config(_)
            | Self::Validation(_)
            | Self::Nonlinear(_) => 2,
            Self::Io { .. } => 4,
            Self::BlowUp { .. }
            | Self::PicardDivergence { .. }
            | Self::PicardMaxIterations { .. }
            | Self::LineSearch { .. }
            | Self::NewtonMaxIterations { .. }
            | Self::JacobianSolve(_)
            | Self::IllConditioned(_) => 3,
        }
    }
}
