use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("degenerate element {element}: measure {measure:e}")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("flow degenerates element {element} at t={t}: measure ratio {ratio:e}")]
    FlowDegenerate { element: usize, t: f64, ratio: f64 },

    #[error("non-finite velocity at vertex {vertex}, t={t}")]
    NonFiniteVelocity { vertex: usize, t: f64 },

    #[error("flow has no inverse: {0}")]
    MissingInverse(String),

    #[error("time {t} outside [0, {t_final}]")]
    TimeOutOfRange { t: f64, t_final: f64 },

    #[error("diffusion tensor invalid at element {element}: {reason}")]
    InvalidDiffusion { element: usize, reason: String },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e}){}", level_suffix(.level))]
    CgFailed {
        iterations: usize,
        residual: f64,
        level: Option<usize>,
    },

    #[error("point not located on any element (distance {distance:e})")]
    PointNotLocated { distance: f64 },

    #[error("{0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn level_suffix(level: &Option<usize>) -> String {
    match level {
        Some(l) => format!(" at time level {l}"),
        None => String::new(),
    }
}

impl Error {
    /// True for failures of the numerics (solver, flow), as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FlowDegenerate { .. }
                | Error::NonFiniteVelocity { .. }
                | Error::CgFailed { .. }
                | Error::PointNotLocated { .. }
                | Error::Numerical(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        if self.is_numerical() {
            "numerical"
        } else if matches!(self, Error::Io(_)) {
            "io"
        } else {
            "validation"
        }
    }

    pub(crate) fn at_level(self, level: usize) -> Self {
        match self {
            Error::CgFailed {
                iterations,
                residual,
                ..
            } => Error::CgFailed {
                iterations,
                residual,
                level: Some(level),
            },
            other => other,
        }
    }
}
