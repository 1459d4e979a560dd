use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group element: determinant {det} differs from 1 by more than {tol:e}")]
    InvalidElement { det: f64, tol: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular configuration: denominator {denominator:e} at t={t}, u={u}, theta={theta}")]
    SingularConfiguration { denominator: f64, t: f64, u: f64, theta: f64 },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Precision { achieved: f64, requested: f64 },

    #[error("spectral function tail is not integrable without a tail model: {0}")]
    TailModelRequired(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("calibration mismatch: {what} (difference {difference:e}, tolerance {tolerance:e})")]
    Calibration { what: String, difference: f64, tolerance: f64 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("finite differences disagree under step halving (relative gap {gap:e}); input is not smooth")]
    Differentiation { gap: f64 },

    #[error("interface mismatch: {0}")]
    Interface(String),

    #[error("ingestion error at byte {offset}: {message}")]
    Ingestion { offset: u64, message: String },

    #[error("spectral parameter {s} outside window [{lo}, {hi}]")]
    WindowViolation { s: f64, lo: f64, hi: f64 },

    #[error("ill-conditioned Gram matrix (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
