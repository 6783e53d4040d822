use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("riccati iteration did not converge after {iterations} iterations (last step {last_step:e}); pair may not be stabilizable")]
    NotStabilizable { iterations: usize, last_step: f64 },

    #[error("eigenvalue iteration failed to converge")]
    EigenNoConvergence,

    #[error("cutoff {fc} Hz must lie strictly between 0 and the Nyquist frequency {nyquist} Hz")]
    Aliasing { fc: f64, nyquist: f64 },

    #[error("fit metric undefined: measured signal is constant")]
    UndefinedFit,

    #[error("plant state blew up: {state:?}")]
    PlantBlowUp { state: Vec<f64> },

    #[error("mass matrix is singular (det = {det:e})")]
    SingularMassMatrix { det: f64 },

    #[error("plant fell over at t = {time:.3} s (theta = {theta_deg:.2} deg)")]
    PlantFellOver { time: f64, theta_deg: f64 },

    #[error("inner proportional gain is zero; closed loop cannot be inverted")]
    NonInvertibleLoop,

    #[error("identification failed: {0}")]
    IdentificationFailed(String),

    #[error("inner LQR loop is not stable (spectral radius {0:.6}); dual-mode prediction needs a stable inner loop")]
    UnstableInnerLoop(f64),

    #[error("invalid QP: {0}")]
    InvalidQp(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
