use thiserror::Error;

/// Errors produced by the geometry and spectral routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A Jacobi field lost rank: the geodesic carries a conjugate point.
    #[error("conjugate point at t = {t:.9}")]
    ConjugatePoint { t: f64 },

    #[error("integration produced a non-finite state after t = {last_valid:.6}")]
    Overflow { last_valid: f64 },

    #[error("matrix is numerically singular at t = {t:.6} (cond = {cond:.3e})")]
    Singular { t: f64, cond: f64 },

    #[error("time {t} outside of covered range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// The growth-matrix tail did not settle before the profile horizon.
    #[error("growth matrix did not converge by T = {t_used} (last increment {increment:.3e})")]
    NotConverged { t_used: f64, increment: f64 },

    #[error("trajectories do not share the same curvature profile")]
    ProfileMismatch,

    #[error("parallel frame drifted from orthonormality by {drift:.3e} at t = {t:.4}")]
    FrameDrift { t: f64, drift: f64 },

    #[error("metric is near-singular at t = {t:.4} (cond = {cond:.3e})")]
    DegenerateMetric { t: f64, cond: f64 },

    #[error("lattice enumeration of {points} points exceeds the cap of {cap}")]
    EnumerationCap { points: u128, cap: u128 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeoError {
    fn from(err: std::io::Error) -> Self {
        GeoError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GeoError>;
