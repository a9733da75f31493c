use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while building keys, schedules or running a
/// simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid spacing {spacing:.3e} L is too coarse for correlation length {sigma:.3e} L (need spacing <= {required:.3e} L, i.e. at least {min_cells} cells)")]
    GridTooCoarse {
        spacing: f64,
        sigma: f64,
        required: f64,
        min_cells: usize,
    },

    #[error("correlation length {sigma:.3e} L exceeds the key span {span:.3e} L")]
    CorrelationTooLong { sigma: f64, span: f64 },

    #[error("section [{offset:.6e}, {end:.6e}] lies outside the master key [0, {master:.6e}]")]
    SectionOutOfRange { offset: f64, end: f64, master: f64 },

    #[error("keys live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },

    #[error("time {t:.6e} tau lies outside the simulation window [0, {t_end:.6e}]")]
    OutsideWindow { t: f64, t_end: f64 },

    #[error("switch windows must satisfy t_off < encrypt < decrypt < t_on: {reason}")]
    WindowOrdering { reason: String },

    #[error("time step {dt:.3e} tau exceeds the stability/resolution limit {max:.3e} tau; use at least {suggested_steps} steps")]
    StepTooLarge { dt: f64, max: f64, suggested_steps: usize },

    #[error("discontinuity at t = {t:.6e} tau is not aligned with the time grid (dt = {dt:.3e})")]
    Misaligned { t: f64, dt: f64 },

    #[error("non-finite field encountered at t = {t:.6e} tau (step {step})")]
    NonFinite { t: f64, step: usize },

    #[error("density-matrix invariants violated: trace error {max_trace_error:.3e}, populations in [{min_population:.3e}, {max_population:.3e}]; refine the grid")]
    InvariantViolated {
        max_trace_error: f64,
        min_population: f64,
        max_population: f64,
    },

    #[error("input pulse carries no energy")]
    ZeroInputEnergy,

    #[error("config {path}: {message} (field `{field}`, line {line}, column {column})")]
    Config {
        path: PathBuf,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config {path} rejected: {source}")]
    ConfigRejected {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {context}: {reason}")]
    Format { context: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
