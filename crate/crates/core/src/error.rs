//! Crate-wide error type. Every fallible operation returns [`Result`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A field was built for a different mode cutoff than the operation expects.
    #[error("cutoff mismatch: field is {found_nx}x{found_ny}, expected {want_nx}x{want_ny}")]
    CutoffMismatch {
        found_nx: usize,
        found_ny: usize,
        want_nx: usize,
        want_ny: usize,
    },

    /// A time or shift does not lie on the sampling grid.
    #[error("time {value} is not a multiple of the grid step {dt} (tolerance {tol})")]
    OffGrid { value: f64, dt: f64, tol: f64 },

    /// A requested window leaves the sampled window of a path or trajectory.
    #[error("requested window [{want_lo}, {want_hi}] exceeds available [{have_lo}, {have_hi}]")]
    WindowExceeded {
        want_lo: f64,
        want_hi: f64,
        have_lo: f64,
        have_hi: f64,
    },

    /// Configuration or parameter set rejected before any computation ran.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The noise spectrum fails the summability requirement.
    #[error("inadmissible noise spectrum: {0}")]
    InadmissibleNoise(String),

    /// The solution left the trust region; `last_good` is the final finite time.
    #[error("solution blew up after t = {last_good} (|v| > {threshold:e})")]
    BlowUp { last_good: f64, threshold: f64 },

    /// A search exhausted its budget without meeting its target.
    #[error("search failed: {0}")]
    SearchFailed(String),

    /// Malformed binary or text artifact.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
