use std::fmt;

/// Unified error type for the crate. Variants distinguish caller mistakes
/// (bad family strings, parameters out of range) from numerical failures
/// (no bracket, undetermined classification, quadrature breakdown).
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Unknown family name in a spec string.
    BadFamily(String),
    /// Parameter outside the family's admissible range, or malformed input.
    BadParameter(String),
    /// A computed quantity became NaN or infinite.
    NonFinite { what: String, at: f64 },
    /// Sign-based bracketing failed to find a sign change.
    NoBracket(String),
    /// Requested evaluation point lies outside the available range.
    OutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// Evaluation requested outside a functional's domain of validity.
    Domain(String),
    /// Shooting requires the initial height to exceed the dead-core edge.
    AlphaNotAboveB { alpha: f64, b: f64 },
    /// Both bracket endpoints classified to the same side.
    BracketSameSide { lo: f64, hi: f64, side: String },
    /// Bracket endpoints both sit at (numerically) zero residual.
    DegenerateBracket { lo: f64, hi: f64 },
    /// A trajectory could not be classified even after refinement retries.
    Undetermined { alpha: f64, reason: String },
    /// Integration reached the horizon without the event needed to proceed.
    Horizon { r_max: f64, what: String },
    /// Adaptive quadrature failed to converge.
    Quadrature(String),
    /// Internal numerical failure (step control stall, polish divergence).
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BadFamily(name) => write!(f, "unknown family `{name}`"),
            Error::BadParameter(msg) => write!(f, "bad parameter: {msg}"),
            Error::NonFinite { what, at } => write!(f, "{what} is not finite at {at:e}"),
            Error::NoBracket(msg) => write!(f, "no bracket: {msg}"),
            Error::OutOfRange {
                what,
                value,
                lo,
                hi,
            } => {
                write!(f, "{what} = {value:e} outside [{lo:e}, {hi:e}]")
            }
            Error::Domain(msg) => write!(f, "domain violation: {msg}"),
            Error::AlphaNotAboveB { alpha, b } => {
                write!(f, "initial height {alpha:e} does not exceed b = {b:e}")
            }
            Error::BracketSameSide { lo, hi, side } => {
                write!(
                    f,
                    "bracket [{lo:e}, {hi:e}] classifies to the same side ({side})"
                )
            }
            Error::DegenerateBracket { lo, hi } => {
                write!(
                    f,
                    "bracket [{lo:e}, {hi:e}] is degenerate: residual vanishes at both ends"
                )
            }
            Error::Undetermined { alpha, reason } => {
                write!(
                    f,
                    "classification undetermined at alpha = {alpha:e}: {reason}"
                )
            }
            Error::Horizon { r_max, what } => {
                write!(f, "reached r_max = {r_max:e} without {what}")
            }
            Error::Quadrature(msg) => write!(f, "quadrature failure: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
