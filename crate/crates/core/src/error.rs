use thiserror::Error;

/// Every failure mode reported by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({0}, {1}) lies outside the parameter domain")]
    Domain(f64, f64),
    #[error("point ({0}, {1}) is too close to the domain boundary for the difference stencil")]
    Margin(f64, f64),
    #[error("surface is not hyperbolic at ({0}, {1}): curvature {2}")]
    NotHyperbolic(f64, f64, f64),
    #[error("tangent vector is characteristic (second form vanishes on it)")]
    Characteristic,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("incompatible curves: {0}")]
    IncompatibleCurves(String),
    #[error("near-singular evaluation: {0}")]
    NearSingular(String),
    #[error("Picard iteration failed to contract on {piece} (ratios {ratios:?})")]
    ContractionFailure { piece: String, ratios: Vec<f64> },
    #[error("instance unsolvable after maximum subdivision depth: {0}")]
    Unsolvable(String),
    #[error("boundary data does not match the region kind: {0}")]
    DataMismatch(String),
    #[error("locus does not meet the region")]
    EmptyTrace,
    #[error("chart folds or leaves the surface: {0}")]
    ExtentTooLarge(String),
    #[error("asymptotic direction tracking became ambiguous: {0}")]
    DiscontinuousField(String),
    #[error("curve is not transversal in normal form: {0}")]
    NotTransversal(String),
    #[error("chart is degenerate: {0}")]
    DegenerateChart(String),
    #[error("pasting inconsistency: overlap discrepancy {discrepancy} exceeds bound {bound}")]
    PastingInconsistency { discrepancy: f64, bound: f64 },
    #[error("unsupported connection: {0}")]
    UnsupportedConnection(String),
    #[error("shell thickness too large for an injective normal map: t|k| = {0}")]
    InvalidShell(f64),
    #[error("basis not saturated: {0}")]
    Unsaturated(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("malformed dump: {0}")]
    Format(String),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
