use alloc::string::String;

/// Errors raised by the estimators and data model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },

    #[error("non-binary treatment value {value} at unit {unit}, period {period}")]
    NonBinaryTreatment { unit: String, period: String, value: f64 },

    #[error("non-finite {what} at unit {unit}, period {period}")]
    NonFinite { what: &'static str, unit: String, period: String },

    #[error("treatment switches off for unit {unit} at period {period}; treatment must be absorbing")]
    NonAbsorbingTreatment { unit: String, period: String },

    #[error("no treated unit in the panel; nothing to estimate")]
    NoTreatedUnits,

    #[error("no control unit in the panel")]
    NoControlUnits,

    #[error("treated unit {unit} has no pre-treatment periods")]
    NoPreTreatmentPeriods { unit: String },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("{what} is rank deficient: rank {rank} < required {required}")]
    RankDeficient { what: &'static str, rank: usize, required: usize },

    #[error("degenerate period {period}: the instrumented loadings are identically zero")]
    DegeneratePeriod { period: usize },

    #[error(
        "underdetermined mapping refit: {cells} treated pre-treatment cells for {parameters} \
         parameters; use a smaller number of factors"
    )]
    Underdetermined { cells: usize, parameters: usize },

    #[error(
        "Gamma'Gamma is not positive definite; the mapping matrix must be bounded away from \
         rank deficiency"
    )]
    NotPositiveDefinite,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported treatment pattern: {0}")]
    UnsupportedPattern(&'static str),

    #[error("view does not cover period {period} required by {what}")]
    MissingPeriod { what: &'static str, period: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
