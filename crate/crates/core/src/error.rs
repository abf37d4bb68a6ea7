use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The effective field vanished, so the instantaneous eigenbasis is undefined.
    #[error("degenerate effective field |b| = {magnitude:e} rad/s{}", at_time(*.t))]
    DegenerateField { magnitude: f64, t: Option<f64> },

    #[error("initial state aligns with neither eigenstate (overlaps {overlap_plus:.9}, {overlap_minus:.9})")]
    AmbiguousAlignment {
        overlap_plus: f64,
        overlap_minus: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ODE solver failed at t = {t:e}: {reason}")]
    SolverFailure { t: f64, reason: String },

    #[error("adiabaticity metric has imaginary residue {imag:e}")]
    NonRealMetric { imag: f64 },

    #[error("perturbation has zero integrated norm; set p_per = 0 instead")]
    ZeroPerturbation,

    #[error("line search could not make progress")]
    StepUnderflow,

    #[error("optimizer exhausted {restarts} restarts; best target {best_phi}")]
    NoConvergence { restarts: usize, best_phi: f64 },

    #[error("{spins} spins exceed the dense multi-spin limit of {max}")]
    DimensionTooLarge { spins: usize, max: usize },

    #[error("weight table does not overlap the response abscissa")]
    EmptyOverlap,

    #[error("member {label}: {source}")]
    Member {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("grid point {index} ({abscissa:e}): {source}")]
    GridPoint {
        index: usize,
        abscissa: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t:e} s"),
        None => String::new(),
    }
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn for_member(self, label: &str) -> Self {
        Error::Member {
            label: label.to_string(),
            source: Box::new(self),
        }
    }

    /// Attach a time stamp to a field degeneracy raised without one.
    pub(crate) fn at(self, t: f64) -> Self {
        match self {
            Error::DegenerateField { magnitude, t: None } => Error::DegenerateField {
                magnitude,
                t: Some(t),
            },
            other => other,
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateField { .. } => "DegenerateField",
            Error::AmbiguousAlignment { .. } => "AmbiguousAlignment",
            Error::Domain(_) => "DomainError",
            Error::SolverFailure { .. } => "SolverFailure",
            Error::NonRealMetric { .. } => "NonRealMetric",
            Error::ZeroPerturbation => "ZeroPerturbation",
            Error::StepUnderflow => "StepUnderflow",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DimensionTooLarge { .. } => "DimensionTooLarge",
            Error::EmptyOverlap => "EmptyOverlap",
            Error::Member { source, .. } | Error::GridPoint { source, .. } => source.kind(),
            Error::Config { .. } => "ConfigError",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
