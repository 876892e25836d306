use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The heat kernel at total time zero is a delta, not a function.
    #[error("degenerate time: kernel requested at t + epsilon = {0}")]
    DegenerateTime(f64),

    #[error("{name} = {value} lies outside {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("time {t} exceeds the horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    #[error("quadrature order {0} is too small (need at least 2)")]
    QuadratureOrder(usize),

    #[error("derivative order {0} is not one of 0, 1, 2")]
    DerivativeOrder(usize),

    #[error("unknown observable `{0}`")]
    UnknownObservable(String),

    #[error("unknown space window `{0}`")]
    UnknownWindow(String),

    #[error("path was sampled without driving increments (scheme {0})")]
    MissingIncrements(&'static str),

    #[error("time grid is not uniform: {0}")]
    NonUniformGrid(String),

    #[error("a strictly positive epsilon is required, got {0}")]
    EpsilonRequired(f64),

    #[error("insufficient modes: {0}")]
    InsufficientModes(String),

    #[error("numerical resolution: {0}")]
    Resolution(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("golden file not found: {0}")]
    GoldenMissing(String),

    #[error("report shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, range: &'static str) -> Self {
        Error::Domain { name, value, range }
    }

    /// Whether the error stems from a numerical resolution limit rather
    /// than malformed input.
    pub fn is_resolution(&self) -> bool {
        matches!(
            self,
            Error::Resolution(_) | Error::InsufficientModes(_) | Error::DegenerateTime(_)
        )
    }
}

pub(crate) fn check_unit_interval(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(name, x, "[0, 1]"))
    }
}

pub(crate) fn check_nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, v, "[0, inf)"))
    }
}
