use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Parameter errors are separated from the rest so the command line can map
/// them onto a dedicated exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("content dimension out of range: {0}")]
    ContentDimension(f64),
    #[error("region exceeds dyadic root")]
    RegionExceedsRoot,
    #[error("empty support")]
    EmptySupport,
    #[error("function not integrable on ball")]
    NotIntegrable,
    #[error("no admissible reduction")]
    NoAdmissibleReduction,
    #[error("evaluation at pole")]
    EvaluationAtPole,
    #[error("atom at origin")]
    AtomAtOrigin,
    #[error("degenerate series")]
    DegenerateSeries,
    #[error("tail exhausted")]
    TailExhausted,
    #[error("disk touches annulus edge (n = {0})")]
    DiskTouchesEdge(usize),
    #[error("balance required")]
    BalanceRequired,
    #[error("singularity inside support")]
    SingularityInsideSupport,
    #[error("cover does not isolate poles")]
    PolesNotIsolated,
    #[error("nonpositive terms")]
    NonpositiveTerms,
    #[error("too few terms: need at least {needed}, got {got}")]
    TooFewTerms { needed: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by parameters violating their invariants.
    pub fn is_parameter_error(&self) -> bool {
        matches!(self, Error::InvalidParams(_) | Error::ContentDimension(_) | Error::NoAdmissibleReduction)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
