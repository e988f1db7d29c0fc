use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // pedigree
    #[error("parent `{parent}` of `{child}` is not listed in the pedigree")]
    MissingParent { child: String, parent: String },
    #[error("pedigree cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("duplicate individual id `{0}`")]
    DuplicateId(String),
    #[error("members of MZ group `{0}` do not share both parents")]
    MzGroupParentMismatch(String),
    #[error("family proportions must be non-negative and sum to 1 (got sum {0})")]
    InvalidProportions(f64),

    // shared shape/dimension checks
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty sample")]
    EmptySample,

    // spd
    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("channel {0} has zero variance")]
    DegenerateChannel(usize),

    // lddmm
    #[error("degenerate landmark configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("non-finite state during integration at step {0}")]
    NonFiniteState(usize),
    #[error("no descent: {0}")]
    NoDescent(String),

    // tangent stats
    #[error("rank-deficient design; collinear columns: {0:?}")]
    RankDeficientDesign(Vec<usize>),
    #[error("truncation {requested} exceeds the maximum {max}")]
    TruncationTooLarge { requested: usize, max: usize },

    // variance components
    #[error("kinship matrix is not PSD (min eigenvalue {0:e})")]
    KNotPsd(f64),
    #[error("fixed-effect design is rank deficient")]
    DesignRankDeficient,
    #[error("row covariance ill-conditioned (condition number {0:e})")]
    SingularRowCovariance(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),

    // cca
    #[error("covariance block `{0}` is not positive definite; increase ridge")]
    BlockNotPd(String),
    #[error("requested {requested} modes but at most {max} exist")]
    TooManyModes { requested: usize, max: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::NonFiniteState(_)
                | Error::NoDescent(_)
                | Error::RankDeficientDesign(_)
                | Error::TruncationTooLarge { .. }
                | Error::KNotPsd(_)
                | Error::DesignRankDeficient
                | Error::SingularRowCovariance(_)
                | Error::BlockNotPd(_)
                | Error::DegenerateChannel(_)
                | Error::DegenerateConfiguration(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.as_ref().display().to_string(), msg: msg.into() }
    }
}
