use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate distribution: all entries are zero")]
    DegenerateDistribution,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward requires a 1x1 output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("k = {k} must be below the region count {n}")]
    TopKTooLarge { k: usize, n: usize },
    #[error("no views selected")]
    EmptyViews,
    #[error("unknown view `{0}`; valid views: neighbor, poi, mobility, income, age, education, employment, foreign_born")]
    UnknownView(String),
    #[error("demographic attribute `{0}` is absent from the dataset")]
    MissingAttribute(String),
    #[error("trip matrix is all zero but the mobility view was requested")]
    EmptyTrips,
    #[error("every mobility row is masked")]
    AllRowsMasked,
    #[error("neighbor loss needs at least one neighbor pair and one non-neighbor pair")]
    NoTripletPairs,
    #[error("similarity row {0} has no positive off-diagonal entry")]
    EmptySimilarityRow(usize),
    #[error("k = {k} folds is invalid for {n} samples")]
    InvalidFolds { k: usize, n: usize },
    #[error("ridge system is singular")]
    SingularSystem,
    #[error("task `{0}` has no labels")]
    UnknownTask(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parameter became non-finite at epoch {0}")]
    NonFinite(usize),
    #[error("dataset failed validation: {0}")]
    InvalidDataset(String),
}

pub type Result<T> = core::result::Result<T, Error>;
