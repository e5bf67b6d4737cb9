use alloc::string::String;

/// Which block of the mixed model coefficient matrix lost positive definiteness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotBlock {
    /// The `XᵀR⁻¹X` block.
    Fixed,
    /// The Schur complement attached to the random effects.
    Random,
}

impl core::fmt::Display for PivotBlock {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PivotBlock::Fixed => f.write_str("fixed-effects block"),
            PivotBlock::Random => f.write_str("random-effects block"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("infeasible parameter at theta index {index}: {reason}")]
    InfeasibleParams { index: usize, reason: String },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range for {len} structure parameters")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("fixed-effects design has rank {rank} < {columns} columns")]
    RankDeficientX { rank: usize, columns: usize },

    #[error("mixed model coefficient matrix is singular in the {block}")]
    SingularCoefficientMatrix { block: PivotBlock },

    #[error("curvature matrix is singular or indefinite (ridge escalated to {ridge:e})")]
    SingularCurvature { ridge: f64 },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("{required} replicates required, got {got}")]
    StatisticalFloor { required: usize, got: usize },

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
