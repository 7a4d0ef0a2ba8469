use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no unique steady state")]
    NoUniqueSteadyState,

    #[error("no dark state resonance")]
    NoDarkStateResonance,

    #[error("grid point {index}: {source}")]
    AtGridPoint { index: usize, source: Box<Error> },

    #[error("lock point outside grid")]
    LockPointOutsideGrid,

    #[error("no optical feedback")]
    NoOpticalFeedback,

    #[error("grid underspans thermal state")]
    GridUnderspansThermalState,

    #[error("mismatched grids")]
    MismatchedGrids,

    #[error("solver diverged")]
    SolverDiverged,

    #[error("numerically singular operator")]
    SingularOperator,

    #[error("grid too coarse for requested delay")]
    GridTooCoarse,

    #[error("non-uniform delays")]
    NonUniformDelays,

    #[error("no decay to fit")]
    NoDecayToFit,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("trajectory escaped grid")]
    TrajectoryEscaped,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_point(index: usize, source: Error) -> Self {
        Error::AtGridPoint {
            index,
            source: Box::new(source),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage and grid-point wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::AtGridPoint { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether this is a numerical failure (divergence, singularity) rather
    /// than a bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NoUniqueSteadyState
                | Error::SolverDiverged
                | Error::SingularOperator
                | Error::TrajectoryEscaped
                | Error::NoDarkStateResonance
                | Error::NoOpticalFeedback
                | Error::NoDecayToFit
        )
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
