use thiserror::Error;

/// Errors raised while building or solving a multiscale Stokes problem.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("active cells form {components} edge-connected components, expected one")]
    DisconnectedDomain { components: usize },

    #[error("no active cell survives the perforation mask")]
    EmptyDomain,

    #[error("fine grid with {nx} cells is not a refinement of a coarse grid with {coarse} blocks")]
    IncompatibleRefinement { nx: usize, coarse: usize },

    #[error("coarse block ({bx}, {by}) splits into {components} disconnected pieces")]
    DisconnectedBlock { bx: usize, by: usize, components: usize },

    #[error("matrix is not symmetric positive definite (pivot {pivot:e} at row {row})")]
    NotSpd { row: usize, pivot: f64 },

    #[error("saddle-point system is singular (estimated rank deficiency {rank_deficiency}, residual {residual:e})")]
    SingularSystem { rank_deficiency: usize, residual: f64 },

    #[error("generalized eigenproblem is degenerate: {0}")]
    DegeneratePencil(String),

    #[error("block {block}: eigenvalue {index} is zero, too few auxiliary modes to control the block")]
    ZeroLambda { block: usize, index: usize },

    #[error("block {block}: constrained pressure space has dimension {dim}, {required} modes requested")]
    EmptyConstraintSpace { block: usize, dim: usize, required: usize },

    #[error("oversampling region of block {block} has no free velocity degrees of freedom")]
    EmptyRegion { block: usize },

    #[error("coarse velocity matrix is numerically singular (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficientBasis { min_eigenvalue: f64, null_combination: Vec<f64> },

    #[error("pressure recovery system is singular (smallest singular value {smallest_singular_value:e})")]
    SingularPressureSystem { smallest_singular_value: f64 },

    #[error("forcing expression: {0}")]
    Expression(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::DisconnectedDomain { .. } => "DisconnectedDomain",
            Error::EmptyDomain => "EmptyDomain",
            Error::IncompatibleRefinement { .. } => "IncompatibleRefinement",
            Error::DisconnectedBlock { .. } => "DisconnectedBlock",
            Error::NotSpd { .. } => "NotSPD",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::DegeneratePencil(_) => "DegeneratePencil",
            Error::ZeroLambda { .. } => "ZeroLambda",
            Error::EmptyConstraintSpace { .. } => "EmptyConstraintSpace",
            Error::EmptyRegion { .. } => "EmptyRegion",
            Error::RankDeficientBasis { .. } => "RankDeficientBasis",
            Error::SingularPressureSystem { .. } => "SingularPressureSystem",
            Error::Expression(_) => "Expression",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
