use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("measure has no atoms")]
    EmptyMeasure,
    #[error("atom index alpha = {0} lies outside [-1, 1]")]
    AlphaOutOfRange(f64),
    #[error("atom weight {0} is not positive")]
    NonPositiveWeight(f64),
    #[error("duplicate atom at alpha = {0}")]
    DuplicateAlpha(f64),
    #[error("every atom has alpha = 0; the individual critical mass is an infimum over an empty family")]
    AllAlphaZero,
    #[error("{count} atoms of one sign exceed the exhaustive-enumeration limit of {limit}")]
    TooManyAtoms { count: usize, limit: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has {found} entries, grid has {expected} interior cells")]
    FieldLength { expected: usize, found: usize },
    #[error("density has {found} species, measure has {expected} atoms")]
    SpeciesCount { expected: usize, found: usize },
    #[error("density is negative (min {min:e}) in species {species}")]
    NegativeDensity { species: usize, min: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolveResidual { residual: f64, tolerance: f64 },
    #[error("cell {cell} lies within {distance:.3e} of the boundary, at least {required:.3e} required")]
    TooCloseToBoundary { cell: usize, distance: f64, required: f64 },

    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("exponent {exponent:.3e} exceeds the overflow guard {limit}")]
    ExponentOverflow { exponent: f64, limit: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("time step {dt:e} exceeds the CFL bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("at t = {time:e}: {source}")]
    AtTime { time: f64, source: Box<Error> },

    #[error("no atoms of the measure fall in the selected band")]
    EmptyBand,
    #[error("bubble under-resolved: epsilon {epsilon:e} < 4h = {limit:e}")]
    UnderResolved { epsilon: f64, limit: f64 },
    #[error("invalid epsilon ladder: {0}")]
    InvalidLadder(String),
    #[error("degenerate fit: {0} usable points, at least 4 required")]
    DegenerateFit(usize),

    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
