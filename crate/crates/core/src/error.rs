use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("coupling table line {line}: {message}")]
    TableParse { line: usize, message: String },

    #[error("empty system: every orbital of the supercell was removed")]
    EmptySystem,

    #[error("overlap matrix is not positive definite at k = ({}, {})", .k[0], .k[1])]
    NotPositiveDefinite { k: [f64; 2] },

    #[error("eigensolver did not converge at k = ({}, {}) for dimension {dim}", .k[0], .k[1])]
    NoConvergence { k: [f64; 2], dim: usize },

    #[error("eigenvalue {energy} eV lies outside the energy grid [{lo}, {hi}] widened by the smoothing width")]
    EnergyOutOfRange { energy: f64, lo: f64, hi: f64 },

    #[error("{units} removable units exceed the enumeration cap of {cap}; use sampling instead")]
    EnumerationTooLarge { units: usize, cap: usize },

    #[error("MC offers no asymptotic benefit (C = {c} <= S = {s}); use fixed-sample mode")]
    NoMonteCarloBenefit { c: f64, s: f64 },

    #[error("task {label} failed: {message}")]
    TaskFailed { index: usize, label: String, message: String },

    #[error("level {level} failed after {completed_levels} completed level(s): {source}")]
    LevelFailed {
        level: usize,
        completed_levels: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::EmptySystem
            | Error::NotPositiveDefinite { .. }
            | Error::NoConvergence { .. }
            | Error::EnergyOutOfRange { .. }
            | Error::TaskFailed { .. } => true,
            Error::LevelFailed { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
