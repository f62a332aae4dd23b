use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Every node of a density carries zero mass.
    ZeroMass,
    /// A non-finite value showed up where the density has positive mass.
    NonFinite,
    /// First density positive where the second vanishes.
    SupportMismatch,
    /// KDE bandwidth must be strictly positive.
    BadBandwidth,
    /// Rayleigh quotient probe is (numerically) constant under the density.
    DegenerateTestFunction,
    /// Ensembles need at least two particles.
    TooFewParticles,
    /// A simulated trajectory or particle left the finite range.
    Blowup,
    /// Time step must be strictly positive.
    BadStep,
    /// Density underflows across an interior interval of the grid.
    DegenerateDensity,
    /// Assembled linear system is singular beyond the constant null space.
    SolverFailure,
    /// Galerkin basis is empty.
    EmptyBasis,
    /// Galerkin Gram matrix is singular (e.g. a constant basis function).
    SingularGram,
    /// Poincaré constant must be strictly positive.
    BadConstant,
    /// Explicit step destroyed too much mass.
    StepTooLarge,
    /// Transport per step exceeds half the local grid spacing.
    CflViolation,
    /// Operands live on different grids.
    GridMismatch,
    /// Input failed validation.
    InvalidInput(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroMass => write!(f, "density carries no mass"),
            Error::NonFinite => write!(f, "non-finite value on positive-mass node"),
            Error::SupportMismatch => write!(f, "support mismatch: d1 > 0 where d2 = 0"),
            Error::BadBandwidth => write!(f, "bandwidth must be > 0"),
            Error::DegenerateTestFunction => write!(f, "test function is a.e. constant"),
            Error::TooFewParticles => write!(f, "ensemble needs at least 2 particles"),
            Error::Blowup => write!(f, "trajectory escaped to a non-finite value"),
            Error::BadStep => write!(f, "time step must be > 0"),
            Error::DegenerateDensity => write!(f, "density underflows on an interior interval"),
            Error::SolverFailure => write!(f, "linear solve failed"),
            Error::EmptyBasis => write!(f, "Galerkin basis is empty"),
            Error::SingularGram => write!(f, "singular Gram matrix"),
            Error::BadConstant => write!(f, "Poincaré constant must be > 0"),
            Error::StepTooLarge => write!(f, "explicit step destroyed the density mass"),
            Error::CflViolation => write!(f, "per-step transport exceeds half the grid spacing"),
            Error::GridMismatch => write!(f, "operands live on different grids"),
            Error::InvalidInput(what) => write!(f, "invalid input: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
