use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("site index {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("invalid keep set: {0}")]
    InvalidKeepSet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("impossible measurement outcome (probability {0:.3e})")]
    ImpossibleOutcome(f64),

    #[error("register of {qubits} qubits exceeds the dense limit of {limit}")]
    SizeOverflow { qubits: usize, limit: usize },

    #[error("degenerate ground state: specify manifold vector")]
    DegenerateGroundState,

    #[error("invalid parameters: {0}")]
    InvalidSpec(String),

    #[error("coupling graph is disconnected: {0}")]
    DisconnectedGraph(String),

    #[error("star geometry violated: sin(pi/2N) > 1/(M + 20*sqrt(10)/3) fails for N={n_outer}, M={m_chain}")]
    GeometryViolation { n_outer: usize, m_chain: usize },

    #[error("disorder sampling failed: {0}")]
    Sampling(String),

    #[error("integrator step size underflow at t={0:.6e}")]
    StepUnderflow(f64),

    #[error("trace drift {drift:.3e} at t={t:.6e} exceeds tolerance")]
    TraceDrift { t: f64, drift: f64 },

    #[error("state lies outside the 0+1 excitation span (weight {0:.3e})")]
    OutsideSectorSpan(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("signal amplitude {0:.3e} too small to fit")]
    AmplitudeTooSmall(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Physics,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | Io(_) | InvalidSpec(_) => ErrorClass::Config,
            DisconnectedGraph(_) | GeometryViolation { .. } | DegenerateGroundState => ErrorClass::Physics,
            _ => ErrorClass::Numerical,
        }
    }

    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            SiteOutOfRange { .. } => "site-out-of-range",
            InvalidKeepSet(_) => "invalid-keep-set",
            DimensionMismatch { .. } => "dimension-mismatch",
            NotPowerOfTwo(_) => "not-power-of-two",
            NotHermitian(_) => "not-hermitian",
            InvalidDensity(_) => "invalid-density",
            ImpossibleOutcome(_) => "impossible-outcome",
            SizeOverflow { .. } => "size-overflow",
            DegenerateGroundState => "degenerate-ground-state",
            InvalidSpec(_) => "invalid-spec",
            DisconnectedGraph(_) => "disconnected-graph",
            GeometryViolation { .. } => "geometry-violation",
            Sampling(_) => "sampling",
            StepUnderflow(_) => "step-underflow",
            TraceDrift { .. } => "trace-drift",
            OutsideSectorSpan(_) => "outside-sector-span",
            InsufficientData(_) => "insufficient-data",
            AmplitudeTooSmall(_) => "amplitude-too-small",
            Config(_) => "invalid-config",
            Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
