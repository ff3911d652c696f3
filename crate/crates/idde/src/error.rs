use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Numerical failures carry enough context to be
/// reported machine-readably by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weight mismatch: eta {left} vs {right}")]
    EtaMismatch { left: f64, right: f64 },

    #[error("invalid functional spec: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("characteristic matrix near-singular at lambda = {lambda:?} (|det| = {det_abs:.3e})")]
    NearSingular { lambda: (f64, f64), det_abs: f64 },

    #[error("kernel pole too close: lambda + delta = {dist:.3e} for delta = {delta}")]
    KernelPole { delta: f64, dist: f64 },

    #[error("root too close to contour (|det| = {det_abs:.3e}); exhausted perturbation retries")]
    ContourProximity { det_abs: f64 },

    #[error("winding number failed to stabilize: {0}")]
    WindingUnstable(String),

    #[error("subdivision depth limit exceeded while isolating roots")]
    SubdivisionDepth,

    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),

    #[error("pole order could not be established at lambda = {lambda:?}: {reason}")]
    PoleOrderAmbiguous { lambda: (f64, f64), reason: String },

    #[error("Laurent block residual {residual:.3e} exceeds tolerance after radius retry")]
    LaurentResidual { residual: f64 },

    #[error("root at {lambda:?} is not simple: {reason}")]
    NotSimple { lambda: (f64, f64), reason: String },

    #[error("pole order {k0} unsupported (max 4)")]
    UnsupportedPoleOrder { k0: usize },

    #[error("no analytic linearization available for model '{0}'")]
    MissingLinearization(String),

    #[error("equilibrium search did not converge: {0}")]
    EquilibriumDivergence(String),

    #[error("non-finite state at t = {t}: {detail}")]
    NonFiniteState { t: f64, detail: String },

    #[error("branch continuation failed: {0}")]
    BranchFailure(String),

    #[error("Hopf detection failed: {0}")]
    HopfFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv format error: {0}")]
    CsvFormat(String),
}

impl Error {
    /// Stable machine-readable kind for CLI/FFI error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidHistory(_) => "invalid_history",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EtaMismatch { .. } => "eta_mismatch",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Domain(_) => "domain",
            Error::NearSingular { .. } => "near_singular",
            Error::KernelPole { .. } => "kernel_pole",
            Error::ContourProximity { .. } => "contour_proximity",
            Error::WindingUnstable(_) => "winding_unstable",
            Error::SubdivisionDepth => "subdivision_depth",
            Error::NewtonDivergence(_) => "newton_divergence",
            Error::PoleOrderAmbiguous { .. } => "pole_order_ambiguous",
            Error::LaurentResidual { .. } => "laurent_residual",
            Error::NotSimple { .. } => "not_simple",
            Error::UnsupportedPoleOrder { .. } => "unsupported_pole_order",
            Error::MissingLinearization(_) => "missing_linearization",
            Error::EquilibriumDivergence(_) => "equilibrium_divergence",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::BranchFailure(_) => "branch_failure",
            Error::HopfFailure(_) => "hopf_failure",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::CsvFormat(_) => "csv_format",
        }
    }
}
