use thiserror::Error;

/// Errors raised by the spectral, dynamics, selection and harness layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigen-solver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no connected graph after {attempts} draws with n={n_agents}, p={edge_probability}")]
    RejectionLimit {
        attempts: usize,
        n_agents: usize,
        edge_probability: f64,
    },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("agent index {index} out of range for {n_agents} agents")]
    InvalidAgent { index: usize, n_agents: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("metric weight k_n={k_n} is infeasible for lambda_2,l={lambda2l} (need lambda^2 (4 k_n k_p k_u - k_u^2) > 1)")]
    InfeasibleMetricWeight { k_n: f64, lambda2l: f64 },

    #[error("infeasible second-order gains: {0}")]
    InfeasibleGains(String),

    #[error("certificate mismatch: {0}")]
    CertificateMismatch(String),

    #[error("nomination target {target} is outside the candidate set")]
    NominationOutsideCandidates { target: usize },

    #[error("consensus filter diverged (norm {0:e})")]
    FilterDiverged(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical divergence at t={t}: metric {metric:e}")]
    Divergence { t: f64, metric: f64 },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSymmetric(_) => "not_symmetric",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Disconnected => "disconnected",
            Error::RejectionLimit { .. } => "rejection_limit",
            Error::InvalidTopology(_) => "invalid_topology",
            Error::InvalidAgent { .. } => "invalid_agent",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InfeasibleMetricWeight { .. } => "infeasible_metric_weight",
            Error::InfeasibleGains(_) => "infeasible_gains",
            Error::CertificateMismatch(_) => "certificate_mismatch",
            Error::NominationOutsideCandidates { .. } => "nomination_outside_candidates",
            Error::FilterDiverged(_) => "filter_diverged",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }
}
