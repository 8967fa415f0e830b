//! Error type shared across the library.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of model validation, enumeration, regression and estimation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model callback or dimension is inconsistent (wrong output length,
    /// non-finite value at the initial state, zero dimensions, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Exact enumeration would exceed the work budget. `used` counts one-step
    /// expansions performed before giving up.
    #[error("enumeration budget exceeded: used {used} of {max_work} work units")]
    BudgetExceeded { used: u64, max_work: u64 },

    /// The Gram matrix of the regression basis is numerically singular even
    /// after the ridge fallback. `cond` is the eigenvalue-ratio estimate.
    #[error("singular Gram matrix at step {step}: condition estimate {cond:.3e}")]
    SingularGram { step: usize, cond: f64 },

    /// Adaptive quadrature failed to reach the requested tolerance within the
    /// node budget.
    #[error("quadrature did not converge within {nodes} nodes (abs_tol {abs_tol:.3e})")]
    QuadratureNoConvergence { nodes: usize, abs_tol: f64 },

    /// A coefficient table does not match the object it is applied to
    /// (different scheme, noise dimension, step count, ...).
    #[error("coefficient table mismatch: {0}")]
    TableMismatch(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A coefficient table could not be written or read.
    #[error("table serialisation: {0}")]
    Serialisation(String),
}
