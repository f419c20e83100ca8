use thiserror::Error;

/// Errors raised by the engine, grouped by the module contract they break.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is absent from the input header.
    #[error("schema error: missing column '{column}'")]
    Schema { column: String },

    /// A cell could not be parsed as a date or number.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// An input value breaks a data invariant (non-monotone cumulative
    /// counts, gaps in the date grid, inconsistent population, ...).
    #[error("data error for region '{region}' on {date}: {message}")]
    Data {
        region: String,
        date: String,
        message: String,
    },

    /// Series passed to the panel builder do not share a date range.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// An argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// A region key does not belong to the known region set.
    #[error("reference error: unknown region key '{key}'")]
    Reference { key: String },

    /// The indicator column is constant, so the threshold effect cannot
    /// be identified.
    #[error("degenerate design: indicator column is constant for c={threshold_c}, lag={lag}")]
    DegenerateDesign { threshold_c: f64, lag: usize },

    /// A conditional precision matrix failed to factorize while sampling.
    #[error("numeric error in block '{block}' at iteration {iteration}: Cholesky factorization failed")]
    Numeric { block: String, iteration: usize },

    /// A diagnostic quantity is unusable (e.g. non-finite deviance).
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// Every cell of a scan grid was skipped.
    #[error("scan error: {0}")]
    Scan(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
