use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// One violated invariant found while validating a model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Result of model validation. An empty report means the model is valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    /// True if some violation concerns the given field (prefix match).
    pub fn mentions(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field.starts_with(field))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid model:\n{0}")]
    Validation(ValidationReport),
    #[error("quadrature error: {0}")]
    Quadrature(String),
    #[error("root finding did not converge: {0}")]
    Convergence(String),
    #[error("state left the extended simplex: {0}")]
    Step(String),
    #[error("time step {dt:e} violates the stability bound; need dt <= {required:e}")]
    Cfl { dt: f64, required: f64 },
    #[error("value function left its a priori bounds: {0}")]
    Divergence(String),
    #[error("constraint set is empty: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Config(_) => "ConfigError",
            Error::Validation(_) => "ConfigError",
            Error::Quadrature(_) => "QuadratureError",
            Error::Convergence(_) => "ConvergenceError",
            Error::Step(_) => "StepError",
            Error::Cfl { .. } => "CflError",
            Error::Divergence(_) => "DivergenceError",
            Error::Infeasible(_) => "InfeasibleError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "ConfigError",
            Error::Csv(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
