use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ODE integration failed at t={t:.6e} (step {step:.3e}, {steps} steps taken): {reason}")]
    Integration {
        t: f64,
        step: f64,
        steps: usize,
        reason: String,
    },

    #[error("survival mass did not converge: v(theta0)={v_cap:.12e}, v(2*theta0)={v_doubled:.12e}")]
    SurvivalNotConverged { v_cap: f64, v_doubled: f64 },

    #[error("root bracket expansion failed (upper bound reached {upper:.3e})")]
    Bracket { upper: f64 },

    #[error("grid stability violated: dt={dt:.3e} exceeds 0.4*dx^2={limit:.3e}")]
    Stability { dt: f64, limit: f64 },

    #[error("measure atom at x={x} lies within {margin:.3} of the domain boundary")]
    SupportViolation { x: f64, margin: f64 },

    #[error("event rate times dt is {rate_dt:.4}, above the 0.1 cap")]
    RateCap { rate_dt: f64 },

    #[error("statistics schema mismatch: {0}")]
    Schema(String),

    #[error("too few replicates: {got} (need at least {need})")]
    InsufficientReplicates { got: usize, need: usize },

    #[error("config error at line {line}, key `{key}`: {reason}")]
    Config {
        line: usize,
        key: String,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
