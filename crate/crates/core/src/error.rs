use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the library. Variants carry enough context to be
/// reported to a user verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A subsampled-Gaussian precondition does not hold at the requested order.
    #[error("infeasible Rényi order: {constraint} violated ({lhs} vs {rhs})")]
    InfeasibleOrder {
        constraint: Constraint,
        lhs: f64,
        rhs: f64,
    },

    #[error("cannot compose RDP guarantees of different orders ({expected} and {found})")]
    CompositionOrder { expected: f64, found: f64 },

    #[error(
        "no feasible noise calibration; tightest candidate beta={beta} violates {constraint} by {violation}"
    )]
    CalibrationInfeasible {
        beta: f64,
        constraint: Constraint,
        violation: f64,
    },

    #[error("degenerate mechanism: {0}")]
    DegenerateMechanism(String),

    #[error("evaluation produced a non-finite value: {0}")]
    Evaluation(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("enumeration budget exceeded: {required} policy profiles > budget {budget}; use smaller grids, fewer agents or a shorter horizon")]
    EnumerationBudget { required: u128, budget: u64 },

    #[error("target covariance is singular or not positive-definite (min eigenvalue {min_eigenvalue})")]
    SingularTarget { min_eigenvalue: f64 },

    #[error("gradient descent diverged after {step} steps; reduce the learning rate")]
    StepSize { step: usize },
}

/// The two side conditions of the subsampled Gaussian RDP bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `σ² / Δ² ≥ 0.7`
    NoiseFloor,
    /// `α ≤ 2σ'² ln(1 / (γ α (1 + σ'²))) / 3 + 1`
    OrderBound,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::NoiseFloor => f.write_str("noise floor sigma'^2 >= 0.7"),
            Constraint::OrderBound => {
                f.write_str("order bound alpha <= 2 sigma'^2 ln(1/(gamma alpha (1+sigma'^2)))/3 + 1")
            }
        }
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
