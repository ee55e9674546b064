use thiserror::Error;

/// Errors raised by the model, solvers, and simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("relay buffer {nr} must exceed max(rs, rr) = {max_rate}")]
    BufferTooSmall { nr: usize, max_rate: usize },

    #[error("rates must be positive integers (rs = {rs}, rr = {rr})")]
    ZeroRate { rs: usize, rr: usize },

    #[error("probability {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error("analytic solvers need 0 < p < 1, got {name} = {value}")]
    DegenerateProbability { name: &'static str, value: f64 },

    #[error("queue length {q} is outside 0..={nr}")]
    QueueOutOfRange { q: usize, nr: usize },

    #[error("policy needs a uniform draw for channel state (1, 1) but none was supplied")]
    MissingRandomness,

    #[error("infeasible action at Q = {q}: {reason}")]
    InfeasibleAction { q: usize, reason: String },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error(
        "relative value iteration did not converge in {iterations} iterations (span {span:e})"
    )]
    NoConvergence { iterations: usize, span: f64 },

    #[error("policy evaluation system is numerically singular")]
    SingularEvaluation,

    #[error("greedy action sequence is not a threshold rule (first reversal at Q = {q})")]
    NotThreshold { q: usize },

    #[error("threshold {q} is not in the recurrent class")]
    ThresholdNotRecurrent { q: usize },

    #[error("elimination pivot {pivot:e} below tolerance at column {column}")]
    SingularSystem { column: usize, pivot: f64 },

    #[error("rank-one update denominator {value:e} too close to zero")]
    DenominatorNearZero { value: f64 },

    #[error("symmetric closed form needs 0 < p < 1, got {0}")]
    DegenerateP(f64),

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
