//! Finite MDPs with factored action spaces, the augmented-state transform and
//! exact solvers.
//!
//! A [`FactoredMdp`] chooses one joint action `(a1, .., ak)` per step. The
//! [`AugmentedMdp`] built by [`augment`] chooses the same joint action one
//! component at a time: intermediate states remember the partial actions
//! chosen so far, intermediate transitions pay reward 0 with discount 1, and
//! the last component fires the source transition.

mod augment;
mod factored;
pub mod fixture;
pub mod random;
mod solve;

pub use augment::{augment, AugmentedMdp, AugmentedState};
pub use factored::{ActionSpace, FactoredMdp, Outcome};
pub use solve::{flat_qstar, value_iteration, FiniteMdp, FlatQ, Solution, SolverOptions, Step};

use thiserror::Error;

/// Largest `|S| * prod |Ai|` table the flat oracle will enumerate.
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("action space has no components")]
    EmptyFactorization,
    #[error("action component {level} has zero size")]
    ZeroDimension { level: usize },
    #[error("mdp has no states")]
    NoStates,
    #[error("discount {0} outside (0, 1]")]
    InvalidGamma(f64),
    #[error("state index {state} out of range for {num_states} states")]
    StateOutOfRange { state: usize, num_states: usize },
    #[error("action {action:?} invalid for dims {dims:?}")]
    InvalidAction { action: Vec<usize>, dims: Vec<usize> },
    #[error("outcome distribution at state {state}, action {action} sums to {total}")]
    BadDistribution { state: usize, action: usize, total: f64 },
    #[error("non-finite reward at state {state}, action {action}")]
    NonFiniteReward { state: usize, action: usize },
    #[error("{entries} state-action entries exceed enumeration cap {cap}")]
    EnumerationCap { entries: usize, cap: usize },
    #[error("value iteration stalled at residual {residual:e} after {sweeps} sweeps")]
    NotConverged { residual: f64, sweeps: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
}
