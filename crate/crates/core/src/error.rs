//! Error type shared by every module.

use alloc::string::String;

use crate::config::Policy;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} has no finite Markov chain representation")]
    NoChain(Policy),
    #[error("state {0} cannot occur under this policy")]
    UnreachableState(String),
    #[error("generator row {row} sums to {sum:e}")]
    RowSum { row: usize, sum: f64 },
    #[error("transition from level {from} to level {to} skips a level")]
    NonAdjacentTransition { from: usize, to: usize },
    #[error("level {level} blocks differ from level 1")]
    NotLevelHomogeneous { level: usize },
    #[error("chain is not positive recurrent (up rate {up_rate}, down rate {down_rate})")]
    NotPositiveRecurrent { up_rate: f64, down_rate: f64 },
    #[error("iteration stopped after {iterations} steps with residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular linear system")]
    Singular,
    #[error("level generator is reducible")]
    Reducible,
    #[error("truncation stopped at {levels} levels with tail mass {tail:e}")]
    Truncation { levels: usize, tail: f64 },
    #[error("arrival rate {arrival_rate} is not below the stability limit {limit}")]
    Divergent { arrival_rate: f64, limit: f64 },
    #[error("server {0} is idle")]
    ServerIdle(usize),
    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),
}
