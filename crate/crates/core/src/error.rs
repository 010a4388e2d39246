use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("joint state space {n1} x {n2} = {total} exceeds the limit of {limit} states")]
    JointTooLarge {
        n1: usize,
        n2: usize,
        total: u128,
        limit: usize,
    },

    #[error("policy undefined at reachable pair (s={state}, t={time})")]
    PolicyUndefined { state: usize, time: usize },

    #[error("policy selects action {action} at (s={state}, t={time}), which is not enabled there")]
    ActionNotEnabled {
        state: usize,
        time: usize,
        action: usize,
    },

    #[error(
        "comm policy of agent {agent} undefined at (sync={sync}, sync_time={sync_time}, s={local}, t={time}) for {what}"
    )]
    CommPolicyUndefined {
        agent: usize,
        sync: usize,
        sync_time: usize,
        local: usize,
        time: usize,
        what: &'static str,
    },

    #[error("search space of {count} candidates exceeds the budget of {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("goal ({0}, {1}) is not in the goal set")]
    UnknownGoal(usize, usize),

    #[error("goal set is empty")]
    EmptyGoalSet,

    #[error("observation table required")]
    ObservationTableRequired,

    #[error("state split is not a bijection: {0}")]
    InvalidSplit(String),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. } | Error::JointTooLarge { .. })
    }
}
