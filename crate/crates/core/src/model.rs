//! Joint and factored two-agent models, validation, product composition
//! and centralization.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::FiniteHorizonMDP;
use crate::policy::{LocalPolicy, Policy};
use crate::TOL_P;

/// Refuse to build joint tables with more states than this unless the
/// caller raises the limit.
pub const DEFAULT_MAX_JOINT_STATES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Agent {
    One,
    Two,
}

impl Agent {
    pub const BOTH: [Agent; 2] = [Agent::One, Agent::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Agent::One => 0,
            Agent::Two => 1,
        }
    }

    #[inline]
    pub fn other(self) -> Agent {
        match self {
            Agent::One => Agent::Two,
            Agent::Two => Agent::One,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

pub type Metadata = BTreeMap<String, String>;

/// One agent's component: states `S_i`, actions `A_i`, `P_i[s][a][s']`,
/// action costs and the optional NOP action.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    num_states: usize,
    initial: usize,
    num_actions: usize,
    transition: Vec<f64>,
    costs: Vec<f64>,
    nop: Option<usize>,
    nop_enabled: Vec<bool>,
}

impl LocalModel {
    /// `transition` is `[s][a][s']`. NOP, when present, may only be used in
    /// the states listed in `nop_states`.
    pub fn new(
        num_states: usize,
        initial: usize,
        num_actions: usize,
        transition: Vec<f64>,
        costs: Vec<f64>,
        nop: Option<usize>,
        nop_states: &[usize],
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel(
                "local component needs at least one state and one action".into(),
            ));
        }
        if initial >= num_states {
            return Err(Error::InvalidModel(format!(
                "initial local state {initial} out of range 0..{num_states}"
            )));
        }
        let expected = num_states * num_actions * num_states;
        if transition.len() != expected {
            return Err(Error::InvalidModel(format!(
                "local transition table must have {expected} entries, got {}",
                transition.len()
            )));
        }
        if costs.len() != num_actions {
            return Err(Error::InvalidModel(format!(
                "cost table must have {num_actions} entries, got {}",
                costs.len()
            )));
        }
        if let Some(n) = nop {
            if n >= num_actions {
                return Err(Error::InvalidModel(format!("NOP index {n} out of range")));
            }
        }
        let mut nop_enabled = vec![false; num_states];
        for &s in nop_states {
            if s >= num_states {
                return Err(Error::InvalidModel(format!("NOP state {s} out of range")));
            }
            nop_enabled[s] = nop.is_some();
        }
        Ok(LocalModel {
            num_states,
            initial,
            num_actions,
            transition,
            costs,
            nop,
            nop_enabled,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn nop(&self) -> Option<usize> {
        self.nop
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    #[inline]
    pub fn cost(&self, action: usize) -> f64 {
        self.costs[action]
    }

    pub fn nop_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.nop_enabled[s]).collect()
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn p(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[(state * self.num_actions + action) * self.num_states + next]
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    #[inline]
    pub fn is_enabled(&self, state: usize, action: usize) -> bool {
        Some(action) != self.nop || self.nop_enabled[state]
    }

    pub fn enabled_actions(&self, state: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_actions).filter(move |&a| self.is_enabled(state, a))
    }

    /// Enabled actions with duplicates (same cost and same successor row)
    /// collapsed onto their lowest index.
    pub fn distinct_actions(&self, state: usize) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::new();
        for a in self.enabled_actions(state) {
            let dup = kept
                .iter()
                .any(|&b| self.costs[a] == self.costs[b] && self.row(state, a) == self.row(state, b));
            if !dup {
                kept.push(a);
            }
        }
        kept
    }

    /// Enabled actions not weakly dominated at `state`: among actions with the
    /// same successor row only the cheapest is kept (lowest index on ties).
    /// Exact for value computations because dynamics and the partner's view
    /// are unchanged by the swap.
    pub fn undominated_actions(&self, state: usize) -> Vec<usize> {
        let enabled: Vec<usize> = self.enabled_actions(state).collect();
        enabled
            .iter()
            .copied()
            .filter(|&a| {
                !enabled.iter().any(|&b| {
                    b != a
                        && self.row(state, a) == self.row(state, b)
                        && (self.costs[b] > self.costs[a] || (self.costs[b] == self.costs[a] && b < a))
                })
            })
            .collect()
    }

    /// `reach[t][s]` for `t = start_time..=horizon` (earlier stages empty):
    /// states reachable with positive probability from `start` under some
    /// sequence of enabled actions.
    pub fn reachable_from(&self, start: usize, start_time: usize, horizon: usize) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; self.num_states]; horizon + 1];
        if start_time > horizon {
            return reach;
        }
        reach[start_time][start] = true;
        for t in start_time..horizon {
            for s in 0..self.num_states {
                if !reach[t][s] {
                    continue;
                }
                for a in self.enabled_actions(s) {
                    for (next, &p) in self.row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            reach[t + 1][next] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    pub fn reachable(&self, horizon: usize) -> Vec<Vec<bool>> {
        self.reachable_from(self.initial, 0, horizon)
    }

    /// Finite-horizon MDP over this component with the given terminal
    /// reward and stage reward `C(a)`.
    pub fn to_mdp(&self, horizon: usize, terminal: Vec<f64>) -> Result<FiniteHorizonMDP> {
        let n = self.num_states;
        let na = self.num_actions;
        let mut reward = vec![0.0; n * na * n];
        for s in 0..n {
            for a in 0..na {
                for next in 0..n {
                    reward[(s * na + a) * n + next] = self.costs[a];
                }
            }
        }
        let enabled = (0..n)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| self.is_enabled(s, a))
            .collect();
        FiniteHorizonMDP::new(
            n,
            na,
            self.initial,
            horizon,
            self.transition.clone(),
            reward,
            terminal,
            Some(enabled),
        )
    }
}

/// Bijection between joint state indices and `(s1, s2)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSplit {
    n1: usize,
    n2: usize,
    pairs: Vec<(usize, usize)>,
    index: Vec<usize>,
}

impl StateSplit {
    /// Joint index `s1 * n2 + s2`.
    pub fn row_major(n1: usize, n2: usize) -> Self {
        let pairs = (0..n1)
            .flat_map(|a| (0..n2).map(move |b| (a, b)))
            .collect::<Vec<_>>();
        let index = (0..n1 * n2).collect();
        StateSplit {
            n1,
            n2,
            pairs,
            index,
        }
    }

    /// `pairs[s]` gives the components of joint state `s`.
    pub fn from_pairs(n1: usize, n2: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.len() != n1 * n2 {
            return Err(Error::InvalidSplit(format!(
                "{} joint states cannot split into {n1} x {n2}",
                pairs.len()
            )));
        }
        let mut index = vec![usize::MAX; n1 * n2];
        for (s, &(a, b)) in pairs.iter().enumerate() {
            if a >= n1 || b >= n2 {
                return Err(Error::InvalidSplit(format!(
                    "joint state {s} maps to ({a}, {b}) outside {n1} x {n2}"
                )));
            }
            let slot = &mut index[a * n2 + b];
            if *slot != usize::MAX {
                return Err(Error::InvalidSplit(format!(
                    "joint states {} and {s} both map to ({a}, {b})",
                    *slot
                )));
            }
            *slot = s;
        }
        Ok(StateSplit {
            n1,
            n2,
            pairs,
            index,
        })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn pair(&self, joint: usize) -> (usize, usize) {
        self.pairs[joint]
    }

    #[inline]
    pub fn component(&self, joint: usize, agent: Agent) -> usize {
        let (a, b) = self.pairs[joint];
        match agent {
            Agent::One => a,
            Agent::Two => b,
        }
    }

    #[inline]
    pub fn joint(&self, s1: usize, s2: usize) -> usize {
        self.index[s1 * self.n2 + s2]
    }

    pub fn is_row_major(&self) -> bool {
        self.pairs.iter().enumerate().all(|(s, &(a, b))| a * self.n2 + b == s)
    }
}

/// Goal-oriented model with independent transitions in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredDecMDP {
    locals: [LocalModel; 2],
    goals: Vec<(usize, usize)>,
    joint_reward: Vec<f64>,
    horizon: usize,
    metadata: Metadata,
}

impl FactoredDecMDP {
    pub fn new(
        local1: LocalModel,
        local2: LocalModel,
        goals: Vec<(usize, usize)>,
        joint_reward: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        if goals.len() != joint_reward.len() {
            return Err(Error::InvalidModel(format!(
                "{} goals but {} joint rewards",
                goals.len(),
                joint_reward.len()
            )));
        }
        for &(g1, g2) in &goals {
            if g1 >= local1.num_states() || g2 >= local2.num_states() {
                return Err(Error::InvalidModel(format!("goal ({g1}, {g2}) out of range")));
            }
        }
        Ok(FactoredDecMDP {
            locals: [local1, local2],
            goals,
            joint_reward,
            horizon,
            metadata: Metadata::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    #[inline]
    pub fn local(&self, agent: Agent) -> &LocalModel {
        &self.locals[agent.index()]
    }

    pub fn locals(&self) -> &[LocalModel; 2] {
        &self.locals
    }

    pub fn goals(&self) -> &[(usize, usize)] {
        &self.goals
    }

    pub fn joint_reward(&self) -> &[f64] {
        &self.joint_reward
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut f = self.clone();
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        f.horizon = horizon;
        Ok(f)
    }

    pub fn num_joint_states(&self) -> usize {
        self.locals[0].num_states() * self.locals[1].num_states()
    }

    pub fn goal_component(&self, agent: Agent, goal: usize) -> usize {
        let (a, b) = self.goals[goal];
        match agent {
            Agent::One => a,
            Agent::Two => b,
        }
    }

    pub fn goal_index(&self, goal: (usize, usize)) -> Option<usize> {
        self.goals.iter().position(|&g| g == goal)
    }

    /// JR awarded when the system occupies `(s1, s2)` at time T.
    pub fn terminal_reward(&self, s1: usize, s2: usize) -> f64 {
        self.goals
            .iter()
            .position(|&g| g == (s1, s2))
            .map_or(0.0, |k| self.joint_reward[k])
    }

    /// Row-major `rT[s1 * n2 + s2]`.
    pub fn terminal_table(&self) -> Vec<f64> {
        let n2 = self.locals[1].num_states();
        let mut rt = vec![0.0; self.num_joint_states()];
        for (k, &(g1, g2)) in self.goals.iter().enumerate().rev() {
            rt[g1 * n2 + g2] = self.joint_reward[k];
        }
        rt
    }

    /// Same model with the agents' roles exchanged.
    pub fn swapped(&self) -> Self {
        FactoredDecMDP {
            locals: [self.locals[1].clone(), self.locals[0].clone()],
            goals: self.goals.iter().map(|&(a, b)| (b, a)).collect(),
            joint_reward: self.joint_reward.clone(),
            horizon: self.horizon,
            metadata: self.metadata.clone(),
        }
    }

    pub fn with_joint_reward(&self, joint_reward: Vec<f64>) -> Result<Self> {
        FactoredDecMDP::new(
            self.locals[0].clone(),
            self.locals[1].clone(),
            self.goals.clone(),
            joint_reward,
            self.horizon,
        )
        .map(|f| f.with_metadata(self.metadata.clone()))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_factored(self)
    }
}

/// The general two-agent tuple `⟨S, A1, A2, P, R, Ω1, Ω2, O, T⟩` plus a
/// terminal reward table and per-agent action masks.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDecMDP {
    num_states: usize,
    initial: usize,
    num_actions: [usize; 2],
    horizon: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    terminal_reward: Vec<f64>,
    enabled: [Vec<bool>; 2],
    num_obs: [usize; 2],
    observation: Option<Vec<f64>>,
    split: Option<StateSplit>,
    metadata: Metadata,
}

/// Optional parts of a [`JointDecMDP`].
#[derive(Debug, Clone, Default)]
pub struct JointExtras {
    pub terminal_reward: Option<Vec<f64>>,
    pub enabled: [Option<Vec<bool>>; 2],
    /// `(num_obs, table)` with `table` laid out `[s][a1][a2][s'][o1][o2]`.
    pub observation: Option<([usize; 2], Vec<f64>)>,
    pub split: Option<StateSplit>,
    pub metadata: Metadata,
}

impl JointDecMDP {
    /// `transition` and `reward` are `[s][a1][a2][s']`.
    pub fn new(
        num_states: usize,
        initial: usize,
        num_actions: [usize; 2],
        horizon: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        extras: JointExtras,
    ) -> Result<Self> {
        if num_states == 0 || num_actions[0] == 0 || num_actions[1] == 0 {
            return Err(Error::InvalidModel(
                "joint model needs at least one state and one action per agent".into(),
            ));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        if initial >= num_states {
            return Err(Error::InvalidModel(format!(
                "initial state {initial} out of range 0..{num_states}"
            )));
        }
        let rows = num_states * num_actions[0] * num_actions[1];
        let expected = rows * num_states;
        if transition.len() != expected || reward.len() != expected {
            return Err(Error::InvalidModel(format!(
                "transition/reward tables must have {expected} entries, got {} and {}",
                transition.len(),
                reward.len()
            )));
        }
        let terminal_reward = extras.terminal_reward.unwrap_or_else(|| vec![0.0; num_states]);
        if terminal_reward.len() != num_states {
            return Err(Error::InvalidModel("terminal reward table has the wrong size".into()));
        }
        let [e1, e2] = extras.enabled;
        let e1 = e1.unwrap_or_else(|| vec![true; num_states * num_actions[0]]);
        let e2 = e2.unwrap_or_else(|| vec![true; num_states * num_actions[1]]);
        if e1.len() != num_states * num_actions[0] || e2.len() != num_states * num_actions[1] {
            return Err(Error::InvalidModel("action enable mask has the wrong size".into()));
        }
        if let Some(split) = &extras.split {
            if split.len() != num_states {
                return Err(Error::InvalidSplit(format!(
                    "split covers {} states, model has {num_states}",
                    split.len()
                )));
            }
        }
        let (num_obs, observation) = match extras.observation {
            Some((num_obs, table)) => {
                if num_obs[0] == 0 || num_obs[1] == 0 {
                    return Err(Error::InvalidModel("observation sets must be nonempty".into()));
                }
                if table.len() != expected * num_obs[0] * num_obs[1] {
                    return Err(Error::InvalidModel(format!(
                        "observation table must have {} entries, got {}",
                        expected * num_obs[0] * num_obs[1],
                        table.len()
                    )));
                }
                (num_obs, Some(table))
            }
            None => match &extras.split {
                Some(split) => {
                    let (n1, n2) = split.sizes();
                    ([n1, n2], None)
                }
                None => ([num_states, num_states], None),
            },
        };
        Ok(JointDecMDP {
            num_states,
            initial,
            num_actions,
            horizon,
            transition,
            reward,
            terminal_reward,
            enabled: [e1, e2],
            num_obs,
            observation,
            split: extras.split,
            metadata: extras.metadata,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn num_actions(&self, agent: Agent) -> usize {
        self.num_actions[agent.index()]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_obs(&self, agent: Agent) -> usize {
        self.num_obs[agent.index()]
    }

    pub fn split(&self) -> Option<&StateSplit> {
        self.split.as_ref()
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut Metadata {
        &mut self.metadata
    }

    pub fn has_observation_table(&self) -> bool {
        self.observation.is_some()
    }

    pub fn terminal_reward(&self) -> &[f64] {
        &self.terminal_reward
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn observation_table(&self) -> Option<&[f64]> {
        self.observation.as_deref()
    }

    pub fn enable_mask(&self, agent: Agent) -> &[bool] {
        &self.enabled[agent.index()]
    }

    #[inline]
    fn row_index(&self, s: usize, a1: usize, a2: usize) -> usize {
        (s * self.num_actions[0] + a1) * self.num_actions[1] + a2
    }

    #[inline]
    pub fn row(&self, s: usize, a1: usize, a2: usize) -> &[f64] {
        let start = self.row_index(s, a1, a2) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a1: usize, a2: usize, next: usize) -> f64 {
        self.transition[self.row_index(s, a1, a2) * self.num_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a1: usize, a2: usize, next: usize) -> f64 {
        self.reward[self.row_index(s, a1, a2) * self.num_states + next]
    }

    #[inline]
    pub fn is_enabled(&self, agent: Agent, s: usize, a: usize) -> bool {
        self.enabled[agent.index()][s * self.num_actions[agent.index()] + a]
    }

    /// `O(o1, o2 | s, a1, a2, s')`. Without a table the model observes
    /// `o_i = s_i'` through the split (or `o_i = s'` without one).
    pub fn obs(&self, s: usize, a1: usize, a2: usize, next: usize, o1: usize, o2: usize) -> f64 {
        match &self.observation {
            Some(table) => {
                let base = (self.row_index(s, a1, a2) * self.num_states + next)
                    * self.num_obs[0]
                    * self.num_obs[1];
                table[base + o1 * self.num_obs[1] + o2]
            }
            None => {
                let (t1, t2) = match &self.split {
                    Some(split) => split.pair(next),
                    None => (next, next),
                };
                if o1 == t1 && o2 == t2 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Visits every `(s, a1, a2, s', o1, o2)` with `P·O > TOL_P`.
    pub fn for_each_support(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        for s in 0..self.num_states {
            for a1 in 0..self.num_actions[0] {
                for a2 in 0..self.num_actions[1] {
                    for next in 0..self.num_states {
                        let p = self.p(s, a1, a2, next);
                        if p <= TOL_P {
                            continue;
                        }
                        for o1 in 0..self.num_obs[0] {
                            for o2 in 0..self.num_obs[1] {
                                if p * self.obs(s, a1, a2, next, o1, o2) > TOL_P {
                                    f(s, a1, a2, next, o1, o2);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Copy with the implicit local-state observation model written out as
    /// an explicit table. Requires a split.
    pub fn with_explicit_observations(&self) -> Result<Self> {
        if self.observation.is_some() {
            return Ok(self.clone());
        }
        let split = self.split.as_ref().ok_or(Error::ObservationTableRequired)?;
        let (n1, n2) = split.sizes();
        let rows = self.num_states * self.num_actions[0] * self.num_actions[1];
        let mut table = vec![0.0; rows * self.num_states * n1 * n2];
        for r in 0..rows {
            for next in 0..self.num_states {
                let (o1, o2) = split.pair(next);
                table[(r * self.num_states + next) * n1 * n2 + o1 * n2 + o2] = 1.0;
            }
        }
        let mut m = self.clone();
        m.num_obs = [n1, n2];
        m.observation = Some(table);
        Ok(m)
    }

    pub fn with_split(&self, split: StateSplit) -> Result<Self> {
        if split.len() != self.num_states {
            return Err(Error::InvalidSplit(format!(
                "split covers {} states, model has {}",
                split.len(),
                self.num_states
            )));
        }
        let mut m = self.clone();
        if m.observation.is_none() {
            let (n1, n2) = split.sizes();
            m.num_obs = [n1, n2];
        }
        m.split = Some(split);
        Ok(m)
    }

    /// Replaces one transition row (used by perturbation tests and tools).
    pub fn with_row(&self, s: usize, a1: usize, a2: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.num_states {
            return Err(Error::InvalidArgument("row length mismatch".into()));
        }
        let mut m = self.clone();
        let start = m.row_index(s, a1, a2) * m.num_states;
        m.transition[start..start + m.num_states].copy_from_slice(row);
        Ok(m)
    }

    /// Centralized action index for `(a1, a2)`.
    #[inline]
    pub fn joint_action(&self, a1: usize, a2: usize) -> usize {
        a1 * self.num_actions[1] + a2
    }

    /// Joint-state policy that plays `δ1(s1, t)` and `δ2(s2, t)` through
    /// the split, in centralized action indices.
    pub fn joint_policy(&self, policies: [&LocalPolicy; 2]) -> Result<Policy> {
        let split = self.split.as_ref().ok_or_else(|| {
            Error::InvalidArgument("joint policy from local policies needs a state split".into())
        })?;
        Ok(Policy::from_fn(self.num_states, self.horizon, |s, t| {
            let (s1, s2) = split.pair(s);
            match (policies[0].get(s1, t), policies[1].get(s2, t)) {
                (Some(a1), Some(a2)) => Some(self.joint_action(a1, a2)),
                _ => None,
            }
        }))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_joint(self)
    }
}

/// Either model form, as read from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Factored(FactoredDecMDP),
    Joint(JointDecMDP),
}

impl Model {
    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    pub fn horizon(&self) -> usize {
        match self {
            Model::Factored(f) => f.horizon(),
            Model::Joint(m) => m.horizon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    RowSum,
    ProbabilityRange,
    ObservationRowSum,
    NonFiniteReward,
    NopPlacement,
    NopDynamics,
    NopCost,
    CostSign,
    EmptyGoals,
    DuplicateGoal,
    UnreachableGoals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, location: String, residual: f64) {
        self.violations.push(Violation {
            kind,
            location,
            residual,
        });
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

fn check_row(report: &mut ValidationReport, row: &[f64], location: impl Fn() -> String) {
    let mut sum = 0.0;
    for &p in row {
        if !(-TOL_P..=1.0 + TOL_P).contains(&p) || !p.is_finite() {
            report.push(ViolationKind::ProbabilityRange, location(), p);
        }
        sum += p;
    }
    if !((sum - 1.0).abs() <= TOL_P) {
        report.push(ViolationKind::RowSum, location(), (sum - 1.0).abs());
    }
}

pub fn validate_model(m: &Model) -> ValidationReport {
    match m {
        Model::Factored(f) => validate_factored(f),
        Model::Joint(j) => validate_joint(j),
    }
}

pub fn validate_joint(m: &JointDecMDP) -> ValidationReport {
    let mut report = ValidationReport::default();
    let [na1, na2] = m.num_actions;
    for s in 0..m.num_states {
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                check_row(&mut report, m.row(s, a1, a2), || {
                    format!("transition (s={s}, a1={a1}, a2={a2})")
                });
                for next in 0..m.num_states {
                    if !m.r(s, a1, a2, next).is_finite() {
                        report.push(
                            ViolationKind::NonFiniteReward,
                            format!("reward (s={s}, a1={a1}, a2={a2}, s'={next})"),
                            f64::NAN,
                        );
                    }
                }
                if m.observation.is_none() {
                    continue;
                }
                for next in 0..m.num_states {
                    if m.p(s, a1, a2, next) <= TOL_P {
                        continue;
                    }
                    let mut row = Vec::with_capacity(m.num_obs[0] * m.num_obs[1]);
                    for o1 in 0..m.num_obs[0] {
                        for o2 in 0..m.num_obs[1] {
                            row.push(m.obs(s, a1, a2, next, o1, o2));
                        }
                    }
                    let before = report.violations.len();
                    check_row(&mut report, &row, || {
                        format!("observation (s={s}, a1={a1}, a2={a2}, s'={next})")
                    });
                    for v in &mut report.violations[before..] {
                        if v.kind == ViolationKind::RowSum {
                            v.kind = ViolationKind::ObservationRowSum;
                        }
                    }
                }
            }
        }
    }
    for (s, r) in m.terminal_reward.iter().enumerate() {
        if !r.is_finite() {
            report.push(ViolationKind::NonFiniteReward, format!("terminal reward (s={s})"), f64::NAN);
        }
    }
    report
}

pub fn validate_factored(f: &FactoredDecMDP) -> ValidationReport {
    let mut report = ValidationReport::default();
    for agent in Agent::BOTH {
        let local = f.local(agent);
        let goal_components: Vec<usize> = f.goals.iter().map(|&(a, b)| if agent == Agent::One { a } else { b }).collect();
        for s in 0..local.num_states() {
            for a in 0..local.num_actions() {
                check_row(&mut report, local.row(s, a), || {
                    format!("agent {agent} transition (s={s}, a={a})")
                });
            }
        }
        for a in 0..local.num_actions() {
            let c = local.cost(a);
            if Some(a) == local.nop() {
                if c != 0.0 {
                    report.push(ViolationKind::NopCost, format!("agent {agent} NOP action {a}"), c.abs());
                }
            } else if !(c < 0.0) {
                report.push(ViolationKind::CostSign, format!("agent {agent} action {a}"), c);
            }
        }
        if let Some(nop) = local.nop() {
            for s in 0..local.num_states() {
                let stay = local.p(s, nop, s);
                if (stay - 1.0).abs() > TOL_P {
                    report.push(
                        ViolationKind::NopDynamics,
                        format!("agent {agent} NOP at s={s}"),
                        (stay - 1.0).abs(),
                    );
                }
            }
            for s in local.nop_states() {
                if !goal_components.contains(&s) {
                    report.push(
                        ViolationKind::NopPlacement,
                        format!("agent {agent} NOP enabled at non-goal state s={s}"),
                        0.0,
                    );
                }
            }
        }
    }
    if f.goals.is_empty() {
        report.push(ViolationKind::EmptyGoals, "goals".into(), 0.0);
    } else {
        for (k, g) in f.goals.iter().enumerate() {
            if f.goals[..k].contains(g) {
                report.push(ViolationKind::DuplicateGoal, format!("goal {k} = {g:?}"), 0.0);
            }
        }
        let r1 = f.local(Agent::One).reachable(f.horizon);
        let r2 = f.local(Agent::Two).reachable(f.horizon);
        let any = f.goals.iter().any(|&(g1, g2)| r1[f.horizon][g1] && r2[f.horizon][g2]);
        if !any {
            report.push(
                ViolationKind::UnreachableGoals,
                format!("no goal occupiable at T={}", f.horizon),
                0.0,
            );
        }
    }
    for (k, r) in f.joint_reward.iter().enumerate() {
        if !r.is_finite() {
            report.push(ViolationKind::NonFiniteReward, format!("joint reward {k}"), f64::NAN);
        }
    }
    report
}

/// How `compose_joint` fills in the observation function.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationMode {
    /// `Ω_i = S_i`, `o_i = s_i'` (left implicit in the joint model).
    LocalState,
    /// Explicit `[s][a1][a2][s'][o1][o2]` table over the composed states.
    Custom { num_obs: [usize; 2], table: Vec<f64> },
}

/// Product composition: `S = S1 × S2` row-major, `P = P1 · P2`,
/// `R = C(a1) + C(a2)`, terminal `rT(g) = JR(g)`.
pub fn compose_joint(
    f: &FactoredDecMDP,
    mode: ObservationMode,
    max_states: usize,
) -> Result<JointDecMDP> {
    let l1 = f.local(Agent::One);
    let l2 = f.local(Agent::Two);
    let (n1, n2) = (l1.num_states(), l2.num_states());
    let total = n1 as u128 * n2 as u128;
    if total > max_states as u128 {
        return Err(Error::JointTooLarge {
            n1,
            n2,
            total,
            limit: max_states,
        });
    }
    let n = n1 * n2;
    let (na1, na2) = (l1.num_actions(), l2.num_actions());
    let mut transition = vec![0.0; n * na1 * na2 * n];
    let mut reward = vec![0.0; n * na1 * na2 * n];
    for s1 in 0..n1 {
        for s2 in 0..n2 {
            let s = s1 * n2 + s2;
            for a1 in 0..na1 {
                let row1 = l1.row(s1, a1);
                for a2 in 0..na2 {
                    let row2 = l2.row(s2, a2);
                    let base = ((s * na1 + a1) * na2 + a2) * n;
                    let c = l1.cost(a1) + l2.cost(a2);
                    for (t1, &p1) in row1.iter().enumerate() {
                        for (t2, &p2) in row2.iter().enumerate() {
                            transition[base + t1 * n2 + t2] = p1 * p2;
                            reward[base + t1 * n2 + t2] = c;
                        }
                    }
                }
            }
        }
    }
    let mut enabled1 = vec![false; n * na1];
    let mut enabled2 = vec![false; n * na2];
    for s1 in 0..n1 {
        for s2 in 0..n2 {
            let s = s1 * n2 + s2;
            for a in 0..na1 {
                enabled1[s * na1 + a] = l1.is_enabled(s1, a);
            }
            for a in 0..na2 {
                enabled2[s * na2 + a] = l2.is_enabled(s2, a);
            }
        }
    }
    let observation = match mode {
        ObservationMode::LocalState => None,
        ObservationMode::Custom { num_obs, table } => Some((num_obs, table)),
    };
    JointDecMDP::new(
        n,
        l1.initial() * n2 + l2.initial(),
        [na1, na2],
        f.horizon(),
        transition,
        reward,
        JointExtras {
            terminal_reward: Some(f.terminal_table()),
            enabled: [Some(enabled1), Some(enabled2)],
            observation,
            split: Some(StateSplit::row_major(n1, n2)),
            metadata: f.metadata().clone(),
        },
    )
}

/// The single-agent MMDP over `S` with joint actions `a1 * |A2| + a2`.
pub fn centralize(m: &JointDecMDP) -> FiniteHorizonMDP {
    let n = m.num_states;
    let [na1, na2] = m.num_actions;
    let na = na1 * na2;
    let mut enabled = vec![false; n * na];
    for s in 0..n {
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                enabled[s * na + a1 * na2 + a2] =
                    m.is_enabled(Agent::One, s, a1) && m.is_enabled(Agent::Two, s, a2);
            }
        }
    }
    // The joint layout [s][a1][a2][s'] is already [s][a][s'] for a = a1*|A2|+a2.
    FiniteHorizonMDP::new(
        n,
        na,
        m.initial,
        m.horizon,
        m.transition.clone(),
        m.reward.clone(),
        m.terminal_reward.clone(),
        Some(enabled),
    )
    .expect("joint model dimensions are validated at construction")
}
