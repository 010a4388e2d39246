//! Single-agent finite-horizon MDPs and backward induction.
//!
//! Every solver in the crate reduces to the recurrence
//! `V[s][T] = rT[s]`, `V[s][t] = max_a Σ_s' P(s'|s,a) (r_t(s,a,s') + V[s'][t+1])`,
//! run through [`StagedProblem`] so that time-varying stage rewards (belief
//! MDPs of the oracle) share the same code path as the plain tabular case.

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::TOL_P;

/// Relative tolerance under which two Q-values are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

#[inline]
pub(crate) fn tie_tolerance(best: f64) -> f64 {
    TIE_EPS * best.abs().max(1.0)
}

/// Picks the lowest index whose value is within [`TIE_EPS`] of the maximum.
pub(crate) fn argmax_lowest(values: &[(usize, f64)]) -> Option<(usize, f64)> {
    if values.is_empty() {
        return None;
    }
    let best = values
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = tie_tolerance(best);
    values
        .iter()
        .copied()
        .filter(|&(_, v)| v >= best - tol)
        .min_by_key(|&(i, _)| i)
}

/// A finite-horizon decision problem with dense transition rows.
pub trait StagedProblem {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn is_enabled(&self, state: usize, action: usize) -> bool;
    /// Dense row `P(· | state, action)`.
    fn row(&self, state: usize, action: usize) -> &[f64];
    fn stage_reward(&self, time: usize, state: usize, action: usize, next: usize) -> f64;
    fn terminal_reward(&self, state: usize) -> f64;
}

/// `V[s][t]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    num_states: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl ValueTable {
    fn filled(num_states: usize, horizon: usize, v: f64) -> Self {
        ValueTable {
            num_states,
            horizon,
            data: vec![v; num_states * (horizon + 1)],
        }
    }

    /// Builds a table from `stages[t][s]`, `t = 0..=T`.
    pub fn from_stages(stages: Vec<Vec<f64>>) -> Self {
        let horizon = stages.len().saturating_sub(1);
        let num_states = stages.first().map_or(0, Vec::len);
        ValueTable {
            num_states,
            horizon,
            data: stages.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn get(&self, state: usize, time: usize) -> f64 {
        self.data[time * self.num_states + state]
    }

    #[inline]
    fn set(&mut self, state: usize, time: usize, v: f64) {
        self.data[time * self.num_states + state] = v;
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Values at one stage.
    pub fn stage(&self, time: usize) -> &[f64] {
        &self.data[time * self.num_states..(time + 1) * self.num_states]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: Policy,
}

fn q_value<P: StagedProblem + ?Sized>(
    p: &P,
    values: &ValueTable,
    t: usize,
    s: usize,
    a: usize,
) -> f64 {
    p.row(s, a)
        .iter()
        .enumerate()
        .filter(|(_, &pr)| pr > 0.0)
        .map(|(next, &pr)| pr * (p.stage_reward(t, s, a, next) + values.get(next, t + 1)))
        .sum()
}

/// Optimal backward induction. States with no enabled action keep
/// `-inf` and an undefined policy entry.
pub fn solve_staged<P: StagedProblem + ?Sized>(p: &P) -> Solution {
    let n = p.num_states();
    let h = p.horizon();
    let mut values = ValueTable::filled(n, h, f64::NEG_INFINITY);
    let mut policy = Policy::undefined(n, h);
    for s in 0..n {
        values.set(s, h, p.terminal_reward(s));
    }
    let mut qs = Vec::with_capacity(p.num_actions());
    for t in (0..h).rev() {
        for s in 0..n {
            qs.clear();
            for a in 0..p.num_actions() {
                if p.is_enabled(s, a) {
                    qs.push((a, q_value(p, &values, t, s, a)));
                }
            }
            if let Some((a, v)) = argmax_lowest(&qs) {
                values.set(s, t, v);
                policy.set(s, t, a);
            }
        }
    }
    Solution { values, policy }
}

/// Stages at which each state is reached with positive probability from
/// `initial` when following `policy`. Fails on the first reachable pair
/// the policy leaves undefined or maps to a disabled action.
pub fn policy_reachability<P: StagedProblem + ?Sized>(
    p: &P,
    initial: usize,
    policy: &Policy,
) -> Result<Vec<Vec<bool>>> {
    let n = p.num_states();
    let h = p.horizon();
    let mut reach = vec![vec![false; n]; h + 1];
    reach[0][initial] = true;
    for t in 0..h {
        for s in 0..n {
            if !reach[t][s] {
                continue;
            }
            let a = policy.require(s, t)?;
            if a >= p.num_actions() || !p.is_enabled(s, a) {
                return Err(Error::ActionNotEnabled {
                    state: s,
                    time: t,
                    action: a,
                });
            }
            for (next, &pr) in p.row(s, a).iter().enumerate() {
                if pr > 0.0 {
                    reach[t + 1][next] = true;
                }
            }
        }
    }
    Ok(reach)
}

/// Fixed-policy backward evaluation. Entries at pairs the policy never
/// reaches from `initial` and leaves undefined are `NaN`.
pub fn evaluate_staged<P: StagedProblem + ?Sized>(
    p: &P,
    initial: usize,
    policy: &Policy,
) -> Result<ValueTable> {
    policy_reachability(p, initial, policy)?;
    let n = p.num_states();
    let h = p.horizon();
    let mut values = ValueTable::filled(n, h, f64::NAN);
    for s in 0..n {
        values.set(s, h, p.terminal_reward(s));
    }
    for t in (0..h).rev() {
        for s in 0..n {
            if let Some(a) = policy.get(s, t) {
                if a < p.num_actions() {
                    values.set(s, t, q_value(p, &values, t, s, a));
                }
            }
        }
    }
    Ok(values)
}

/// A tabular finite-horizon MDP with stationary stage rewards and a
/// terminal reward at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonMDP {
    num_states: usize,
    num_actions: usize,
    initial: usize,
    horizon: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    terminal: Vec<f64>,
    enabled: Vec<bool>,
}

impl FiniteHorizonMDP {
    /// `transition` and `reward` are laid out `[s][a][s']`, `enabled` as
    /// `[s][a]` (all actions enabled when `None`).
    pub fn new(
        num_states: usize,
        num_actions: usize,
        initial: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        terminal: Vec<f64>,
        enabled: Option<Vec<bool>>,
    ) -> Result<Self> {
        let sas = num_states * num_actions * num_states;
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("MDP needs at least one state and action".into()));
        }
        if transition.len() != sas || reward.len() != sas {
            return Err(Error::InvalidModel(format!(
                "transition/reward tables must have {} entries, got {} and {}",
                sas,
                transition.len(),
                reward.len()
            )));
        }
        if terminal.len() != num_states {
            return Err(Error::InvalidModel(format!(
                "terminal reward table must have {} entries, got {}",
                num_states,
                terminal.len()
            )));
        }
        if initial >= num_states {
            return Err(Error::InvalidModel(format!("initial state {initial} out of range")));
        }
        let enabled = enabled.unwrap_or_else(|| vec![true; num_states * num_actions]);
        if enabled.len() != num_states * num_actions {
            return Err(Error::InvalidModel("enable mask has the wrong size".into()));
        }
        Ok(FiniteHorizonMDP {
            num_states,
            num_actions,
            initial,
            horizon,
            transition,
            reward,
            terminal,
            enabled,
        })
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub(crate) fn disable(&mut self, s: usize, a: usize) {
        self.enabled[s * self.num_actions + a] = false;
    }

    /// Rows whose mass differs from one by more than `TOL_P`, with their residual.
    pub fn stochasticity_violations(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let sum: f64 = self.row(s, a).iter().sum();
                if (sum - 1.0).abs() > TOL_P {
                    out.push((s, a, (sum - 1.0).abs()));
                }
            }
        }
        out
    }

    pub fn solve_backward(&self) -> Solution {
        solve_staged(self)
    }

    pub fn evaluate_policy_backward(&self, policy: &Policy) -> Result<ValueTable> {
        evaluate_staged(self, self.initial, policy)
    }

    /// Value at `(s0, 0)`.
    pub fn policy_value(&self, policy: &Policy) -> Result<f64> {
        Ok(self.evaluate_policy_backward(policy)?.get(self.initial, 0))
    }
}

impl StagedProblem for FiniteHorizonMDP {
    fn num_states(&self) -> usize {
        self.num_states
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn is_enabled(&self, state: usize, action: usize) -> bool {
        self.enabled[state * self.num_actions + action]
    }
    fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }
    fn stage_reward(&self, _time: usize, state: usize, action: usize, next: usize) -> f64 {
        self.reward(state, action, next)
    }
    fn terminal_reward(&self, state: usize) -> f64 {
        self.terminal[state]
    }
}
