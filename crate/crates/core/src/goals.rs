//! Single-goal and multi-goal solvers for goal-oriented models with
//! independent transitions and observations, joint policy evaluation and
//! the no-benefit-to-change-local-goals check.

use rayon::prelude::*;
use serde::Serialize;

use crate::classifier;
use crate::error::{Error, Result};
use crate::mdp::{tie_tolerance, FiniteHorizonMDP, Solution, ValueTable};
use crate::model::{Agent, FactoredDecMDP, LocalModel};
use crate::policy::LocalPolicy;
use crate::TOL_V;

/// Goal reward used when the caller does not pick one.
pub const DEFAULT_GR: f64 = 1.0;

/// Local MDP with stage reward `C(a)` and terminal reward `GR` at `goal`.
/// NOP stays available only at `goal` (and where it is the sole action),
/// so idling at another goal's component cannot undercut the path to this
/// one whatever the value of `GR`.
pub fn compute_local_reward(local: &LocalModel, goal: usize, gr: f64, horizon: usize) -> Result<FiniteHorizonMDP> {
    if goal >= local.num_states() {
        return Err(Error::InvalidArgument(format!("local goal {goal} out of range")));
    }
    let mut terminal = vec![0.0; local.num_states()];
    terminal[goal] = gr;
    let mut mdp = local.to_mdp(horizon, terminal)?;
    if let Some(nop) = local.nop() {
        for s in (0..local.num_states()).filter(|&s| s != goal && local.is_enabled(s, nop)) {
            if local.enabled_actions(s).any(|a| a != nop) {
                mdp.disable(s, nop);
            }
        }
    }
    Ok(mdp)
}

/// `reach[t][s]` for `t = start_time..=T` under `policy`, starting from
/// `start`. Fails if the policy is undefined or selects a disabled action
/// at a reached pair.
pub fn local_policy_reach(
    local: &LocalModel,
    policy: &LocalPolicy,
    start: usize,
    start_time: usize,
    horizon: usize,
) -> Result<Vec<Vec<bool>>> {
    let n = local.num_states();
    let mut reach = vec![vec![false; n]; horizon + 1];
    if start_time > horizon {
        return Ok(reach);
    }
    reach[start_time][start] = true;
    for t in start_time..horizon {
        for s in 0..n {
            if !reach[t][s] {
                continue;
            }
            let a = policy.require(s, t)?;
            if a >= local.num_actions() || !local.is_enabled(s, a) {
                return Err(Error::ActionNotEnabled {
                    state: s,
                    time: t,
                    action: a,
                });
            }
            for (next, &p) in local.row(s, a).iter().enumerate() {
                if p > 0.0 {
                    reach[t + 1][next] = true;
                }
            }
        }
    }
    Ok(reach)
}

#[derive(Debug, Clone)]
pub struct Opt1GoalResult {
    pub goal: (usize, usize),
    pub policies: [LocalPolicy; 2],
    pub local_values: [ValueTable; 2],
    pub value: f64,
    pub optimality_guaranteed: bool,
    pub notes: Vec<String>,
}

fn solve_local(local: &LocalModel, goal: usize, gr: f64, horizon: usize) -> Result<Solution> {
    Ok(compute_local_reward(local, goal, gr, horizon)?.solve_backward())
}

/// Each agent solves its own MDP towards its component of `goal`; the
/// joint value comes from [`compute_v`].
pub fn opt1goal(f: &FactoredDecMDP, goal: (usize, usize), gr: f64) -> Result<Opt1GoalResult> {
    if f.goal_index(goal).is_none() {
        return Err(Error::UnknownGoal(goal.0, goal.1));
    }
    let go = classifier::check_goal_oriented(f);
    let mut notes = Vec::new();
    if !go.verdict.holds {
        notes.push("model is not goal-oriented: no optimality guarantee".to_string());
    }
    if !go.uniform_cost {
        notes.push("costs are not uniform: no optimality guarantee".to_string());
    }
    if f.goals().len() != 1 {
        notes.push("more than one goal: no optimality guarantee for a single-goal solve".to_string());
    }
    let s1 = solve_local(f.local(Agent::One), goal.0, gr, f.horizon())?;
    let s2 = solve_local(f.local(Agent::Two), goal.1, gr, f.horizon())?;
    let start = (f.local(Agent::One).initial(), f.local(Agent::Two).initial());
    let value = compute_v(f, [&s1.policy, &s2.policy], start)?;
    Ok(Opt1GoalResult {
        goal,
        policies: [s1.policy, s2.policy],
        local_values: [s1.values, s2.values],
        value,
        optimality_guaranteed: notes.is_empty(),
        notes,
    })
}

/// Exact value of the joint policy `(δ1, δ2)` from `start` at time 0:
/// backward recursion over reachable local-state pairs with stage reward
/// `C(a1) + C(a2)` and terminal JR at T.
pub fn compute_v(f: &FactoredDecMDP, policies: [&LocalPolicy; 2], start: (usize, usize)) -> Result<f64> {
    let l1 = f.local(Agent::One);
    let l2 = f.local(Agent::Two);
    let horizon = f.horizon();
    let (n1, n2) = (l1.num_states(), l2.num_states());
    if start.0 >= n1 || start.1 >= n2 {
        return Err(Error::InvalidArgument(format!("start state {start:?} out of range")));
    }
    let r1 = local_policy_reach(l1, policies[0], start.0, 0, horizon)?;
    let r2 = local_policy_reach(l2, policies[1], start.1, 0, horizon)?;
    let mut next = f.terminal_table();
    let mut cur = vec![0.0; n1 * n2];
    for t in (0..horizon).rev() {
        for s1 in (0..n1).filter(|&s| r1[t][s]) {
            let a1 = policies[0].require(s1, t)?;
            let row1 = l1.row(s1, a1);
            for s2 in (0..n2).filter(|&s| r2[t][s]) {
                let a2 = policies[1].require(s2, t)?;
                let row2 = l2.row(s2, a2);
                let mut v = l1.cost(a1) + l2.cost(a2);
                for (t1, &p1) in row1.iter().enumerate() {
                    if p1 == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for (t2, &p2) in row2.iter().enumerate() {
                        if p2 != 0.0 {
                            inner += p2 * next[t1 * n2 + t2];
                        }
                    }
                    v += p1 * inner;
                }
                cur[s1 * n2 + s2] = v;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(next[start.0 * n2 + start.1])
}

/// Per-goal solutions and the best goal.
#[derive(Debug, Clone)]
pub struct GoalPolicyBundle {
    pub per_goal: Vec<Opt1GoalResult>,
    pub chosen: usize,
    pub value: f64,
    pub optimality_guaranteed: bool,
    pub notes: Vec<String>,
}

impl GoalPolicyBundle {
    pub fn chosen_policies(&self) -> [&LocalPolicy; 2] {
        let r = &self.per_goal[self.chosen];
        [&r.policies[0], &r.policies[1]]
    }

    pub fn values(&self) -> Vec<f64> {
        self.per_goal.iter().map(|r| r.value).collect()
    }
}

/// Runs [`opt1goal`] for every goal (concurrently) and keeps the best,
/// ties going to the lowest goal index. The optimality tag additionally
/// needs NBCLG, which is checked separately.
pub fn optngoals(f: &FactoredDecMDP, gr: f64) -> Result<GoalPolicyBundle> {
    if f.goals().is_empty() {
        return Err(Error::EmptyGoalSet);
    }
    let per_goal: Vec<Opt1GoalResult> = f
        .goals()
        .par_iter()
        .map(|&g| opt1goal(f, g, gr))
        .collect::<Result<_>>()?;
    let best = per_goal.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    let chosen = per_goal
        .iter()
        .position(|r| r.value >= best - tie_tolerance(best))
        .expect("at least one goal");
    let mut notes = Vec::new();
    let go = classifier::check_goal_oriented(f);
    if !go.verdict.holds {
        notes.push("model is not goal-oriented: no optimality guarantee".to_string());
    }
    if !go.uniform_cost {
        notes.push("costs are not uniform: no optimality guarantee".to_string());
    }
    if !classifier::check_distinctive_goals(f).holds {
        notes.push("goals are not distinctive: no optimality guarantee".to_string());
    }
    Ok(GoalPolicyBundle {
        value: per_goal[chosen].value,
        per_goal,
        chosen,
        optimality_guaranteed: notes.is_empty(),
        notes,
    })
}

/// `α[j](s, t)`: probability of occupying `targets[j]` at time T when
/// following the policy from `s` at `t`. NaN where the policy is undefined
/// along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTable {
    num_states: usize,
    horizon: usize,
    targets: Vec<usize>,
    data: Vec<f64>,
}

impl ReachTable {
    #[inline]
    pub fn get(&self, target: usize, state: usize, time: usize) -> f64 {
        self.data[(target * (self.horizon + 1) + time) * self.num_states + state]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Backward recursion on the indicator of each target at time T.
pub fn reach_probabilities(local: &LocalModel, policy: &LocalPolicy, targets: &[usize]) -> ReachTable {
    let n = local.num_states();
    let horizon = policy.horizon();
    let mut data = vec![0.0; targets.len() * (horizon + 1) * n];
    for (j, &g) in targets.iter().enumerate() {
        let at = |t: usize, s: usize| (j * (horizon + 1) + t) * n + s;
        data[at(horizon, g)] = 1.0;
        for t in (0..horizon).rev() {
            for s in 0..n {
                data[at(t, s)] = match policy.get(s, t) {
                    Some(a) if a < local.num_actions() => local
                        .row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(next, &p)| p * data[at(t + 1, next)])
                        .sum(),
                    _ => f64::NAN,
                };
            }
        }
    }
    ReachTable {
        num_states: n,
        horizon,
        targets: targets.to_vec(),
        data,
    }
}

/// `C̄(s, t)` for every pair: expected sum of action costs over stages
/// `t..T-1` under the policy. NaN where the policy is undefined along the way.
pub fn expected_cost_table(local: &LocalModel, policy: &LocalPolicy) -> ValueTable {
    let n = local.num_states();
    let horizon = policy.horizon();
    let mut v = vec![vec![0.0; n]; horizon + 1];
    for t in (0..horizon).rev() {
        for s in 0..n {
            v[t][s] = match policy.get(s, t) {
                Some(a) if a < local.num_actions() => {
                    local.cost(a)
                        + local
                            .row(s, a)
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0.0)
                            .map(|(next, &p)| p * v[t + 1][next])
                            .sum::<f64>()
                }
                _ => f64::NAN,
            };
        }
    }
    ValueTable::from_stages(v)
}

pub fn expected_cost(local: &LocalModel, policy: &LocalPolicy, state: usize, time: usize) -> f64 {
    expected_cost_table(local, policy).get(state, time)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NbclgViolation {
    pub agent: Agent,
    pub state: usize,
    pub time: usize,
    pub competing_goal: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct NbclgReport {
    pub holds: bool,
    pub chosen: usize,
    pub violations: Vec<NbclgViolation>,
    /// `alpha[i][j]`: agent 1 under `δ1^i`, targets `g1^j`.
    pub alpha: Vec<Vec<ReachTable>>,
    /// `beta[i][j]`: agent 2 under `δ2^i`, targets `g2^j`.
    pub beta: Vec<Vec<ReachTable>>,
    /// `cost_bar[agent][i]`: `C̄(s, t)` under `δ_agent^i`.
    pub cost_bar: [Vec<ValueTable>; 2],
    pub bundle: GoalPolicyBundle,
}

/// Evaluates both NBCLG inequality families at every `(s_i, t)` reached by
/// the chosen goal's policy, with the partner's reach probabilities taken
/// from its initial state (the agent has no other information about it).
pub fn check_nbclg(f: &FactoredDecMDP, gr: Option<f64>) -> Result<NbclgReport> {
    let bundle = optngoals(f, gr.unwrap_or(DEFAULT_GR))?;
    let goals = f.goals();
    let m = goals.len();
    let jr = f.joint_reward();
    let i = bundle.chosen;
    let components = |agent: Agent| -> Vec<usize> { (0..m).map(|k| f.goal_component(agent, k)).collect() };
    let mut tables: [Vec<Vec<ReachTable>>; 2] = Default::default();
    let mut cost_bar: [Vec<ValueTable>; 2] = Default::default();
    for agent in Agent::BOTH {
        let local = f.local(agent);
        let targets = components(agent);
        for goal in &bundle.per_goal {
            let pol = &goal.policies[agent.index()];
            let row = (0..m).map(|j| reach_probabilities(local, pol, &targets[j..=j])).collect();
            tables[agent.index()].push(row);
            cost_bar[agent.index()].push(expected_cost_table(local, pol));
        }
    }
    let mut violations = Vec::new();
    for agent in Agent::BOTH {
        let me = agent.index();
        let other = agent.other().index();
        let local = f.local(agent);
        let partner_start = f.local(agent.other()).initial();
        let partner: Vec<f64> = (0..m).map(|k| tables[other][i][k].get(0, partner_start, 0)).collect();
        let reach = local_policy_reach(local, &bundle.per_goal[i].policies[me], local.initial(), 0, f.horizon())?;
        let value = |policy: usize, s: usize, t: usize| -> f64 {
            let mut v = cost_bar[me][policy].get(s, t);
            for k in 0..m {
                v += tables[me][policy][k].get(0, s, t) * partner[k] * jr[k];
            }
            v
        };
        for t in 0..f.horizon() {
            for s in (0..local.num_states()).filter(|&s| reach[t][s]) {
                let lhs = value(i, s, t);
                for j in (0..m).filter(|&j| j != i) {
                    let rhs = value(j, s, t);
                    if rhs > lhs + TOL_V || (rhs.is_nan() && !lhs.is_nan()) {
                        violations.push(NbclgViolation {
                            agent,
                            state: s,
                            time: t,
                            competing_goal: j,
                            lhs,
                            rhs,
                        });
                    }
                }
            }
        }
    }
    let [alpha, beta] = tables;
    Ok(NbclgReport {
        holds: violations.is_empty(),
        chosen: i,
        violations,
        alpha,
        beta,
        cost_bar,
        bundle,
    })
}
