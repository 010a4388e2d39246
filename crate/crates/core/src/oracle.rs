//! Brute-force ground truth: policy-space enumeration, exact best responses
//! and history-dependent best responses.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{argmax_lowest, solve_staged, StagedProblem};
use crate::model::{compose_joint, Agent, FactoredDecMDP, JointDecMDP, LocalModel, ObservationMode, DEFAULT_MAX_JOINT_STATES};
use crate::policy::LocalPolicy;

/// Default cap on the number of policies an enumeration may visit.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Cap on the number of local histories `|S_i|^T` for the history oracle.
pub const HISTORY_GUARD: u128 = 100_000;

/// Per agent, the `(s, t)` pairs reachable from `s_i^0` under some
/// sequence of enabled actions (`reach[t][s]`, `t = 0..=T`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachableSet {
    pub per_agent: [Vec<Vec<bool>>; 2],
}

impl ReachableSet {
    pub fn of(f: &FactoredDecMDP) -> Self {
        ReachableSet {
            per_agent: [
                f.local(Agent::One).reachable(f.horizon()),
                f.local(Agent::Two).reachable(f.horizon()),
            ],
        }
    }

    pub fn contains(&self, agent: Agent, state: usize, time: usize) -> bool {
        self.per_agent[agent.index()]
            .get(time)
            .and_then(|row| row.get(state))
            .copied()
            .unwrap_or(false)
    }

    pub fn len(&self, agent: Agent) -> usize {
        self.per_agent[agent.index()].iter().flatten().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationOptions {
    pub budget: u128,
    pub restrict_to_reachable: bool,
    /// Merge actions with identical cost and successor row at a state.
    pub collapse_duplicates: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            budget: DEFAULT_BUDGET,
            restrict_to_reachable: true,
            collapse_duplicates: true,
        }
    }
}

/// All deterministic `(s, t)` policies of one agent over a domain, in
/// lexicographic order of the domain's choices.
#[derive(Debug, Clone)]
pub struct PolicySpace {
    num_states: usize,
    horizon: usize,
    domain: Vec<(usize, usize)>,
    choices: Vec<Vec<usize>>,
    default_action: Vec<usize>,
    count: u128,
    raw_count: u128,
}

fn saturating_product(it: impl Iterator<Item = usize>) -> u128 {
    it.fold(1u128, |acc, k| acc.saturating_mul(k as u128))
}

impl PolicySpace {
    /// Number of policies enumerated.
    pub fn count(&self) -> u128 {
        self.count
    }

    /// `Π |enabled actions|` over the domain, without merging duplicates.
    pub fn raw_count(&self) -> u128 {
        self.raw_count
    }

    pub fn domain(&self) -> &[(usize, usize)] {
        &self.domain
    }

    /// The `index`-th policy; the first domain pair is the most significant
    /// digit. Pairs outside the domain get the lowest enabled action.
    pub fn policy(&self, index: u128) -> LocalPolicy {
        let mut p = LocalPolicy::from_fn(self.num_states, self.horizon, |s, _| Some(self.default_action[s]));
        let mut rest = index;
        for (k, &(s, t)) in self.domain.iter().enumerate().rev() {
            let radix = self.choices[k].len() as u128;
            p.set(s, t, self.choices[k][(rest % radix) as usize]);
            rest /= radix;
        }
        p
    }

    pub fn iter(&self) -> impl Iterator<Item = LocalPolicy> + '_ {
        (0..self.count).map(move |i| self.policy(i))
    }
}

/// Builds the policy space of `local` over decision times `0..horizon`;
/// refuses when the enumerated count exceeds the budget.
pub fn enumerate_policy_space(local: &LocalModel, horizon: usize, opts: EnumerationOptions) -> Result<PolicySpace> {
    let n = local.num_states();
    let reach = local.reachable(horizon);
    let mut domain = Vec::new();
    let mut choices = Vec::new();
    let mut raw = Vec::new();
    for t in 0..horizon {
        for s in 0..n {
            if opts.restrict_to_reachable && !reach[t][s] {
                continue;
            }
            let enabled: Vec<usize> = local.enabled_actions(s).collect();
            raw.push(enabled.len());
            domain.push((s, t));
            choices.push(if opts.collapse_duplicates { local.distinct_actions(s) } else { enabled });
        }
    }
    let count = saturating_product(choices.iter().map(Vec::len));
    if count > opts.budget {
        return Err(Error::BudgetExceeded {
            count,
            budget: opts.budget,
        });
    }
    let default_action = (0..n)
        .map(|s| local.enabled_actions(s).next().unwrap_or(0))
        .collect();
    Ok(PolicySpace {
        num_states: n,
        horizon,
        domain,
        choices,
        default_action,
        count,
        raw_count: saturating_product(raw.into_iter()),
    })
}

/// One agent's finite-horizon problem against a fixed partner: time-varying
/// stage reward `stage[t] + C(a)` (independent of the successor) and a
/// terminal table.
pub(crate) struct PartnerFixedMdp<'a> {
    pub local: &'a LocalModel,
    pub horizon: usize,
    pub stage: Vec<f64>,
    pub terminal: Vec<f64>,
}

impl StagedProblem for PartnerFixedMdp<'_> {
    fn num_states(&self) -> usize {
        self.local.num_states()
    }
    fn num_actions(&self) -> usize {
        self.local.num_actions()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn is_enabled(&self, state: usize, action: usize) -> bool {
        self.local.is_enabled(state, action)
    }
    fn row(&self, state: usize, action: usize) -> &[f64] {
        self.local.row(state, action)
    }
    fn stage_reward(&self, time: usize, _state: usize, action: usize, _next: usize) -> f64 {
        self.stage[time] + self.local.cost(action)
    }
    fn terminal_reward(&self, state: usize) -> f64 {
        self.terminal[state]
    }
}

/// Forward distribution `d_t` of an agent's autonomous chain under its
/// policy, for `t = 0..=T`, plus its expected stage cost per `t`.
pub fn forward_distribution(local: &LocalModel, policy: &LocalPolicy, horizon: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = local.num_states();
    let mut d = vec![vec![0.0; n]; horizon + 1];
    let mut cost = vec![0.0; horizon];
    d[0][local.initial()] = 1.0;
    for t in 0..horizon {
        for s in 0..n {
            let mass = d[t][s];
            if mass == 0.0 {
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
            cost[t] += mass * local.cost(a);
            for (next, &p) in local.row(s, a).iter().enumerate() {
                if p > 0.0 {
                    d[t + 1][next] += mass * p;
                }
            }
        }
    }
    Ok((d, cost))
}

/// Agent 2's exact best response to a fixed `δ1`, and the joint value.
pub fn best_response(f: &FactoredDecMDP, delta1: &LocalPolicy) -> Result<(LocalPolicy, f64)> {
    let l1 = f.local(Agent::One);
    let l2 = f.local(Agent::Two);
    let (d, stage) = forward_distribution(l1, delta1, f.horizon())?;
    let mut terminal = vec![0.0; l2.num_states()];
    for (k, &(g1, g2)) in f.goals().iter().enumerate() {
        if f.goals()[..k].contains(&(g1, g2)) {
            continue;
        }
        terminal[g2] += d[f.horizon()][g1] * f.joint_reward()[k];
    }
    let mdp = PartnerFixedMdp {
        local: l2,
        horizon: f.horizon(),
        stage,
        terminal,
    };
    let sol = solve_staged(&mdp);
    Ok((sol.policy, sol.values.get(l2.initial(), 0)))
}

/// Best response of `responder` to the other agent's fixed policy.
pub fn best_response_of(f: &FactoredDecMDP, responder: Agent, fixed: &LocalPolicy) -> Result<(LocalPolicy, f64)> {
    match responder {
        Agent::Two => best_response(f, fixed),
        Agent::One => best_response(&f.swapped(), fixed),
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub policies: [LocalPolicy; 2],
    pub value: f64,
    /// The agent whose policy space was enumerated.
    pub enumerated_agent: Agent,
    pub enumerated: u128,
    pub raw_count: u128,
    pub best_index: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceSizes {
    pub agent1: u128,
    pub agent2: u128,
    pub agent1_raw: u128,
    pub agent2_raw: u128,
}

/// Policy-space sizes of both agents, without a budget.
pub fn policy_space_sizes(f: &FactoredDecMDP, opts: EnumerationOptions) -> SpaceSizes {
    let unlimited = EnumerationOptions {
        budget: u128::MAX,
        ..opts
    };
    let a = enumerate_policy_space(f.local(Agent::One), f.horizon(), unlimited).expect("unlimited budget");
    let b = enumerate_policy_space(f.local(Agent::Two), f.horizon(), unlimited).expect("unlimited budget");
    SpaceSizes {
        agent1: a.count(),
        agent2: b.count(),
        agent1_raw: a.raw_count(),
        agent2_raw: b.raw_count(),
    }
}

/// Optimal decentralized `(s_i, t)` joint policy: enumerates the smaller of
/// the two policy spaces (agent 1 on ties) and best-responds with the other
/// agent. Reduction by (value, lowest index) is independent of threading.
pub fn exhaustive_optimal(f: &FactoredDecMDP, opts: EnumerationOptions) -> Result<OracleResult> {
    let sizes = policy_space_sizes(f, opts);
    let enumerated_agent = if sizes.agent2 < sizes.agent1 { Agent::Two } else { Agent::One };
    let view = match enumerated_agent {
        Agent::One => f.clone(),
        Agent::Two => f.swapped(),
    };
    let space = enumerate_policy_space(view.local(Agent::One), view.horizon(), opts)?;
    let count = u64::try_from(space.count()).map_err(|_| Error::BudgetExceeded {
        count: space.count(),
        budget: opts.budget,
    })?;
    let better = |a: (f64, u64), b: (f64, u64)| {
        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let (value, index) = (0..count)
        .into_par_iter()
        .map(|i| best_response(&view, &space.policy(i as u128)).map(|(_, v)| (v, i)))
        .try_reduce(|| (f64::NEG_INFINITY, u64::MAX), |a, b| Ok(better(a, b)))?;
    let fixed = space.policy(index as u128);
    let (response, v) = best_response(&view, &fixed)?;
    debug_assert_eq!(v, value);
    let policies = match enumerated_agent {
        Agent::One => [fixed, response],
        Agent::Two => [response, fixed],
    };
    Ok(OracleResult {
        policies,
        value,
        enumerated_agent,
        enumerated: space.count(),
        raw_count: space.raw_count(),
        best_index: index as u128,
    })
}

/// Agent 2's best response to `δ1` over policies of its full local state
/// history, computed by expectimax over the composed joint model with
/// Bayesian filtering of the joint state. Independent of the factored
/// structure the `(s, t)` best response relies on.
pub fn history_best_response(f: &FactoredDecMDP, delta1: &LocalPolicy) -> Result<f64> {
    let n2 = f.local(Agent::Two).num_states() as u128;
    let histories = n2.checked_pow(f.horizon() as u32).unwrap_or(u128::MAX);
    if histories > HISTORY_GUARD {
        return Err(Error::BudgetExceeded {
            count: histories,
            budget: HISTORY_GUARD,
        });
    }
    let m = compose_joint(f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES)?;
    let mut belief = vec![0.0; m.num_states()];
    belief[m.initial()] = 1.0;
    let s2 = f.local(Agent::Two).initial();
    history_value(&m, delta1, &belief, s2, 0)
}

/// `belief` is the unnormalized joint distribution consistent with agent
/// 2's history ending in `s2` at time `t`.
fn history_value(m: &JointDecMDP, delta1: &LocalPolicy, belief: &[f64], s2: usize, t: usize) -> Result<f64> {
    let split = m.split().expect("composed models carry a split");
    if t == m.horizon() {
        return Ok(belief.iter().zip(m.terminal_reward()).map(|(b, r)| b * r).sum());
    }
    let n = m.num_states();
    let (_, n2) = split.sizes();
    let mut candidates = Vec::new();
    for a2 in 0..m.num_actions(Agent::Two) {
        let probe = split.joint(0, s2);
        if !m.is_enabled(Agent::Two, probe, a2) {
            continue;
        }
        let mut immediate = 0.0;
        let mut next = vec![vec![0.0; n]; n2];
        for s in 0..n {
            let b = belief[s];
            if b == 0.0 {
                continue;
            }
            let (s1, _) = split.pair(s);
            let a1 = delta1.require(s1, t)?;
            for (ns, &p) in m.row(s, a1, a2).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                immediate += b * p * m.r(s, a1, a2, ns);
                next[split.component(ns, Agent::Two)][ns] += b * p;
            }
        }
        let mut v = immediate;
        for (o2, nb) in next.iter().enumerate() {
            if nb.iter().any(|&x| x > 0.0) {
                v += history_value(m, delta1, nb, o2, t + 1)?;
            }
        }
        candidates.push((a2, v));
    }
    Ok(argmax_lowest(&candidates).map_or(f64::NEG_INFINITY, |(_, v)| v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::{compute_v, opt1goal, optngoals, DEFAULT_GR};
    use crate::model::tests::toggle_model;
    use crate::model::{centralize, FactoredDecMDP, LocalModel};
    use crate::policy::Policy;

    fn two_state_no_goal_local() -> LocalModel {
        LocalModel::new(2, 0, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], vec![-1.0, -1.0], None, &[]).unwrap()
    }

    #[test]
    fn two_states_two_actions_one_step_gives_four_policies() {
        let opts = EnumerationOptions {
            restrict_to_reachable: false,
            collapse_duplicates: false,
            ..Default::default()
        };
        let space = enumerate_policy_space(&two_state_no_goal_local(), 1, opts).unwrap();
        assert_eq!(space.count(), 4);
        let all: Vec<_> = space.iter().collect();
        assert_eq!(all.len(), 4);
        assert_eq!(all[1].get(0, 0), Some(0));
        assert_eq!(all[1].get(1, 0), Some(1));
    }

    #[test]
    fn three_states_three_actions_three_steps() {
        let tr = vec![1.0 / 3.0; 27];
        let l = LocalModel::new(3, 0, 3, tr, vec![-1.0; 3], None, &[]).unwrap();
        let opts = EnumerationOptions {
            restrict_to_reachable: false,
            collapse_duplicates: false,
            ..Default::default()
        };
        assert_eq!(enumerate_policy_space(&l, 3, opts).unwrap().count(), 19683);
        let tight = EnumerationOptions { budget: 10, ..opts };
        match enumerate_policy_space(&l, 3, tight) {
            Err(Error::BudgetExceeded { count: 19683, budget: 10 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn restricting_to_reachable_pairs_shrinks_the_space() {
        let l = two_state_no_goal_local();
        let full = EnumerationOptions {
            restrict_to_reachable: false,
            collapse_duplicates: false,
            ..Default::default()
        };
        let restricted = EnumerationOptions {
            restrict_to_reachable: true,
            ..full
        };
        // State 1 is unreachable at t = 0.
        assert!(enumerate_policy_space(&l, 2, restricted).unwrap().count() < enumerate_policy_space(&l, 2, full).unwrap().count());
    }

    #[test]
    fn corridor_oracle_value_is_eight() {
        let l = crate::goals::tests::corridor_local(2, 1.0, 0, &[1]);
        let f = FactoredDecMDP::new(l.clone(), l, vec![(1, 1)], vec![10.0], 2).unwrap();
        let r = exhaustive_optimal(&f, EnumerationOptions::default()).unwrap();
        assert!((r.value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn best_response_matches_joint_evaluation() {
        let f = toggle_model(0.7, 3);
        let d1 = Policy::constant(2, 3, 0);
        let (d2, v) = best_response(&f, &d1).unwrap();
        let cv = compute_v(&f, [&d1, &d2], (0, 0)).unwrap();
        assert!((v - cv).abs() < 1e-12);
    }

    #[test]
    fn partner_waiting_at_goal_reduces_to_solo_shortest_path() {
        let l = crate::goals::tests::corridor_local(3, 0.8, 2, &[2]);
        let me = crate::goals::tests::corridor_local(3, 0.8, 0, &[2]);
        let f = FactoredDecMDP::new(l, me, vec![(2, 2)], vec![10.0], 3).unwrap();
        let nop = Policy::constant(3, 3, 2);
        let (_, v) = best_response(&f, &nop).unwrap();
        // Hand DP: move right every stage; reach prob by T=3 from 0 with
        // two successes out of three tries at 0.8, cost paid until arrival.
        let reach = 0.8 * 0.8 + 2.0 * 0.8 * 0.2 * 0.8;
        let cost = -(1.0 + 1.0 + (1.0 - 0.8 * 0.8));
        assert!((v - (10.0 * reach + cost)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn swapped_roles_give_the_same_value_on_symmetric_models() {
        let f = toggle_model(0.6, 3);
        let d = Policy::constant(2, 3, 0);
        let (_, a) = best_response_of(&f, Agent::Two, &d).unwrap();
        let (_, b) = best_response_of(&f, Agent::One, &d).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn history_best_response_equals_markov_best_response() {
        for horizon in 1..=3 {
            let f = toggle_model(0.7, horizon);
            let d1 = Policy::constant(2, horizon, 0);
            let (_, v) = best_response(&f, &d1).unwrap();
            let h = history_best_response(&f, &d1).unwrap();
            assert!((v - h).abs() < 1e-9, "T={horizon}: {v} vs {h}");
        }
    }

    #[test]
    fn oracle_is_sandwiched() {
        let f = toggle_model(0.6, 3);
        let r = exhaustive_optimal(&f, EnumerationOptions::default()).unwrap();
        let b = optngoals(&f, DEFAULT_GR).unwrap();
        let joint = compose_joint(&f, ObservationMode::LocalState, 100).unwrap();
        let c = centralize(&joint).solve_backward().values.get(joint.initial(), 0);
        assert!(b.value <= r.value + 1e-9);
        assert!(r.value <= c + 1e-9);
        let o = opt1goal(&f, (1, 1), DEFAULT_GR).unwrap();
        assert!((o.value - r.value).abs() < 1e-9);
    }
}
