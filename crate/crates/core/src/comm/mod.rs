//! Direct communication: a two-way exchange of current local states at cost
//! `C_Σ`, policies indexed by the last synchronized state, exact evaluation,
//! optimal search, message-language experiments and the reduction to
//! indirect communication.

mod language;
mod search;
mod transform;

pub use language::{language_experiment, MessageKind, MessageMenu, LanguageResult, DEFAULT_LANGUAGE_BUDGET};
pub use search::{search_comm_optimal, CommSearchResult};
pub use transform::transform_direct_to_indirect;

use crate::error::{Error, Result};
use crate::model::{Agent, FactoredDecMDP};
use crate::policy::LocalPolicy;

/// Message alphabet and cost. Every non-null message is the sender's
/// current local state; the null message is free. An exchange happens when
/// at least one agent sends, reveals both local states and costs `cost`
/// once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommSpec {
    cost: f64,
}

impl CommSpec {
    pub fn new(cost: f64) -> Result<Self> {
        if !cost.is_finite() || cost > 0.0 {
            return Err(Error::InvalidArgument(format!(
                "message cost {cost} must be a finite value <= 0"
            )));
        }
        Ok(CommSpec { cost })
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }
}

/// What both agents know in common: the joint state revealed at the last
/// exchange (row-major `s1 * n2 + s2`, initially `s^0`) and when it
/// happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SyncState {
    pub state: usize,
    pub time: usize,
}

/// One agent's action and communication maps over
/// `(sync state, sync time, local state, t)`. Communication decisions are
/// taken at `t` in `1..T` before acting, from the sync state in force; the
/// action is looked up after any exchange at `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentCommPolicy {
    num_sync: usize,
    num_local: usize,
    horizon: usize,
    action: Vec<Option<usize>>,
    send: Vec<Option<bool>>,
}

impl AgentCommPolicy {
    pub fn undefined(num_sync: usize, num_local: usize, horizon: usize) -> Self {
        let len = num_sync * horizon * num_local * horizon;
        AgentCommPolicy {
            num_sync,
            num_local,
            horizon,
            action: vec![None; len],
            send: vec![None; len],
        }
    }

    #[inline]
    fn index(&self, sync: SyncState, local: usize, time: usize) -> Option<usize> {
        if sync.state >= self.num_sync || sync.time >= self.horizon || local >= self.num_local || time >= self.horizon {
            return None;
        }
        Some(((sync.state * self.horizon + sync.time) * self.num_local + local) * self.horizon + time)
    }

    pub fn action(&self, sync: SyncState, local: usize, time: usize) -> Option<usize> {
        self.index(sync, local, time).and_then(|i| self.action[i])
    }

    pub fn sends(&self, sync: SyncState, local: usize, time: usize) -> Option<bool> {
        self.index(sync, local, time).and_then(|i| self.send[i])
    }

    pub fn set_action(&mut self, sync: SyncState, local: usize, time: usize, action: usize) -> Result<()> {
        let i = self
            .index(sync, local, time)
            .ok_or_else(|| Error::InvalidArgument(format!("comm policy index out of range: {sync:?}, s={local}, t={time}")))?;
        self.action[i] = Some(action);
        Ok(())
    }

    pub fn set_send(&mut self, sync: SyncState, local: usize, time: usize, send: bool) -> Result<()> {
        let i = self
            .index(sync, local, time)
            .ok_or_else(|| Error::InvalidArgument(format!("comm policy index out of range: {sync:?}, s={local}, t={time}")))?;
        self.send[i] = Some(send);
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.num_sync, self.num_local, self.horizon)
    }

    /// All defined entries as `(sync, local, t, action, send)`.
    pub fn entries(&self) -> Vec<(SyncState, usize, usize, Option<usize>, Option<bool>)> {
        let mut out = Vec::new();
        for state in 0..self.num_sync {
            for stime in 0..self.horizon {
                for local in 0..self.num_local {
                    for time in 0..self.horizon {
                        let sync = SyncState { state, time: stime };
                        let i = self.index(sync, local, time).expect("in range");
                        if self.action[i].is_some() || self.send[i].is_some() {
                            out.push((sync, local, time, self.action[i], self.send[i]));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommPolicy {
    pub agents: [AgentCommPolicy; 2],
}

impl CommPolicy {
    pub fn undefined(f: &FactoredDecMDP) -> Self {
        let n = f.num_joint_states();
        let h = f.horizon();
        CommPolicy {
            agents: [
                AgentCommPolicy::undefined(n, f.local(Agent::One).num_states(), h),
                AgentCommPolicy::undefined(n, f.local(Agent::Two).num_states(), h),
            ],
        }
    }

    /// Plays `(δ1, δ2)` regardless of the sync state; `send` decides the
    /// communication maps.
    pub fn from_local_policies(
        f: &FactoredDecMDP,
        policies: [&LocalPolicy; 2],
        mut send: impl FnMut(Agent, SyncState, usize, usize) -> bool,
    ) -> Self {
        let mut p = CommPolicy::undefined(f);
        let n = f.num_joint_states();
        let h = f.horizon();
        for agent in Agent::BOTH {
            let i = agent.index();
            for state in 0..n {
                for stime in 0..h {
                    let sync = SyncState { state, time: stime };
                    for local in 0..f.local(agent).num_states() {
                        for t in stime..h {
                            let idx = p.agents[i].index(sync, local, t).expect("in range");
                            p.agents[i].action[idx] = policies[i].get(local, t);
                            if t > stime {
                                p.agents[i].send[idx] = Some(send(agent, sync, local, t));
                            }
                        }
                    }
                }
            }
        }
        p
    }

    /// Plays the joint-state policy `joint(s, t) = (a1, a2)` by exchanging
    /// at every stage.
    pub fn always_sync(f: &FactoredDecMDP, mut joint: impl FnMut(usize, usize) -> Option<(usize, usize)>) -> Self {
        let mut p = CommPolicy::undefined(f);
        let n = f.num_joint_states();
        let n2 = f.local(Agent::Two).num_states();
        let h = f.horizon();
        for state in 0..n {
            for t in 0..h {
                let sync = SyncState { state, time: t };
                let (s1, s2) = (state / n2, state % n2);
                if let Some((a1, a2)) = joint(state, t) {
                    p.agents[0].set_action(sync, s1, t, a1).expect("in range");
                    p.agents[1].set_action(sync, s2, t, a2).expect("in range");
                }
                for stime in 0..t {
                    let old = SyncState { state, time: stime };
                    for s in 0..f.local(Agent::One).num_states() {
                        p.agents[0].set_send(old, s, t, true).expect("in range");
                    }
                    for s in 0..n2 {
                        p.agents[1].set_send(old, s, t, true).expect("in range");
                    }
                }
            }
        }
        p
    }
}

fn require_action(p: &CommPolicy, f: &FactoredDecMDP, agent: Agent, sync: SyncState, local: usize, t: usize) -> Result<usize> {
    let a = p.agents[agent.index()]
        .action(sync, local, t)
        .ok_or(Error::CommPolicyUndefined {
            agent: agent.index() + 1,
            sync: sync.state,
            sync_time: sync.time,
            local,
            time: t,
            what: "action",
        })?;
    let l = f.local(agent);
    if a >= l.num_actions() || !l.is_enabled(local, a) {
        return Err(Error::ActionNotEnabled {
            state: local,
            time: t,
            action: a,
        });
    }
    Ok(a)
}

fn require_send(p: &CommPolicy, agent: Agent, sync: SyncState, local: usize, t: usize) -> Result<bool> {
    p.agents[agent.index()]
        .sends(sync, local, t)
        .ok_or(Error::CommPolicyUndefined {
            agent: agent.index() + 1,
            sync: sync.state,
            sync_time: sync.time,
            local,
            time: t,
            what: "communication",
        })
}

/// Exact expected total reward of a communication policy from `s^0`:
/// memoized recursion over (joint state, sync state, sync time, t).
pub fn eval_comm_policy(f: &FactoredDecMDP, spec: &CommSpec, policy: &CommPolicy) -> Result<f64> {
    let n2 = f.local(Agent::Two).num_states();
    let n = f.num_joint_states();
    let h = f.horizon();
    let s0 = f.local(Agent::One).initial() * n2 + f.local(Agent::Two).initial();
    let mut memo = vec![f64::NAN; n * n * h * (h + 1)];
    let rt = f.terminal_table();
    let mut ev = Evaluator {
        f,
        spec,
        policy,
        n2,
        n,
        h,
        rt,
        memo: &mut memo,
    };
    ev.value(s0, SyncState { state: s0, time: 0 }, 0)
}

struct Evaluator<'a> {
    f: &'a FactoredDecMDP,
    spec: &'a CommSpec,
    policy: &'a CommPolicy,
    n2: usize,
    n: usize,
    h: usize,
    rt: Vec<f64>,
    memo: &'a mut Vec<f64>,
}

impl Evaluator<'_> {
    fn value(&mut self, s: usize, sync: SyncState, t: usize) -> Result<f64> {
        if t == self.h {
            return Ok(self.rt[s]);
        }
        let key = ((s * self.n + sync.state) * self.h + sync.time) * (self.h + 1) + t;
        if !self.memo[key].is_nan() {
            return Ok(self.memo[key]);
        }
        let (s1, s2) = (s / self.n2, s % self.n2);
        let mut v = 0.0;
        let mut sync = sync;
        if t > sync.time {
            let send1 = require_send(self.policy, Agent::One, sync, s1, t)?;
            let send2 = require_send(self.policy, Agent::Two, sync, s2, t)?;
            if send1 || send2 {
                v += self.spec.cost();
                sync = SyncState { state: s, time: t };
            }
        }
        let a1 = require_action(self.policy, self.f, Agent::One, sync, s1, t)?;
        let a2 = require_action(self.policy, self.f, Agent::Two, sync, s2, t)?;
        let l1 = self.f.local(Agent::One);
        let l2 = self.f.local(Agent::Two);
        v += l1.cost(a1) + l2.cost(a2);
        for (t1, &p1) in l1.row(s1, a1).iter().enumerate() {
            if p1 == 0.0 {
                continue;
            }
            for (t2, &p2) in l2.row(s2, a2).iter().enumerate() {
                if p2 == 0.0 {
                    continue;
                }
                v += p1 * p2 * self.value(t1 * self.n2 + t2, sync, t + 1)?;
            }
        }
        self.memo[key] = v;
        Ok(v)
    }
}

/// Distribution over joint states at `t` paired with the sync state in
/// force, under a communication policy (the forward view of the sync chain).
pub fn sync_chain_distribution(
    f: &FactoredDecMDP,
    policy: &CommPolicy,
) -> Result<Vec<Vec<((usize, SyncState), f64)>>> {
    use std::collections::BTreeMap;
    let n2 = f.local(Agent::Two).num_states();
    let h = f.horizon();
    let s0 = f.local(Agent::One).initial() * n2 + f.local(Agent::Two).initial();
    let mut layers = Vec::with_capacity(h + 1);
    let mut cur: BTreeMap<(usize, SyncState), f64> = BTreeMap::new();
    cur.insert((s0, SyncState { state: s0, time: 0 }), 1.0);
    for t in 0..h {
        layers.push(cur.iter().map(|(&k, &v)| (k, v)).collect());
        let mut next = BTreeMap::new();
        for (&(s, sync0), &mass) in &cur {
            let (s1, s2) = (s / n2, s % n2);
            let mut sync = sync0;
            if t > sync.time
                && (require_send(policy, Agent::One, sync, s1, t)? || require_send(policy, Agent::Two, sync, s2, t)?)
            {
                sync = SyncState { state: s, time: t };
            }
            let a1 = require_action(policy, f, Agent::One, sync, s1, t)?;
            let a2 = require_action(policy, f, Agent::Two, sync, s2, t)?;
            for (t1, &p1) in f.local(Agent::One).row(s1, a1).iter().enumerate() {
                for (t2, &p2) in f.local(Agent::Two).row(s2, a2).iter().enumerate() {
                    if p1 * p2 > 0.0 {
                        *next.entry((t1 * n2 + t2, sync)).or_insert(0.0) += mass * p1 * p2;
                    }
                }
            }
        }
        cur = next;
    }
    layers.push(cur.into_iter().collect());
    Ok(layers)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::goals::{compute_v, opt1goal, DEFAULT_GR};
    use crate::model::tests::toggle_model;
    use crate::model::{centralize, compose_joint, ObservationMode};

    #[test]
    fn positive_cost_is_rejected() {
        assert!(CommSpec::new(0.5).is_err());
        assert!(CommSpec::new(f64::NAN).is_err());
        assert_eq!(CommSpec::new(-2.0).unwrap().cost(), -2.0);
    }

    #[test]
    fn never_sending_reduces_to_local_policy_value() {
        let f = toggle_model(0.6, 3);
        let r = opt1goal(&f, (1, 1), DEFAULT_GR).unwrap();
        let pi = CommPolicy::from_local_policies(&f, [&r.policies[0], &r.policies[1]], |_, _, _, _| false);
        let spec = CommSpec::new(-5.0).unwrap();
        let v = eval_comm_policy(&f, &spec, &pi).unwrap();
        let cv = compute_v(&f, [&r.policies[0], &r.policies[1]], (0, 0)).unwrap();
        assert!((v - cv).abs() < 1e-12);
    }

    #[test]
    fn free_exchange_every_stage_matches_the_centralized_policy_value() {
        let f = toggle_model(0.6, 3);
        let joint = compose_joint(&f, ObservationMode::LocalState, 100).unwrap();
        let c = centralize(&joint);
        let sol = c.solve_backward();
        let na2 = 2;
        let pi = CommPolicy::always_sync(&f, |s, t| sol.policy.get(s, t).map(|a| (a / na2, a % na2)));
        let v = eval_comm_policy(&f, &CommSpec::new(0.0).unwrap(), &pi).unwrap();
        assert!((v - sol.values.get(joint.initial(), 0)).abs() < 1e-12);
        // Each exchange costs once per stage after the first.
        let paid = eval_comm_policy(&f, &CommSpec::new(-1.0).unwrap(), &pi).unwrap();
        assert!((v - paid - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_entry_names_the_triple() {
        let f = toggle_model(0.6, 2);
        let pi = CommPolicy::undefined(&f);
        let err = eval_comm_policy(&f, &CommSpec::new(-1.0).unwrap(), &pi).unwrap_err();
        assert!(err.to_string().contains("agent 1"), "{err}");
    }

    #[test]
    fn sync_chain_starts_at_the_initial_state_with_certainty() {
        let f = toggle_model(0.6, 2);
        let r = opt1goal(&f, (1, 1), DEFAULT_GR).unwrap();
        let pi = CommPolicy::from_local_policies(&f, [&r.policies[0], &r.policies[1]], |_, _, s, _| s == 1);
        let layers = sync_chain_distribution(&f, &pi).unwrap();
        assert_eq!(layers[0], vec![((0, SyncState { state: 0, time: 0 }), 1.0)]);
        for layer in &layers {
            let total: f64 = layer.iter().map(|(_, m)| m).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
