//! JSON model, policy and communication-policy files.
//!
//! Model files carry `"type": "factored"` or `"type": "joint"`. Factored
//! transitions are nested `[s][a][s']`; joint tables are flat in the layout
//! documented on [`JointDecMDP::new`]. Policy files are lists of
//! `{"s", "t", "a"}` entries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comm::{CommPolicy, SyncState};
use crate::error::{Error, Result};
use crate::model::{Agent, FactoredDecMDP, JointDecMDP, JointExtras, LocalModel, Metadata, Model, StateSplit};
use crate::policy::{LocalPolicy, PolicyEntry};

/// Longest horizon accepted from a file.
pub const MAX_FILE_HORIZON: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelFile {
    Factored(FactoredFile),
    Joint(JointFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalFile {
    pub num_states: usize,
    pub initial: usize,
    pub num_actions: usize,
    /// `[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    pub costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nop: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nop_states: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactoredFile {
    pub horizon: usize,
    pub local1: LocalFile,
    pub local2: LocalFile,
    pub goals: Vec<(usize, usize)>,
    pub joint_reward: Vec<f64>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub num_obs: [usize; 2],
    /// `[s][a1][a2][s'][o1][o2]`.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub sizes: [usize; 2],
    /// Components of each joint state.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub num_states: usize,
    pub initial: usize,
    pub num_actions: [usize; 2],
    pub horizon: usize,
    /// `[s][a1][a2][s']`.
    pub transition: Vec<f64>,
    /// `[s][a1][a2][s']`.
    pub reward: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_reward: Option<Vec<f64>>,
    /// Per agent, `[s][a]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<[Option<Vec<bool>>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitFile>,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
}

fn check_horizon(h: usize) -> Result<()> {
    if h > MAX_FILE_HORIZON {
        return Err(Error::Parse(format!("horizon {h} exceeds {MAX_FILE_HORIZON}")));
    }
    Ok(())
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse(format!("table dimensions {dims:?} overflow")))
}

fn expect_len(name: &str, actual: usize, dims: &[usize]) -> Result<()> {
    let expected = product(dims)?;
    if actual != expected {
        return Err(Error::Parse(format!("{name} has {actual} entries, expected {expected}")));
    }
    Ok(())
}

impl LocalFile {
    fn from_model(l: &LocalModel) -> Self {
        let (n, na) = (l.num_states(), l.num_actions());
        LocalFile {
            num_states: n,
            initial: l.initial(),
            num_actions: na,
            transition: (0..n).map(|s| (0..na).map(|a| l.row(s, a).to_vec()).collect()).collect(),
            costs: l.costs().to_vec(),
            nop: l.nop(),
            nop_states: l.nop_states(),
        }
    }

    fn into_model(self) -> Result<LocalModel> {
        let (n, na) = (self.num_states, self.num_actions);
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != n)) {
            return Err(Error::Parse(format!("local transition must be shaped [{n}][{na}][{n}]")));
        }
        let flat = self.transition.into_iter().flatten().flatten().collect();
        LocalModel::new(n, self.initial, na, flat, self.costs, self.nop, &self.nop_states)
    }
}

impl ModelFile {
    pub fn from_model(m: &Model) -> Self {
        match m {
            Model::Factored(f) => ModelFile::Factored(FactoredFile {
                horizon: f.horizon(),
                local1: LocalFile::from_model(f.local(Agent::One)),
                local2: LocalFile::from_model(f.local(Agent::Two)),
                goals: f.goals().to_vec(),
                joint_reward: f.joint_reward().to_vec(),
                metadata: f.metadata().clone(),
            }),
            Model::Joint(j) => {
                let all_enabled = |a: Agent| j.enable_mask(a).iter().all(|&e| e);
                ModelFile::Joint(JointFile {
                    num_states: j.num_states(),
                    initial: j.initial(),
                    num_actions: [j.num_actions(Agent::One), j.num_actions(Agent::Two)],
                    horizon: j.horizon(),
                    transition: j.transition_table().to_vec(),
                    reward: j.reward_table().to_vec(),
                    terminal_reward: j.terminal_reward().iter().any(|&r| r != 0.0).then(|| j.terminal_reward().to_vec()),
                    enabled: (!all_enabled(Agent::One) || !all_enabled(Agent::Two))
                        .then(|| [Some(j.enable_mask(Agent::One).to_vec()), Some(j.enable_mask(Agent::Two).to_vec())]),
                    observation: j.observation_table().map(|t| ObservationFile {
                        num_obs: [j.num_obs(Agent::One), j.num_obs(Agent::Two)],
                        table: t.to_vec(),
                    }),
                    split: j.split().map(|s| {
                        let (n1, n2) = s.sizes();
                        SplitFile {
                            sizes: [n1, n2],
                            pairs: (0..s.len()).map(|k| s.pair(k)).collect(),
                        }
                    }),
                    metadata: j.metadata().clone(),
                })
            }
        }
    }

    pub fn into_model(self) -> Result<Model> {
        match self {
            ModelFile::Factored(f) => {
                check_horizon(f.horizon)?;
                let l1 = f.local1.into_model()?;
                let l2 = f.local2.into_model()?;
                Ok(Model::Factored(
                    FactoredDecMDP::new(l1, l2, f.goals, f.joint_reward, f.horizon)?.with_metadata(f.metadata),
                ))
            }
            ModelFile::Joint(j) => {
                check_horizon(j.horizon)?;
                let [a1, a2] = j.num_actions;
                let n = j.num_states;
                expect_len("transition", j.transition.len(), &[n, a1, a2, n])?;
                expect_len("reward", j.reward.len(), &[n, a1, a2, n])?;
                let enabled = j.enabled.unwrap_or([None, None]);
                for (mask, na) in enabled.iter().zip([a1, a2]) {
                    if let Some(mask) = mask {
                        expect_len("enabled mask", mask.len(), &[n, na])?;
                    }
                }
                if let Some(o) = &j.observation {
                    expect_len("observation", o.table.len(), &[n, a1, a2, n, o.num_obs[0], o.num_obs[1]])?;
                }
                let split = match j.split {
                    Some(s) => {
                        product(&s.sizes)?;
                        Some(StateSplit::from_pairs(s.sizes[0], s.sizes[1], s.pairs)?)
                    }
                    None => None,
                };
                Ok(Model::Joint(JointDecMDP::new(
                    n,
                    j.initial,
                    j.num_actions,
                    j.horizon,
                    j.transition,
                    j.reward,
                    JointExtras {
                        terminal_reward: j.terminal_reward,
                        enabled,
                        observation: j.observation.map(|o| (o.num_obs, o.table)),
                        split,
                        metadata: j.metadata,
                    },
                )?))
            }
        }
    }
}

/// Parses a model file. Structural errors are reported; semantic validity
/// (stochastic rows, NOP placement) is left to `validate_model`.
pub fn parse_model(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_model()
}

pub fn model_to_json(m: &Model) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(m)).expect("model files serialize")
}

pub fn read_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text)
}

/// Parses a list of `{s, t, a}` entries into a policy of the given shape.
pub fn parse_policy(text: &str, num_states: usize, horizon: usize, num_actions: usize) -> Result<LocalPolicy> {
    let entries: Vec<PolicyEntry> = serde_json::from_str(text)?;
    LocalPolicy::from_entries(num_states, horizon, num_actions, &entries)
}

pub fn policy_to_json(p: &LocalPolicy) -> String {
    serde_json::to_string_pretty(&p.entries()).expect("policy entries serialize")
}

/// Both agents' policies, as written by the solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPairFile {
    pub agent1: Vec<PolicyEntry>,
    pub agent2: Vec<PolicyEntry>,
}

pub fn parse_policy_pair(text: &str, f: &FactoredDecMDP) -> Result<[LocalPolicy; 2]> {
    let file: PolicyPairFile = serde_json::from_str(text)?;
    let build = |agent: Agent, entries: &[PolicyEntry]| {
        let l = f.local(agent);
        LocalPolicy::from_entries(l.num_states(), f.horizon(), l.num_actions(), entries)
    };
    Ok([build(Agent::One, &file.agent1)?, build(Agent::Two, &file.agent2)?])
}

pub fn policy_pair_to_json(policies: [&LocalPolicy; 2]) -> String {
    serde_json::to_string_pretty(&PolicyPairFile {
        agent1: policies[0].entries(),
        agent2: policies[1].entries(),
    })
    .expect("policy entries serialize")
}

/// One communication-policy entry; `sync` is the row-major joint index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommEntry {
    pub sync: usize,
    pub sync_time: usize,
    pub s: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub send: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommPolicyFile {
    pub agent1: Vec<CommEntry>,
    pub agent2: Vec<CommEntry>,
}

pub fn parse_comm_policy(text: &str, f: &FactoredDecMDP) -> Result<CommPolicy> {
    let file: CommPolicyFile = serde_json::from_str(text)?;
    let mut p = CommPolicy::undefined(f);
    for (agent, entries) in [(Agent::One, &file.agent1), (Agent::Two, &file.agent2)] {
        let policy = &mut p.agents[agent.index()];
        let na = f.local(agent).num_actions();
        for e in entries {
            let sync = SyncState {
                state: e.sync,
                time: e.sync_time,
            };
            if let Some(a) = e.action {
                if a >= na {
                    return Err(Error::Parse(format!("action {a} out of range for agent {agent}")));
                }
                if policy.action(sync, e.s, e.t).is_some_and(|prev| prev != a) {
                    return Err(Error::Parse(format!("conflicting actions for agent {agent} at {e:?}")));
                }
                policy.set_action(sync, e.s, e.t, a).map_err(|err| Error::Parse(err.to_string()))?;
            }
            if let Some(send) = e.send {
                if policy.sends(sync, e.s, e.t).is_some_and(|prev| prev != send) {
                    return Err(Error::Parse(format!("conflicting communication for agent {agent} at {e:?}")));
                }
                policy.set_send(sync, e.s, e.t, send).map_err(|err| Error::Parse(err.to_string()))?;
            }
        }
    }
    Ok(p)
}

pub fn comm_policy_to_json(p: &CommPolicy) -> String {
    let convert = |i: usize| {
        p.agents[i]
            .entries()
            .into_iter()
            .map(|(sync, s, t, action, send)| CommEntry {
                sync: sync.state,
                sync_time: sync.time,
                s,
                t,
                action,
                send,
            })
            .collect()
    };
    serde_json::to_string_pretty(&CommPolicyFile {
        agent1: convert(0),
        agent2: convert(1),
    })
    .expect("comm entries serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{search_comm_optimal, CommSpec};
    use crate::model::tests::toggle_model;
    use crate::model::{compose_joint, ObservationMode};
    use crate::oracle::EnumerationOptions;
    use crate::scenarios::{gen_flashlight_variant, MeetingSpec};

    #[test]
    fn factored_round_trip() {
        let m = Model::Factored(toggle_model(0.6, 3));
        assert_eq!(parse_model(&model_to_json(&m)).unwrap(), m);
    }

    #[test]
    fn joint_round_trip_with_observations_and_split() {
        let j = compose_joint(&toggle_model(0.6, 2), ObservationMode::LocalState, 100)
            .unwrap()
            .with_explicit_observations()
            .unwrap();
        let m = Model::Joint(j);
        assert_eq!(parse_model(&model_to_json(&m)).unwrap(), m);
    }

    #[test]
    fn joint_round_trip_of_a_scenario_variant() {
        let spec = MeetingSpec {
            width: 2,
            height: 1,
            p_success: 0.8,
            meeting_sites: vec![0],
            start1: 0,
            start2: 1,
            step_cost: -1.0,
            joint_reward: vec![5.0],
            horizon: 2,
        };
        let m = Model::Joint(gen_flashlight_variant(&spec, 0.1, false).unwrap());
        assert_eq!(parse_model(&model_to_json(&m)).unwrap(), m);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        for text in [
            "",
            "{}",
            r#"{"type":"joint"}"#,
            r#"{"type":"factored","horizon":1,"local1":{"num_states":1,"initial":0,"num_actions":1,"transition":[[[1.0]]],"costs":[0.0]},"local2":{"num_states":1,"initial":0,"num_actions":1,"transition":[[[1.0, 0.0]]],"costs":[0.0]},"goals":[],"joint_reward":[]}"#,
            r#"{"type":"joint","num_states":18446744073709551615,"initial":0,"num_actions":[2,2],"horizon":1,"transition":[],"reward":[]}"#,
            r#"{"type":"factored","horizon":99999999,"local1":{"num_states":1,"initial":0,"num_actions":1,"transition":[[[1.0]]],"costs":[0.0]},"local2":{"num_states":1,"initial":0,"num_actions":1,"transition":[[[1.0]]],"costs":[0.0]},"goals":[],"joint_reward":[]}"#,
        ] {
            assert!(parse_model(text).is_err(), "{text}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let m = Model::Factored(toggle_model(0.6, 3));
        let text = model_to_json(&m).replacen("\"horizon\"", "\"extra\": 1, \"horizon\"", 1);
        assert!(parse_model(&text).is_err());
    }

    #[test]
    fn policy_files_round_trip_and_reject_conflicts() {
        let p = LocalPolicy::from_fn(2, 3, |s, t| Some((s + t) % 2));
        assert_eq!(parse_policy(&policy_to_json(&p), 2, 3, 2).unwrap(), p);
        assert!(parse_policy(r#"[{"s":0,"t":0,"a":0},{"s":0,"t":0,"a":1}]"#, 2, 3, 2).is_err());
        assert!(parse_policy(r#"[{"s":5,"t":0,"a":0}]"#, 2, 3, 2).is_err());
        let f = toggle_model(0.6, 3);
        let pair = parse_policy_pair(&policy_pair_to_json([&p, &p]), &f).unwrap();
        assert_eq!(pair, [p.clone(), p]);
    }

    #[test]
    fn comm_policy_round_trip() {
        let f = toggle_model(0.6, 3);
        let r = search_comm_optimal(&f, &CommSpec::new(-0.5).unwrap(), EnumerationOptions::default()).unwrap();
        let back = parse_comm_policy(&comm_policy_to_json(&r.policy), &f).unwrap();
        assert_eq!(back, r.policy);
        assert!(parse_comm_policy(r#"{"agent1":[{"sync":99,"sync_time":0,"s":0,"t":0,"action":0}],"agent2":[]}"#, &f).is_err());
    }
}
