//! Reduction from direct to indirect communication by adding a mode bit.
//!
//! States become `(s, b)` stored as `2 * s + b`. In control mode (`b = 0`)
//! agents act as in the original model and move to `(s', 1)`. In comm mode
//! (`b = 1`) every action is a message: agent `i`'s actions
//! `A_i + v` send observation `v`, and `A_i + |Ω_i|` is the null message.
//! The step returns to `(s, 0)` with probability 1 and each agent observes the
//! partner's message.

use super::CommSpec;
use crate::error::{Error, Result};
use crate::model::{Agent, JointDecMDP, JointExtras, StateSplit};

const MAX_OBSERVATION_ENTRIES: usize = 50_000_000;

pub const MODE_NOTE_KEY: &str = "comm_mode_semantics";

/// Structural construction only; the mode steps consume horizon stages (the
/// horizon doubles) and an exchange stage pays the message cost once.
pub fn transform_direct_to_indirect(m: &JointDecMDP, spec: &CommSpec) -> Result<JointDecMDP> {
    let split = m
        .split()
        .ok_or_else(|| Error::AlphabetMismatch("the model needs a state split to define local alphabets".into()))?;
    let (n1, n2) = split.sizes();
    let obs = [m.num_obs(Agent::One), m.num_obs(Agent::Two)];
    if obs != [n1, n2] {
        return Err(Error::AlphabetMismatch(format!(
            "observation alphabets {obs:?} differ from local state sets [{n1}, {n2}]"
        )));
    }
    let n = m.num_states();
    let na = [m.num_actions(Agent::One), m.num_actions(Agent::Two)];
    let na_out = [na[0] + obs[0] + 1, na[1] + obs[1] + 1];
    let null = [na[0] + obs[0], na[1] + obs[1]];
    // Agent i observes its own observation, the partner's message or null.
    let obs_out = [obs[0] + obs[1] + 1, obs[1] + obs[0] + 1];
    let ns = 2 * n;
    let rows = ns * na_out[0] * na_out[1];
    let table_len = rows
        .checked_mul(ns * obs_out[0] * obs_out[1])
        .filter(|&l| l <= MAX_OBSERVATION_ENTRIES)
        .ok_or_else(|| Error::InvalidArgument("transformed observation table is too large".into()))?;

    let mut transition = vec![0.0; rows * ns];
    let mut reward = vec![0.0; rows * ns];
    let mut observation = vec![0.0; table_len];
    let mut enabled = [vec![false; ns * na_out[0]], vec![false; ns * na_out[1]]];
    let row_index = |s: usize, a1: usize, a2: usize| (s * na_out[0] + a1) * na_out[1] + a2;
    let obs_index = |row: usize, next: usize, o1: usize, o2: usize| ((row * ns + next) * obs_out[0] + o1) * obs_out[1] + o2;

    for s in 0..n {
        let control = 2 * s;
        let comm = 2 * s + 1;
        for agent in Agent::BOTH {
            let i = agent.index();
            for a in 0..na[i] {
                enabled[i][control * na_out[i] + a] = m.is_enabled(agent, s, a);
            }
            for a in na[i]..na_out[i] {
                enabled[i][comm * na_out[i] + a] = true;
            }
        }
        for a1 in 0..na_out[0] {
            for a2 in 0..na_out[1] {
                // Control mode.
                let r = row_index(control, a1, a2);
                if a1 < na[0] && a2 < na[1] {
                    for next in 0..n {
                        let p = m.p(s, a1, a2, next);
                        transition[r * ns + 2 * next + 1] = p;
                        reward[r * ns + 2 * next + 1] = m.r(s, a1, a2, next);
                        for o1 in 0..obs[0] {
                            for o2 in 0..obs[1] {
                                observation[obs_index(r, 2 * next + 1, o1, o2)] = m.obs(s, a1, a2, next, o1, o2);
                            }
                        }
                    }
                } else {
                    self_loop(&mut transition, &mut observation, r, ns, control, obs_out, obs_index);
                }
                // Comm mode.
                let r = row_index(comm, a1, a2);
                if a1 >= na[0] && a2 >= na[1] {
                    transition[r * ns + control] = 1.0;
                    if a1 != null[0] || a2 != null[1] {
                        reward[r * ns + control] = spec.cost();
                    }
                    let heard1 = if a2 == null[1] { obs_out[0] - 1 } else { obs[0] + (a2 - na[1]) };
                    let heard2 = if a1 == null[0] { obs_out[1] - 1 } else { obs[1] + (a1 - na[0]) };
                    observation[obs_index(r, control, heard1, heard2)] = 1.0;
                } else {
                    self_loop(&mut transition, &mut observation, r, ns, comm, obs_out, obs_index);
                }
            }
        }
    }

    let pairs = (0..ns)
        .map(|s| {
            let (s1, s2) = split.pair(s / 2);
            (2 * s1 + s % 2, s2)
        })
        .collect();
    let split_out = StateSplit::from_pairs(2 * n1, n2, pairs)?;
    let terminal = (0..ns).map(|s| m.terminal_reward()[s / 2]).collect();
    let mut metadata = m.metadata().clone();
    metadata.insert(
        MODE_NOTE_KEY.into(),
        "comm-mode steps consume a horizon stage and pay the message cost once per non-null exchange; value preservation is not implied".into(),
    );
    let [e1, e2] = enabled;
    JointDecMDP::new(
        ns,
        2 * m.initial(),
        na_out,
        2 * m.horizon(),
        transition,
        reward,
        JointExtras {
            terminal_reward: Some(terminal),
            enabled: [Some(e1), Some(e2)],
            observation: Some((obs_out, observation)),
            split: Some(split_out),
            metadata,
        },
    )
}

fn self_loop(
    transition: &mut [f64],
    observation: &mut [f64],
    row: usize,
    ns: usize,
    state: usize,
    obs_out: [usize; 2],
    obs_index: impl Fn(usize, usize, usize, usize) -> usize,
) {
    transition[row * ns + state] = 1.0;
    observation[obs_index(row, state, obs_out[0] - 1, obs_out[1] - 1)] = 1.0;
}
