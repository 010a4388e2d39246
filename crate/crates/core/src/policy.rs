//! Time-indexed deterministic policies `(state, t) -> action`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A deterministic, non-stationary policy over `num_states` states and
/// decision times `0..horizon`. Entries may be left undefined; evaluators
/// only require them on pairs the policy actually reaches.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    num_states: usize,
    horizon: usize,
    table: Vec<Option<usize>>,
}

/// The per-agent policy `δ_i : S_i × T → A_i`.
pub type LocalPolicy = Policy;

/// One line of a policy file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub s: usize,
    pub t: usize,
    pub a: usize,
}

impl Policy {
    pub fn undefined(num_states: usize, horizon: usize) -> Self {
        Policy {
            num_states,
            horizon,
            table: vec![None; num_states * horizon],
        }
    }

    pub fn constant(num_states: usize, horizon: usize, action: usize) -> Self {
        Policy {
            num_states,
            horizon,
            table: vec![Some(action); num_states * horizon],
        }
    }

    pub fn from_fn(
        num_states: usize,
        horizon: usize,
        mut f: impl FnMut(usize, usize) -> Option<usize>,
    ) -> Self {
        let mut p = Policy::undefined(num_states, horizon);
        for t in 0..horizon {
            for s in 0..num_states {
                p.table[t * num_states + s] = f(s, t);
            }
        }
        p
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, state: usize, time: usize) -> Option<usize> {
        if state >= self.num_states || time >= self.horizon {
            return None;
        }
        self.table[time * self.num_states + state]
    }

    #[inline]
    pub fn set(&mut self, state: usize, time: usize, action: usize) {
        self.table[time * self.num_states + state] = Some(action);
    }

    pub fn clear(&mut self, state: usize, time: usize) {
        self.table[time * self.num_states + state] = None;
    }

    /// Action at `(state, time)`, or an error naming the pair.
    pub fn require(&self, state: usize, time: usize) -> Result<usize> {
        self.get(state, time)
            .ok_or(Error::PolicyUndefined { state, time })
    }

    pub fn is_total(&self) -> bool {
        self.table.iter().all(Option::is_some)
    }

    pub fn entries(&self) -> Vec<PolicyEntry> {
        let mut out = Vec::new();
        for t in 0..self.horizon {
            for s in 0..self.num_states {
                if let Some(a) = self.table[t * self.num_states + s] {
                    out.push(PolicyEntry { s, t, a });
                }
            }
        }
        out
    }

    /// Builds a policy from file entries. Duplicate `(s, t)` entries with
    /// different actions and out-of-range indices are rejected.
    pub fn from_entries(
        num_states: usize,
        horizon: usize,
        num_actions: usize,
        entries: &[PolicyEntry],
    ) -> Result<Self> {
        let mut p = Policy::undefined(num_states, horizon);
        for e in entries {
            if e.s >= num_states || e.t >= horizon || e.a >= num_actions {
                return Err(Error::Parse(format!(
                    "policy entry (s={}, t={}, a={}) out of range for {} states, horizon {}, {} actions",
                    e.s, e.t, e.a, num_states, horizon, num_actions
                )));
            }
            match p.get(e.s, e.t) {
                Some(prev) if prev != e.a => {
                    return Err(Error::Parse(format!(
                        "conflicting policy entries at (s={}, t={}): {} and {}",
                        e.s, e.t, prev, e.a
                    )))
                }
                _ => p.set(e.s, e.t, e.a),
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_preserves_partial_tables() {
        let mut p = Policy::undefined(3, 2);
        p.set(0, 0, 1);
        p.set(2, 1, 0);
        let back = Policy::from_entries(3, 2, 2, &p.entries()).unwrap();
        assert_eq!(p, back);
        assert!(!back.is_total());
    }

    #[test]
    fn conflicting_entries_are_rejected() {
        let entries = [PolicyEntry { s: 0, t: 0, a: 0 }, PolicyEntry { s: 0, t: 0, a: 1 }];
        assert!(Policy::from_entries(1, 1, 2, &entries).is_err());
    }

    #[test]
    fn require_names_the_pair() {
        let p = Policy::undefined(2, 2);
        let err = p.require(1, 0).unwrap_err();
        assert!(err.to_string().contains("s=1, t=0"));
    }
}
