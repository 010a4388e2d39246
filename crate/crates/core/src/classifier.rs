//! Membership tests for the taxonomy classes: independent transitions and
//! observations, the observability notions, goal orientation, uncontrollable
//! common features and distinctive goals.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::goals;
use crate::model::{compose_joint, Agent, FactoredDecMDP, JointDecMDP, ObservationMode, StateSplit, ViolationKind};
use crate::TOL_P;

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    pub max_residual: f64,
    /// Indices locating a counterexample; the layout is property specific
    /// and described by `note`.
    pub witness: Option<Vec<usize>>,
    pub note: Option<String>,
}

impl Verdict {
    fn pass(residual: f64) -> Self {
        Verdict {
            holds: true,
            max_residual: residual,
            witness: None,
            note: None,
        }
    }

    fn from_residual(residual: f64, witness: Vec<usize>, layout: &str) -> Self {
        if residual <= TOL_P {
            Verdict::pass(residual)
        } else {
            Verdict {
                holds: false,
                max_residual: residual,
                witness: Some(witness),
                note: Some(layout.to_string()),
            }
        }
    }

    fn fail(witness: Vec<usize>, note: String) -> Self {
        Verdict {
            holds: false,
            max_residual: 1.0,
            witness: Some(witness),
            note: Some(note),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Tracks the largest residual and where it occurred.
struct MaxResidual {
    value: f64,
    witness: Vec<usize>,
}

impl MaxResidual {
    fn new() -> Self {
        MaxResidual {
            value: 0.0,
            witness: Vec::new(),
        }
    }

    #[inline]
    fn update(&mut self, residual: f64, witness: impl FnOnce() -> Vec<usize>) {
        if residual > self.value || residual.is_nan() {
            self.value = if residual.is_nan() { f64::INFINITY } else { residual };
            self.witness = witness();
        }
    }
}

fn check_split(m: &JointDecMDP, split: &StateSplit) -> Result<()> {
    if split.len() != m.num_states() {
        return Err(Error::InvalidSplit(format!(
            "split covers {} states, model has {}",
            split.len(),
            m.num_states()
        )));
    }
    Ok(())
}

/// Candidate local transition tables obtained by marginalizing the joint
/// table in the first context of the other agent (`s_j = 0`, `a_j = 0`).
pub fn candidate_marginals(m: &JointDecMDP, split: &StateSplit) -> Result<[Vec<f64>; 2]> {
    check_split(m, split)?;
    let (n1, n2) = split.sizes();
    let na1 = m.num_actions(Agent::One);
    let na2 = m.num_actions(Agent::Two);
    let mut p1 = vec![0.0; n1 * na1 * n1];
    let mut p2 = vec![0.0; n2 * na2 * n2];
    for s1 in 0..n1 {
        let s = split.joint(s1, 0);
        for a1 in 0..na1 {
            for (next, &p) in m.row(s, a1, 0).iter().enumerate() {
                p1[(s1 * na1 + a1) * n1 + split.component(next, Agent::One)] += p;
            }
        }
    }
    for s2 in 0..n2 {
        let s = split.joint(0, s2);
        for a2 in 0..na2 {
            for (next, &p) in m.row(s, 0, a2).iter().enumerate() {
                p2[(s2 * na2 + a2) * n2 + split.component(next, Agent::Two)] += p;
            }
        }
    }
    Ok([p1, p2])
}

/// `P = P1 × P2` within `TOL_P`. Witness layout `[s, a1, a2, s']`.
pub fn check_independent_transitions(m: &JointDecMDP, split: &StateSplit) -> Result<Verdict> {
    let [p1, p2] = candidate_marginals(m, split)?;
    let (n1, n2) = split.sizes();
    let na1 = m.num_actions(Agent::One);
    let na2 = m.num_actions(Agent::Two);
    let mut worst = MaxResidual::new();
    for s in 0..m.num_states() {
        let (s1, s2) = split.pair(s);
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                for (next, &p) in m.row(s, a1, a2).iter().enumerate() {
                    let (t1, t2) = split.pair(next);
                    let q = p1[(s1 * na1 + a1) * n1 + t1] * p2[(s2 * na2 + a2) * n2 + t2];
                    worst.update((p - q).abs(), || vec![s, a1, a2, next]);
                }
            }
        }
    }
    Ok(Verdict::from_residual(worst.value, worst.witness, "[s, a1, a2, s']"))
}

/// `O(o1, o2 | s, a1, a2, s') = O1(o1 | s1, a1, s1') · O2(o2 | s2, a2, s2')`
/// on every tuple with `P > TOL_P`. Witness layout `[s, a1, a2, s', o1, o2]`.
pub fn check_independent_observations(m: &JointDecMDP, split: &StateSplit) -> Result<Verdict> {
    check_split(m, split)?;
    if !m.has_observation_table() {
        return Err(Error::ObservationTableRequired);
    }
    let (n1, n2) = split.sizes();
    let na1 = m.num_actions(Agent::One);
    let na2 = m.num_actions(Agent::Two);
    let no1 = m.num_obs(Agent::One);
    let no2 = m.num_obs(Agent::Two);
    let key1 = |s1: usize, a1: usize, t1: usize| (s1 * na1 + a1) * n1 + t1;
    let key2 = |s2: usize, a2: usize, t2: usize| (s2 * na2 + a2) * n2 + t2;
    let mut o1: Vec<Option<Vec<f64>>> = vec![None; n1 * na1 * n1];
    let mut o2: Vec<Option<Vec<f64>>> = vec![None; n2 * na2 * n2];
    let contexts = || {
        (0..m.num_states()).flat_map(move |s| {
            (0..na1).flat_map(move |a1| {
                (0..na2).flat_map(move |a2| (0..m.num_states()).map(move |next| (s, a1, a2, next)))
            })
        })
    };
    for (s, a1, a2, next) in contexts() {
        if m.p(s, a1, a2, next) <= TOL_P {
            continue;
        }
        let (s1, s2) = split.pair(s);
        let (t1, t2) = split.pair(next);
        let slot1 = &mut o1[key1(s1, a1, t1)];
        if slot1.is_none() {
            *slot1 = Some(
                (0..no1)
                    .map(|x| (0..no2).map(|y| m.obs(s, a1, a2, next, x, y)).sum())
                    .collect(),
            );
        }
        let slot2 = &mut o2[key2(s2, a2, t2)];
        if slot2.is_none() {
            *slot2 = Some(
                (0..no2)
                    .map(|y| (0..no1).map(|x| m.obs(s, a1, a2, next, x, y)).sum())
                    .collect(),
            );
        }
    }
    let mut worst = MaxResidual::new();
    for (s, a1, a2, next) in contexts() {
        if m.p(s, a1, a2, next) <= TOL_P {
            continue;
        }
        let (s1, s2) = split.pair(s);
        let (t1, t2) = split.pair(next);
        let c1 = o1[key1(s1, a1, t1)].as_ref().expect("filled above");
        let c2 = o2[key2(s2, a2, t2)].as_ref().expect("filled above");
        for x in 0..no1 {
            for y in 0..no2 {
                let r = (m.obs(s, a1, a2, next, x, y) - c1[x] * c2[y]).abs();
                worst.update(r, || vec![s, a1, a2, next, x, y]);
            }
        }
    }
    Ok(Verdict::from_residual(worst.value, worst.witness, "[s, a1, a2, s', o1, o2]"))
}

/// Checks that a map `key(o1, o2) -> target(s')` exists on the support,
/// reporting the first pair of support tuples that disagree.
fn support_function(
    m: &JointDecMDP,
    num_keys: usize,
    key: impl Fn(usize, usize) -> usize,
    target: impl Fn(usize) -> usize,
    layout: &str,
) -> Verdict {
    let mut seen: Vec<Option<(usize, [usize; 6])>> = vec![None; num_keys];
    let mut conflict: Option<Vec<usize>> = None;
    m.for_each_support(|s, a1, a2, next, x, y| {
        if conflict.is_some() {
            return;
        }
        let k = key(x, y);
        let v = target(next);
        match seen[k] {
            None => seen[k] = Some((v, [s, a1, a2, next, x, y])),
            Some((prev, tuple)) if prev != v => {
                let mut w = tuple.to_vec();
                w.extend_from_slice(&[s, a1, a2, next, x, y]);
                conflict = Some(w);
            }
            _ => {}
        }
    });
    match conflict {
        None => Verdict::pass(0.0),
        Some(w) => Verdict::fail(w, format!("two support tuples {layout} share an observation but disagree on the state")),
    }
}

const SUPPORT_LAYOUT: &str = "[s, a1, a2, s', o1, o2] x 2";

/// Agent `agent` alone determines the global state: `F_i(o_i) = s'`.
pub fn check_full_observability_agent(m: &JointDecMDP, agent: Agent) -> Verdict {
    let n = m.num_obs(agent);
    match agent {
        Agent::One => support_function(m, n, |x, _| x, |next| next, SUPPORT_LAYOUT),
        Agent::Two => support_function(m, n, |_, y| y, |next| next, SUPPORT_LAYOUT),
    }
}

/// Both agents individually determine the global state.
pub fn check_full_observability(m: &JointDecMDP) -> Verdict {
    let v1 = check_full_observability_agent(m, Agent::One);
    if !v1.holds {
        return v1.with_note(format!("agent 1: {}", SUPPORT_LAYOUT));
    }
    let v2 = check_full_observability_agent(m, Agent::Two);
    if !v2.holds {
        return v2.with_note(format!("agent 2: {}", SUPPORT_LAYOUT));
    }
    Verdict::pass(0.0)
}

/// The joint observation determines the global state: `J(o1, o2) = s'`.
pub fn check_joint_full_observability(m: &JointDecMDP) -> Verdict {
    let no2 = m.num_obs(Agent::Two);
    support_function(m, m.num_obs(Agent::One) * no2, |x, y| x * no2 + y, |next| next, SUPPORT_LAYOUT)
}

/// Each agent's observation determines its own component:
/// `L_i(o_i) = s_i'`.
pub fn check_local_full_observability(m: &JointDecMDP, split: &StateSplit) -> Result<Verdict> {
    check_split(m, split)?;
    let v1 = support_function(
        m,
        m.num_obs(Agent::One),
        |x, _| x,
        |next| split.component(next, Agent::One),
        SUPPORT_LAYOUT,
    );
    if !v1.holds {
        return Ok(v1.with_note(format!("agent 1: {SUPPORT_LAYOUT}")));
    }
    let v2 = support_function(
        m,
        m.num_obs(Agent::Two),
        |_, y| y,
        |next| split.component(next, Agent::Two),
        SUPPORT_LAYOUT,
    );
    if !v2.holds {
        return Ok(v2.with_note(format!("agent 2: {SUPPORT_LAYOUT}")));
    }
    Ok(Verdict::pass(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalOrientedVerdict {
    pub verdict: Verdict,
    pub uniform_cost: bool,
}

/// Goal orientation: nonempty reachable goal set, negative non-NOP costs,
/// zero-cost NOP self-loops at goal components, finite joint rewards.
/// `uniform_cost` is reported separately. Witness layout `[agent, index]`.
pub fn check_goal_oriented(f: &FactoredDecMDP) -> GoalOrientedVerdict {
    let report = f.validate();
    let relevant = report.violations.iter().find(|v| {
        matches!(
            v.kind,
            ViolationKind::CostSign
                | ViolationKind::NopCost
                | ViolationKind::NopDynamics
                | ViolationKind::NopPlacement
                | ViolationKind::EmptyGoals
                | ViolationKind::UnreachableGoals
                | ViolationKind::NonFiniteReward
                | ViolationKind::RowSum
                | ViolationKind::ProbabilityRange
        )
    });
    let verdict = match relevant {
        None => Verdict::pass(0.0),
        Some(v) => Verdict {
            holds: false,
            max_residual: if v.residual.is_finite() && v.residual != 0.0 { v.residual.abs() } else { 1.0 },
            witness: Some(Vec::new()),
            note: Some(format!("{:?}: {}", v.kind, v.location)),
        },
    };
    GoalOrientedVerdict {
        verdict,
        uniform_cost: uniform_cost(f),
    }
}

/// All non-NOP actions of both agents share one cost.
pub fn uniform_cost(f: &FactoredDecMDP) -> bool {
    let mut first: Option<f64> = None;
    for agent in Agent::BOTH {
        let local = f.local(agent);
        for a in 0..local.num_actions() {
            if Some(a) == local.nop() {
                continue;
            }
            match first {
                None => first = Some(local.cost(a)),
                Some(c) if (c - local.cost(a)).abs() > TOL_P => return false,
                _ => {}
            }
        }
    }
    true
}

/// The feature `projection[s]` (values `0..num_features`) evolves
/// independently of both agents' actions. Witness layout `[s, a1, a2, k']`.
pub fn check_common_uncontrollable_features(
    m: &JointDecMDP,
    projection: &[usize],
    num_features: usize,
) -> Result<Verdict> {
    if projection.len() != m.num_states() {
        return Err(Error::InvalidArgument(format!(
            "feature projection covers {} states, model has {}",
            projection.len(),
            m.num_states()
        )));
    }
    if let Some(&bad) = projection.iter().find(|&&k| k >= num_features) {
        return Err(Error::InvalidArgument(format!("feature value {bad} out of range")));
    }
    let marginal = |s: usize, a1: usize, a2: usize| {
        let mut out = vec![0.0; num_features];
        for (next, &p) in m.row(s, a1, a2).iter().enumerate() {
            out[projection[next]] += p;
        }
        out
    };
    let mut worst = MaxResidual::new();
    for s in 0..m.num_states() {
        let base = marginal(s, 0, 0);
        for a1 in 0..m.num_actions(Agent::One) {
            for a2 in 0..m.num_actions(Agent::Two) {
                let here = marginal(s, a1, a2);
                for k in 0..num_features {
                    worst.update((here[k] - base[k]).abs(), || vec![s, a1, a2, k]);
                }
            }
        }
    }
    Ok(Verdict::from_residual(worst.value, worst.witness, "[s, a1, a2, k']"))
}

/// Goal pairs agree on one component iff they agree on the other.
/// Witness layout `[k, l]` (goal indices).
pub fn check_distinctive_goals(f: &FactoredDecMDP) -> Verdict {
    let goals = f.goals();
    for k in 0..goals.len() {
        for l in k + 1..goals.len() {
            let (a, b) = (goals[k], goals[l]);
            if (a.0 == b.0) != (a.1 == b.1) {
                return Verdict::fail(vec![k, l], "goals [k, l] share exactly one component".into());
            }
        }
    }
    Verdict::pass(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ComplexityClass {
    #[serde(rename = "NEXP")]
    Nexp,
    #[serde(rename = "NP")]
    Np,
    P,
}

impl std::fmt::Display for ComplexityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ComplexityClass::Nexp => "NEXP",
            ComplexityClass::Np => "NP",
            ComplexityClass::P => "P",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub verdicts: BTreeMap<String, Verdict>,
    pub taxonomy_label: String,
    pub complexity: ComplexityClass,
    pub uniform_cost: Option<bool>,
    pub notes: Vec<String>,
}

impl ClassificationReport {
    pub fn holds(&self, property: &str) -> bool {
        self.verdicts.get(property).is_some_and(|v| v.holds)
    }
}

pub const IT: &str = "independent_transitions";
pub const IO: &str = "independent_observations";
pub const FULL: &str = "full_observability";
pub const JOINT_FULL: &str = "joint_full_observability";
pub const LOCAL_FULL: &str = "local_full_observability";
pub const GOAL_ORIENTED: &str = "goal_oriented";
pub const DISTINCTIVE: &str = "distinctive_goals";
pub const NBCLG: &str = "nbclg";

fn joint_verdicts(m: &JointDecMDP, notes: &mut Vec<String>) -> Result<BTreeMap<String, Verdict>> {
    let mut verdicts = BTreeMap::new();
    verdicts.insert(FULL.to_string(), check_full_observability(m));
    verdicts.insert(JOINT_FULL.to_string(), check_joint_full_observability(m));
    match m.split() {
        Some(split) => {
            verdicts.insert(IT.to_string(), check_independent_transitions(m, split)?);
            verdicts.insert(LOCAL_FULL.to_string(), check_local_full_observability(m, split)?);
            if m.has_observation_table() {
                verdicts.insert(IO.to_string(), check_independent_observations(m, split)?);
            } else {
                verdicts.insert(
                    IO.to_string(),
                    Verdict::pass(0.0).with_note("no observation table: o_i = s_i' is a product"),
                );
            }
        }
        None => notes.push("no state split given: IT, IO and local observability not checked".into()),
    }
    Ok(verdicts)
}

fn label(verdicts: &BTreeMap<String, Verdict>, goal: Option<(bool, bool, usize, Option<bool>)>) -> (String, ComplexityClass) {
    let holds = |k: &str| verdicts.get(k).is_some_and(|v| v.holds);
    if holds(FULL) {
        return ("MMDP (each agent fully observes the state)".into(), ComplexityClass::P);
    }
    let it_io = holds(IT) && holds(IO);
    if !holds(JOINT_FULL) {
        if it_io {
            return (
                "Dec-POMDP with IT and IO (not jointly fully observable; complexity below NEXP unknown)".into(),
                ComplexityClass::Nexp,
            );
        }
        return ("Dec-POMDP".into(), ComplexityClass::Nexp);
    }
    let goal_oriented = goal.is_some_and(|(go, ..)| go);
    if !it_io {
        if goal_oriented {
            return ("GO-Dec-MDP".into(), ComplexityClass::Nexp);
        }
        return ("Dec-MDP".into(), ComplexityClass::Nexp);
    }
    match goal {
        Some((true, uniform, num_goals, nbclg)) => {
            if !uniform {
                ("GO-Dec-MDP with IT and IO, non-uniform cost".into(), ComplexityClass::Np)
            } else if num_goals == 1 {
                ("GO-Dec-MDP with IT and IO, uniform cost, single goal".into(), ComplexityClass::P)
            } else if nbclg == Some(true) {
                ("GO-Dec-MDP with IT and IO, uniform cost, NBCLG".into(), ComplexityClass::P)
            } else {
                (
                    "GO-Dec-MDP with IT and IO, uniform cost, multiple goals without NBCLG".into(),
                    ComplexityClass::Np,
                )
            }
        }
        _ => ("Dec-MDP with IT and IO".into(), ComplexityClass::Np),
    }
}

/// Runs every check applicable to a joint-form model.
pub fn classify_joint(m: &JointDecMDP) -> Result<ClassificationReport> {
    let mut notes = Vec::new();
    let verdicts = joint_verdicts(m, &mut notes)?;
    let (taxonomy_label, complexity) = label(&verdicts, None);
    Ok(ClassificationReport {
        verdicts,
        taxonomy_label,
        complexity,
        uniform_cost: None,
        notes,
    })
}

/// Runs every check on a factored model: the observability and
/// independence checks on its product composition (local-state
/// observations), then goal orientation, distinctive goals and, for
/// multi-goal uniform-cost instances, NBCLG.
pub fn classify_factored(f: &FactoredDecMDP, max_states: usize) -> Result<ClassificationReport> {
    let joint = compose_joint(f, ObservationMode::LocalState, max_states)?;
    let mut notes = Vec::new();
    let mut verdicts = joint_verdicts(&joint, &mut notes)?;
    let go = check_goal_oriented(f);
    let go_holds = go.verdict.holds;
    verdicts.insert(GOAL_ORIENTED.to_string(), go.verdict);
    verdicts.insert(DISTINCTIVE.to_string(), check_distinctive_goals(f));
    let mut nbclg = None;
    if go_holds && go.uniform_cost && f.goals().len() > 1 {
        let report = goals::check_nbclg(f, None)?;
        let v = if report.holds {
            Verdict::pass(0.0)
        } else {
            let w = &report.violations[0];
            Verdict {
                holds: false,
                max_residual: w.rhs - w.lhs,
                witness: Some(vec![w.agent.index() + 1, w.state, w.time, w.competing_goal]),
                note: Some("[agent, s_i, t, competing goal j]".into()),
            }
        };
        nbclg = Some(v.holds);
        verdicts.insert(NBCLG.to_string(), v);
    }
    let (taxonomy_label, complexity) =
        label(&verdicts, Some((go_holds, go.uniform_cost, f.goals().len(), nbclg)));
    Ok(ClassificationReport {
        verdicts,
        taxonomy_label,
        complexity,
        uniform_cost: Some(go.uniform_cost),
        notes,
    })
}
