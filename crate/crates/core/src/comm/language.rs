//! Exact optimal values over history-dependent policies under different
//! message languages.
//!
//! Each agent's information is a tree: act nodes choose an action and branch
//! on the next local state; comm nodes (at `t` in `1..T`) choose a message
//! kind together with whether to initiate an exchange, and branch on the
//! content heard from the partner (or on silence). The deterministic tree
//! policies of the agent with the smaller space are enumerated and the other
//! agent best-responds by expectimax over its own tree with an unnormalized
//! belief over the partner's nodes.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use super::CommSpec;
use crate::error::{Error, Result};
use crate::model::{Agent, FactoredDecMDP};

pub const DEFAULT_LANGUAGE_BUDGET: u128 = 2_000_000;
const MAX_TREE_NODES: usize = 200_000;

/// What an agent transmits when an exchange happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    /// The current local state.
    Last,
    /// The local state `k` stages ago (the initial state if `k > t`).
    Stale(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageMenu {
    pub kinds: Vec<MessageKind>,
}

impl MessageMenu {
    pub fn null() -> Self {
        MessageMenu { kinds: Vec::new() }
    }

    pub fn last() -> Self {
        MessageMenu {
            kinds: vec![MessageKind::Last],
        }
    }

    pub fn stale(k: usize) -> Self {
        MessageMenu {
            kinds: vec![MessageKind::Stale(k)],
        }
    }

    /// The last observation together with every staleness `1..=k`.
    pub fn extended(k: usize) -> Self {
        let mut kinds = vec![MessageKind::Last];
        kinds.extend((1..=k).map(MessageKind::Stale));
        MessageMenu { kinds }
    }

    /// `null`, `last`, `stale:K` or `extended:K`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown message menu {s:?}"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (name, arg) {
            ("null", None) => Ok(Self::null()),
            ("last", None) => Ok(Self::last()),
            ("stale", Some(k)) if k > 0 => Ok(Self::stale(k)),
            ("extended", Some(k)) if k > 0 => Ok(Self::extended(k)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for MessageMenu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kinds.as_slice() {
            [] => write!(f, "null"),
            [MessageKind::Last] => write!(f, "last"),
            [MessageKind::Stale(k)] => write!(f, "stale:{k}"),
            kinds => {
                let parts: Vec<String> = kinds
                    .iter()
                    .map(|k| match k {
                        MessageKind::Last => "last".to_string(),
                        MessageKind::Stale(k) => format!("stale:{k}"),
                    })
                    .collect();
                write!(f, "{{{}}}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageResult {
    pub menu: MessageMenu,
    pub value: f64,
    pub enumerated_agent: Agent,
    pub enumerated_policies: u128,
    pub tree_nodes: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Act(usize),
    Message { kind: MessageKind, initiate: bool },
}

#[derive(Debug, Clone)]
struct Node {
    /// Local states `s^0..=s^t`.
    history: Vec<usize>,
    choices: Vec<Choice>,
    /// Per choice, `(branch key, child)`: the next local state after an act
    /// node, the heard event (0 for silence, `1 + v` for content `v`) after
    /// a comm node.
    children: Vec<Vec<(usize, usize)>>,
}

impl Node {
    fn state(&self) -> usize {
        *self.history.last().expect("nonempty history")
    }

    fn child(&self, choice: usize, key: usize) -> usize {
        self.children[choice]
            .iter()
            .find(|&&(k, _)| k == key)
            .map(|&(_, c)| c)
            .expect("branch exists by construction")
    }
}

fn content(kind: MessageKind, history: &[usize]) -> usize {
    let t = history.len() - 1;
    match kind {
        MessageKind::Last => history[t],
        MessageKind::Stale(k) => history[t.saturating_sub(k)],
    }
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn build(f: &FactoredDecMDP, agent: Agent, menu: &MessageMenu) -> Result<Tree> {
        let local = f.local(agent);
        let partner = f.local(agent.other());
        let h = f.horizon();
        let partner_reach = partner.reachable(h);
        let mut tree = Tree { nodes: Vec::new() };
        tree.expand(local, &partner_reach, menu, vec![local.initial()], false, h)?;
        Ok(tree)
    }

    /// Node for history `history`, in the comm phase if `comm` is set.
    fn expand(
        &mut self,
        local: &crate::model::LocalModel,
        partner_reach: &[Vec<bool>],
        menu: &MessageMenu,
        history: Vec<usize>,
        comm: bool,
        h: usize,
    ) -> Result<usize> {
        if self.nodes.len() >= MAX_TREE_NODES {
            return Err(Error::BudgetExceeded {
                count: self.nodes.len() as u128,
                budget: MAX_TREE_NODES as u128,
            });
        }
        let t = history.len() - 1;
        let id = self.nodes.len();
        self.nodes.push(Node {
            history: history.clone(),
            choices: Vec::new(),
            children: Vec::new(),
        });
        if t == h {
            return Ok(id);
        }
        let mut choices = Vec::new();
        let mut children = Vec::new();
        if comm {
            let mut heard: Vec<usize> = Vec::new();
            for &kind in &menu.kinds {
                let at = match kind {
                    MessageKind::Last => t,
                    MessageKind::Stale(k) => t.saturating_sub(k),
                };
                heard.extend((0..partner_reach[at].len()).filter(|&v| partner_reach[at][v]));
            }
            heard.sort_unstable();
            heard.dedup();
            for &kind in &menu.kinds {
                for initiate in [false, true] {
                    let mut branch = Vec::new();
                    if !initiate {
                        branch.push((0, self.expand(local, partner_reach, menu, history.clone(), false, h)?));
                    }
                    for &v in &heard {
                        branch.push((1 + v, self.expand(local, partner_reach, menu, history.clone(), false, h)?));
                    }
                    choices.push(Choice::Message { kind, initiate });
                    children.push(branch);
                }
            }
        } else {
            let s = *history.last().expect("nonempty");
            for a in local.undominated_actions(s) {
                let mut branch = Vec::new();
                for (next, &p) in local.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        let mut hist = history.clone();
                        hist.push(next);
                        let next_comm = !menu.kinds.is_empty() && t + 1 < h;
                        branch.push((next, self.expand(local, partner_reach, menu, hist, next_comm, h)?));
                    }
                }
                choices.push(Choice::Act(a));
                children.push(branch);
            }
        }
        self.nodes[id].choices = choices;
        self.nodes[id].children = children;
        Ok(id)
    }

    /// Number of deterministic policies on the subtree at `id`, memoized in
    /// `counts`, with per-choice products in `per_choice`.
    fn count(&self, id: usize, counts: &mut [u128], per_choice: &mut [Vec<u128>]) -> u128 {
        let node = &self.nodes[id];
        if node.choices.is_empty() {
            counts[id] = 1;
            return 1;
        }
        let mut total = 0u128;
        let mut products = Vec::with_capacity(node.children.len());
        for branch in &node.children {
            let mut prod = 1u128;
            for &(_, c) in branch {
                prod = prod.saturating_mul(self.count(c, counts, per_choice));
            }
            products.push(prod);
            total = total.saturating_add(prod);
        }
        per_choice[id] = products;
        counts[id] = total;
        total
    }

    fn decode(&self, id: usize, index: u128, counts: &[u128], per_choice: &[Vec<u128>], out: &mut [u16]) {
        let node = &self.nodes[id];
        if node.choices.is_empty() {
            return;
        }
        let mut rest = index;
        let mut chosen = 0;
        for (c, &p) in per_choice[id].iter().enumerate() {
            if rest < p {
                chosen = c;
                break;
            }
            rest -= p;
        }
        out[id] = chosen as u16;
        for &(_, child) in node.children[chosen].iter().rev() {
            let radix = counts[child];
            self.decode(child, rest % radix, counts, per_choice, out);
            rest /= radix;
        }
    }
}

struct Game<'a> {
    f: &'a FactoredDecMDP,
    cost: f64,
    t1: &'a Tree,
    t2: &'a Tree,
    rt: Vec<f64>,
    n2: usize,
}

impl Game<'_> {
    /// Agent 2's best-response value at `n2` given the unnormalized mass on
    /// agent 1's nodes.
    fn value(&self, policy1: &[u16], n2: usize, particles: &[(usize, f64)]) -> f64 {
        let node2 = &self.t2.nodes[n2];
        if node2.choices.is_empty() {
            let s2 = node2.state();
            return particles
                .iter()
                .map(|&(n1, w)| w * self.rt[self.t1.nodes[n1].state() * self.n2 + s2])
                .sum();
        }
        let l1 = self.f.local(Agent::One);
        let l2 = self.f.local(Agent::Two);
        let mut best = f64::NEG_INFINITY;
        for (c2, &choice2) in node2.choices.iter().enumerate() {
            let mut v = 0.0;
            let mut groups: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
            for &(n1, w) in particles {
                let node1 = &self.t1.nodes[n1];
                let c1 = policy1[n1] as usize;
                match (node1.choices[c1], choice2) {
                    (Choice::Act(a1), Choice::Act(a2)) => {
                        v += w * (l1.cost(a1) + l2.cost(a2));
                        for (s1, &p1) in l1.row(node1.state(), a1).iter().enumerate() {
                            if p1 == 0.0 {
                                continue;
                            }
                            let next1 = node1.child(c1, s1);
                            for (s2, &p2) in l2.row(node2.state(), a2).iter().enumerate() {
                                if p2 > 0.0 {
                                    groups.entry(node2.child(c2, s2)).or_default().push((next1, w * p1 * p2));
                                }
                            }
                        }
                    }
                    (
                        Choice::Message {
                            kind: k1,
                            initiate: i1,
                        },
                        Choice::Message {
                            kind: k2,
                            initiate: i2,
                        },
                    ) => {
                        let (e1, e2) = if i1 || i2 {
                            v += w * self.cost;
                            (1 + content(k2, &node2.history), 1 + content(k1, &node1.history))
                        } else {
                            (0, 0)
                        };
                        groups.entry(node2.child(c2, e2)).or_default().push((node1.child(c1, e1), w));
                    }
                    _ => unreachable!("agents share the phase structure"),
                }
            }
            for (child, ps) in groups {
                v += self.value(policy1, child, &ps);
            }
            if v > best {
                best = v;
            }
        }
        best
    }
}

fn policy_count(tree: &Tree) -> (u128, Vec<u128>, Vec<Vec<u128>>) {
    let mut counts = vec![0u128; tree.nodes.len()];
    let mut per_choice = vec![Vec::new(); tree.nodes.len()];
    let total = tree.count(0, &mut counts, &mut per_choice);
    (total, counts, per_choice)
}

fn solve_menu(f: &FactoredDecMDP, spec: &CommSpec, menu: &MessageMenu, budget: u128) -> Result<LanguageResult> {
    let a = Tree::build(f, Agent::One, menu)?;
    let b = Tree::build(f, Agent::Two, menu)?;
    let ca = policy_count(&a);
    let cb = policy_count(&b);
    // Enumerate the smaller space; the other agent best-responds.
    let (enumerated_agent, view, t1, t2, (total, counts, per_choice)) = if cb.0 < ca.0 {
        (Agent::Two, f.swapped(), &b, &a, cb)
    } else {
        (Agent::One, f.clone(), &a, &b, ca)
    };
    if total > budget {
        return Err(Error::BudgetExceeded { count: total, budget });
    }
    let game = Game {
        f: &view,
        cost: spec.cost(),
        t1,
        t2,
        rt: view.terminal_table(),
        n2: view.local(Agent::Two).num_states(),
    };
    let value = (0..total as u64)
        .into_par_iter()
        .map_init(
            || vec![0u16; t1.nodes.len()],
            |buf, i| {
                t1.decode(0, i as u128, &counts, &per_choice, buf);
                game.value(buf, 0, &[(0, 1.0)])
            },
        )
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(LanguageResult {
        menu: menu.clone(),
        value,
        enumerated_agent,
        enumerated_policies: total,
        tree_nodes: [a.nodes.len(), b.nodes.len()],
    })
}

/// Optimal value over history-dependent action and message policies for each
/// menu. Intended for instances with a handful of states and `T <= 3`.
pub fn language_experiment(
    f: &FactoredDecMDP,
    spec: &CommSpec,
    menus: &[MessageMenu],
    budget: u128,
) -> Result<Vec<LanguageResult>> {
    menus.iter().map(|m| solve_menu(f, spec, m, budget)).collect()
}
