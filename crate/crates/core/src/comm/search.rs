//! Optimal communication policies by decomposition at exchanges.
//!
//! `W(σ, τ)` is the best value obtainable once both agents know the joint
//! state `σ` at time `τ`. A segment started at `(σ, τ)` runs until the next
//! exchange or the horizon; agent 1's segment policies are enumerated and
//! agent 2 best-responds exactly through the filtered (silence-conditioned)
//! distribution of agent 1's state, with `W` as the continuation value.

use rayon::prelude::*;

use super::{CommPolicy, CommSpec, SyncState};
use crate::error::{Error, Result};
use crate::mdp::tie_tolerance;
use crate::model::{Agent, FactoredDecMDP};
use crate::oracle::EnumerationOptions;

#[derive(Debug, Clone)]
pub struct CommSearchResult {
    pub policy: CommPolicy,
    pub value: f64,
    /// `W(σ, τ)` for every solved segment.
    pub segment_values: Vec<(SyncState, f64)>,
    pub largest_segment: u128,
    pub total_candidates: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Act(usize),
    Silent(usize),
    Send,
}

struct Segment {
    sigma: (usize, usize),
    tau: usize,
    domain: Vec<(usize, usize)>,
    choices: Vec<Vec<Choice>>,
    reach2: Vec<Vec<bool>>,
}

impl Segment {
    fn count(&self) -> u128 {
        self.choices.iter().fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    fn decode(&self, index: u128, out: &mut [Choice]) {
        let mut rest = index;
        for k in (0..self.domain.len()).rev() {
            let radix = self.choices[k].len() as u128;
            out[k] = self.choices[k][(rest % radix) as usize];
            rest /= radix;
        }
    }
}

struct Context<'a> {
    f: &'a FactoredDecMDP,
    cost: f64,
    n1: usize,
    n2: usize,
    h: usize,
    rt: Vec<f64>,
    /// `W[(s1 * n2 + s2) * h + t]`.
    w: Vec<f64>,
}

/// Agent 2's decisions recorded by a best-response pass.
struct Response {
    first_action: usize,
    /// `(s2, t, send, silent action)` for `t > τ`.
    later: Vec<(usize, usize, bool, usize)>,
}

impl Context<'_> {
    fn w(&self, s1: usize, s2: usize, t: usize) -> f64 {
        self.w[(s1 * self.n2 + s2) * self.h + t]
    }

    fn evaluate(&self, seg: &Segment, choice: &[Choice], record: bool) -> (f64, Option<Response>) {
        let (n1, n2, h, tau) = (self.n1, self.n2, self.h, seg.tau);
        let l1 = self.f.local(Agent::One);
        let l2 = self.f.local(Agent::Two);
        let span = h - tau + 1;
        // Pre-communication mass, silent mass, sending mass and agent 1's
        // silent action, per relative time.
        let mut pre = vec![vec![0.0; n1]; span];
        let mut silent = vec![vec![0.0; n1]; span];
        let mut sending = vec![vec![0.0; n1]; span];
        let mut act = vec![vec![usize::MAX; n1]; span];
        let mut lookup = vec![vec![usize::MAX; n1]; span];
        for (k, &(s1, t)) in seg.domain.iter().enumerate() {
            lookup[t - tau][s1] = k;
        }
        pre[0][seg.sigma.0] = 1.0;
        for r in 0..span {
            let t = tau + r;
            if r > 0 {
                let (before, after) = pre.split_at_mut(r);
                let _ = before;
                for s1 in 0..n1 {
                    let m = silent[r - 1][s1];
                    if m == 0.0 {
                        continue;
                    }
                    for (next, &p) in l1.row(s1, act[r - 1][s1]).iter().enumerate() {
                        if p > 0.0 {
                            after[0][next] += m * p;
                        }
                    }
                }
            }
            if t == h {
                break;
            }
            for s1 in 0..n1 {
                let m = pre[r][s1];
                if m == 0.0 {
                    continue;
                }
                match choice[lookup[r][s1]] {
                    Choice::Act(a) | Choice::Silent(a) => {
                        silent[r][s1] = m;
                        act[r][s1] = a;
                    }
                    Choice::Send => sending[r][s1] = m,
                }
            }
        }
        let stage1: Vec<f64> = (0..span.saturating_sub(1))
            .map(|r| (0..n1).filter(|&s| silent[r][s] > 0.0).map(|s| silent[r][s] * l1.cost(act[r][s])).sum())
            .collect();
        let silent_total: Vec<f64> = (0..span.saturating_sub(1)).map(|r| silent[r].iter().sum()).collect();

        let mut y_next = vec![0.0; n2];
        for s2 in (0..n2).filter(|&s| seg.reach2[h][s]) {
            y_next[s2] = (0..n1).filter(|&s1| pre[h - tau][s1] > 0.0).map(|s1| pre[h - tau][s1] * self.rt[s1 * n2 + s2]).sum();
        }
        let mut later = Vec::new();
        let mut first_action = usize::MAX;
        let mut y_cur = vec![0.0; n2];
        for t in (tau..h).rev() {
            let r = t - tau;
            for s2 in (0..n2).filter(|&s| seg.reach2[t][s]) {
                if t == tau && s2 != seg.sigma.1 {
                    continue;
                }
                let mut best_a = usize::MAX;
                let mut best = f64::NEG_INFINITY;
                let mut options = Vec::new();
                for a2 in l2.distinct_actions(s2) {
                    let mut v = silent_total[r] * l2.cost(a2);
                    for (next, &p) in l2.row(s2, a2).iter().enumerate() {
                        if p > 0.0 {
                            v += p * y_next[next];
                        }
                    }
                    options.push((a2, v));
                    if v > best {
                        best = v;
                    }
                }
                let tol = tie_tolerance(best);
                for &(a2, v) in &options {
                    if v >= best - tol {
                        best_a = a2;
                        best = v;
                        break;
                    }
                }
                let mut value = stage1[r] + best;
                if t > tau {
                    let mut send_value = 0.0;
                    let mut forced = 0.0;
                    for s1 in 0..n1 {
                        let m = pre[r][s1];
                        if m == 0.0 {
                            continue;
                        }
                        let c = self.cost + self.w(s1, s2, t);
                        send_value += m * c;
                        if sending[r][s1] > 0.0 {
                            forced += sending[r][s1] * c;
                        }
                    }
                    value += forced;
                    let send = send_value > value + tie_tolerance(value);
                    if send {
                        value = send_value;
                    }
                    if record {
                        later.push((s2, t, send, best_a));
                    }
                } else {
                    first_action = best_a;
                }
                y_cur[s2] = value;
            }
            std::mem::swap(&mut y_cur, &mut y_next);
        }
        let v = y_next[seg.sigma.1];
        (
            v,
            record.then_some(Response {
                first_action,
                later,
            }),
        )
    }
}

/// Optimal policy over `(sync state, sync time, local state, t)` maps and
/// its exact value. The budget bounds the number of agent-1 segment
/// policies enumerated for any single segment.
pub fn search_comm_optimal(f: &FactoredDecMDP, spec: &CommSpec, opts: EnumerationOptions) -> Result<CommSearchResult> {
    let l1 = f.local(Agent::One);
    let l2 = f.local(Agent::Two);
    let (n1, n2, h) = (l1.num_states(), l2.num_states(), f.horizon());
    let reach1 = l1.reachable(h);
    let reach2 = l2.reachable(h);
    let mut ctx = Context {
        f,
        cost: spec.cost(),
        n1,
        n2,
        h,
        rt: f.terminal_table(),
        w: vec![f64::NAN; n1 * n2 * h],
    };
    let mut policy = CommPolicy::undefined(f);
    let mut segment_values = Vec::new();
    let mut largest = 0u128;
    let mut total = 0u128;
    let actions1 = |s: usize| -> Vec<usize> {
        if opts.collapse_duplicates {
            l1.distinct_actions(s)
        } else {
            l1.enabled_actions(s).collect()
        }
    };
    for tau in (0..h).rev() {
        let sigmas: Vec<(usize, usize)> = if tau == 0 {
            vec![(l1.initial(), l2.initial())]
        } else {
            (0..n1)
                .filter(|&a| reach1[tau][a])
                .flat_map(|a| (0..n2).filter(|&b| reach2[tau][b]).map(move |b| (a, b)))
                .collect()
        };
        for sigma in sigmas {
            let r1 = l1.reachable_from(sigma.0, tau, h);
            let mut domain = vec![(sigma.0, tau)];
            let mut choices = vec![actions1(sigma.0).into_iter().map(Choice::Act).collect::<Vec<_>>()];
            for (t, row) in r1.iter().enumerate().take(h).skip(tau + 1) {
                for s1 in (0..n1).filter(|&s| row[s]) {
                    let mut c: Vec<Choice> = actions1(s1).into_iter().map(Choice::Silent).collect();
                    c.push(Choice::Send);
                    domain.push((s1, t));
                    choices.push(c);
                }
            }
            let seg = Segment {
                sigma,
                tau,
                domain,
                choices,
                reach2: l2.reachable_from(sigma.1, tau, h),
            };
            let count = seg.count();
            if count > opts.budget {
                return Err(Error::BudgetExceeded {
                    count,
                    budget: opts.budget,
                });
            }
            largest = largest.max(count);
            total = total.saturating_add(count);
            let count64 = count as u64;
            let len = seg.domain.len();
            let value_of = |i: u64| {
                let mut buf = vec![Choice::Send; len];
                seg.decode(i as u128, &mut buf);
                ctx.evaluate(&seg, &buf, false).0
            };
            let best = (0..count64).into_par_iter().map(value_of).reduce(|| f64::NEG_INFINITY, f64::max);
            let tol = tie_tolerance(best);
            let index = (0..count64)
                .into_par_iter()
                .filter(|&i| value_of(i) >= best - tol)
                .min()
                .expect("the maximum is attained");
            let mut buf = vec![Choice::Send; len];
            seg.decode(index as u128, &mut buf);
            let (value, response) = ctx.evaluate(&seg, &buf, true);
            let response = response.expect("recorded");
            let sync = SyncState {
                state: sigma.0 * n2 + sigma.1,
                time: tau,
            };
            for (k, &(s1, t)) in seg.domain.iter().enumerate() {
                match buf[k] {
                    Choice::Act(a) => policy.agents[0].set_action(sync, s1, t, a)?,
                    Choice::Silent(a) => {
                        policy.agents[0].set_send(sync, s1, t, false)?;
                        policy.agents[0].set_action(sync, s1, t, a)?;
                    }
                    Choice::Send => policy.agents[0].set_send(sync, s1, t, true)?,
                }
            }
            policy.agents[1].set_action(sync, sigma.1, tau, response.first_action)?;
            for (s2, t, send, a2) in response.later {
                policy.agents[1].set_send(sync, s2, t, send)?;
                policy.agents[1].set_action(sync, s2, t, a2)?;
            }
            ctx.w[(sigma.0 * n2 + sigma.1) * h + tau] = value;
            segment_values.push((sync, value));
        }
    }
    let value = ctx.w[(l1.initial() * n2 + l2.initial()) * h];
    segment_values.reverse();
    Ok(CommSearchResult {
        policy,
        value,
        segment_values,
        largest_segment: largest,
        total_candidates: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::eval_comm_policy;
    use crate::model::tests::toggle_model;
    use crate::model::{centralize, compose_joint, ObservationMode};
    use crate::oracle::exhaustive_optimal;

    fn centralized(f: &FactoredDecMDP) -> f64 {
        let j = compose_joint(f, ObservationMode::LocalState, 1000).unwrap();
        centralize(&j).solve_backward().values.get(j.initial(), 0)
    }

    #[test]
    fn free_communication_reaches_the_centralized_value() {
        for horizon in 1..=3 {
            let f = toggle_model(0.6, horizon);
            let r = search_comm_optimal(&f, &CommSpec::new(0.0).unwrap(), EnumerationOptions::default()).unwrap();
            assert!((r.value - centralized(&f)).abs() < 1e-9, "T={horizon}");
        }
    }

    #[test]
    fn searched_policy_evaluates_to_the_reported_value() {
        for cost in [0.0, -0.3, -2.0] {
            let f = toggle_model(0.6, 3);
            let spec = CommSpec::new(cost).unwrap();
            let r = search_comm_optimal(&f, &spec, EnumerationOptions::default()).unwrap();
            let v = eval_comm_policy(&f, &spec, &r.policy).unwrap();
            assert!((v - r.value).abs() < 1e-9, "cost {cost}: {v} vs {}", r.value);
        }
    }

    #[test]
    fn prohibitive_cost_falls_back_to_the_no_communication_optimum() {
        let f = toggle_model(0.6, 3);
        let r = search_comm_optimal(&f, &CommSpec::new(-1e3).unwrap(), EnumerationOptions::default()).unwrap();
        let o = exhaustive_optimal(&f, EnumerationOptions::default()).unwrap();
        assert!((r.value - o.value).abs() < 1e-9);
    }

    #[test]
    fn tight_budget_is_refused() {
        let f = toggle_model(0.6, 3);
        let opts = EnumerationOptions {
            budget: 2,
            ..Default::default()
        };
        assert!(matches!(
            search_comm_optimal(&f, &CommSpec::new(-1.0).unwrap(), opts),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
