use decmdp::classifier::{
    candidate_marginals, check_independent_observations, check_independent_transitions,
    check_joint_full_observability, check_local_full_observability,
};
use decmdp::comm::{eval_comm_policy, search_comm_optimal, CommPolicy, CommSpec, SyncState};
use decmdp::goals::{compute_v, opt1goal, optngoals, DEFAULT_GR};
use decmdp::model::{
    centralize, compose_joint, Agent, FactoredDecMDP, JointDecMDP, LocalModel, ObservationMode,
    DEFAULT_MAX_JOINT_STATES,
};
use decmdp::oracle::{best_response, enumerate_policy_space, exhaustive_optimal, EnumerationOptions};
use decmdp::scenarios::{
    gen_flashlight_variant, gen_meeting, gen_obstacle_variant, random_goal_instance_from_seed, MeetingSpec,
    RandomGoalSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn random_instance(seed: u64, states: usize, horizon: usize) -> FactoredDecMDP {
    let spec = RandomGoalSpec {
        num_states: states,
        horizon,
        ..RandomGoalSpec::default()
    };
    random_goal_instance_from_seed(seed, &spec).unwrap()
}

fn grid_spec() -> impl Strategy<Value = MeetingSpec> {
    (
        prop_oneof![Just((1usize, 2usize)), Just((2, 1)), Just((1, 3)), Just((2, 2))],
        prop_oneof![Just(0.6), Just(0.8), Just(1.0)],
        2usize..=3,
        any::<u64>(),
    )
        .prop_map(|((width, height), p, horizon, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cells = width * height;
            let mut sites = vec![rng.gen_range(0..cells)];
            if rng.gen_bool(0.5) {
                let other = rng.gen_range(0..cells);
                if other != sites[0] {
                    sites.push(other);
                }
            }
            let joint_reward = sites.iter().map(|_| rng.gen_range(2..=12) as f64).collect();
            MeetingSpec {
                width,
                height,
                p_success: p,
                meeting_sites: sites,
                start1: rng.gen_range(0..cells),
                start2: rng.gen_range(0..cells),
                step_cost: -1.0,
                joint_reward,
                horizon,
            }
        })
}

/// Grid instances whose goals are occupiable at T (the others are invalid
/// by construction and rejected by the generator's callers).
fn valid_grid() -> impl Strategy<Value = FactoredDecMDP> {
    grid_spec().prop_filter_map("goal unreachable", |s| {
        let f = gen_meeting(&s).ok()?;
        f.validate().is_valid().then_some(f)
    })
}

fn random_local_policy(local: &LocalModel, horizon: usize, rng: &mut ChaCha8Rng) -> decmdp::policy::LocalPolicy {
    let space = enumerate_policy_space(local, horizon, EnumerationOptions::default()).unwrap();
    space.policy(rng.gen_range(0..space.count()))
}

fn start(f: &FactoredDecMDP) -> (usize, usize) {
    (f.local(Agent::One).initial(), f.local(Agent::Two).initial())
}

fn centralized_value(f: &FactoredDecMDP) -> f64 {
    let m = compose_joint(f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES).unwrap();
    let mdp = centralize(&m);
    mdp.solve_backward().values.get(mdp.initial(), 0)
}

/// Independent transitions by definition: the agent-1 marginal of every
/// row depends on `(s1, a1)` only, likewise for agent 2, and each row is
/// the product of its marginals.
fn brute_force_it(m: &JointDecMDP) -> bool {
    let split = m.split().unwrap();
    let (n1, n2) = split.sizes();
    let [na1, na2] = [m.num_actions(Agent::One), m.num_actions(Agent::Two)];
    let marginal = |s: usize, a1: usize, a2: usize| {
        let mut m1 = vec![0.0; n1];
        let mut m2 = vec![0.0; n2];
        for (next, &p) in m.row(s, a1, a2).iter().enumerate() {
            let (t1, t2) = split.pair(next);
            m1[t1] += p;
            m2[t2] += p;
        }
        (m1, m2)
    };
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
    for s in 0..m.num_states() {
        let (s1, s2) = split.pair(s);
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                let (m1, m2) = marginal(s, a1, a2);
                let (r1, _) = marginal(split.joint(s1, 0), a1, 0);
                let (_, r2) = marginal(split.joint(0, s2), 0, a2);
                if !close(&m1, &r1) || !close(&m2, &r2) {
                    return false;
                }
                for (next, &p) in m.row(s, a1, a2).iter().enumerate() {
                    let (t1, t2) = split.pair(next);
                    if (p - m1[t1] * m2[t2]).abs() > 1e-9 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Moves `frac` of the largest entry of row `(s, a1, a2)` onto another
/// entry; returns the model and the moved mass.
fn shift_mass(m: &JointDecMDP, s: usize, a1: usize, a2: usize, to: usize, frac: f64) -> Option<(JointDecMDP, f64)> {
    let mut row = m.row(s, a1, a2).to_vec();
    let from = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j]))?;
    if from == to {
        return None;
    }
    let eps = row[from] * frac;
    row[from] -= eps;
    row[to] += eps;
    Some((m.with_row(s, a1, a2, &row).ok()?, eps))
}

/// Deterministic observation map per agent, `s_i' -> code[s_i']`.
fn observed(f: &FactoredDecMDP, codes: [&[usize]; 2]) -> JointDecMDP {
    let n = [f.local(Agent::One).num_states(), f.local(Agent::Two).num_states()];
    let na = [f.local(Agent::One).num_actions(), f.local(Agent::Two).num_actions()];
    let num_obs = [
        codes[0].iter().max().unwrap() + 1,
        codes[1].iter().max().unwrap() + 1,
    ];
    let ns = n[0] * n[1];
    let per = num_obs[0] * num_obs[1];
    let mut table = vec![0.0; ns * na[0] * na[1] * ns * per];
    for ctx in 0..ns * na[0] * na[1] {
        for next in 0..ns {
            let (t1, t2) = (next / n[1], next % n[1]);
            table[(ctx * ns + next) * per + codes[0][t1] * num_obs[1] + codes[1][t2]] = 1.0;
        }
    }
    compose_joint(f, ObservationMode::Custom { num_obs, table }, DEFAULT_MAX_JOINT_STATES).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn generated_models_are_valid(spec in grid_spec(), noise in 0.0f64..0.5, on in any::<bool>()) {
        let reachable = gen_meeting(&spec).map(|f| f.validate().is_valid());
        prop_assume!(matches!(reachable, Ok(true)));
        let cells = spec.width * spec.height;
        let free: Vec<usize> = (0..cells)
            .filter(|c| !spec.meeting_sites.contains(c) && *c != spec.start1 && *c != spec.start2)
            .take(1)
            .collect();
        if !free.is_empty() {
            let m = gen_obstacle_variant(&spec, &free, 0.7).unwrap();
            prop_assert!(m.validate().is_valid(), "{:?}", m.validate().violations);
        }
        let m = gen_flashlight_variant(&spec, noise, on).unwrap();
        prop_assert!(m.validate().is_valid(), "{:?}", m.validate().violations);
    }

    #[test]
    fn random_instances_are_valid(seed in any::<u64>(), states in 1usize..=4, horizon in 1usize..=4) {
        let f = random_instance(seed, states.max(2), horizon);
        prop_assert!(f.validate().is_valid());
    }

    #[test]
    fn composition_conserves_probability_and_is_independent(seed in any::<u64>(), states in 2usize..=3) {
        let f = random_instance(seed, states, 2);
        let m = compose_joint(&f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES).unwrap();
        prop_assert!(m.validate().is_valid());
        prop_assert!(centralize(&m).stochasticity_violations().is_empty());
        let split = m.split().unwrap();
        prop_assert!(check_independent_transitions(&m, split).unwrap().holds);
        let explicit = m.with_explicit_observations().unwrap();
        prop_assert!(check_independent_observations(&explicit, split).unwrap().holds);
        prop_assert!(check_local_full_observability(&m, split).unwrap().holds);
    }

    #[test]
    fn optimal_values_dominate_any_policy(seed in any::<u64>(), states in 2usize..=3, horizon in 1usize..=3) {
        let f = random_instance(seed, states, horizon);
        let m = compose_joint(&f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES).unwrap();
        let mdp = centralize(&m);
        let best = mdp.solve_backward().values.get(mdp.initial(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..4 {
            let p1 = random_local_policy(f.local(Agent::One), horizon, &mut rng);
            let p2 = random_local_policy(f.local(Agent::Two), horizon, &mut rng);
            let v = mdp.policy_value(&m.joint_policy([&p1, &p2]).unwrap()).unwrap();
            prop_assert!(v <= best + TOL);
            let cv = compute_v(&f, [&p1, &p2], start(&f)).unwrap();
            prop_assert!((cv - v).abs() <= TOL, "compute_v {cv} joint {v}");
        }
    }

    #[test]
    fn solvers_are_deterministic(seed in any::<u64>()) {
        let f = random_instance(seed, 3, 3);
        let a = optngoals(&f, DEFAULT_GR).unwrap();
        let b = optngoals(&f, DEFAULT_GR).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.chosen, b.chosen);
        let opts = EnumerationOptions::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let x = one.install(|| exhaustive_optimal(&f, opts)).unwrap();
        let y = two.install(|| exhaustive_optimal(&f, opts)).unwrap();
        prop_assert_eq!(x.value.to_bits(), y.value.to_bits());
        prop_assert_eq!(x.best_index, y.best_index);
        prop_assert_eq!(x.policies, y.policies);
    }

    #[test]
    fn values_are_sandwiched(seed in any::<u64>(), horizon in 1usize..=3) {
        let f = random_instance(seed, 3, horizon);
        let ngoals = optngoals(&f, DEFAULT_GR).unwrap().value;
        let oracle = exhaustive_optimal(&f, EnumerationOptions::default()).unwrap().value;
        let central = centralized_value(&f);
        prop_assert!(ngoals <= oracle + TOL, "{ngoals} > {oracle}");
        prop_assert!(oracle <= central + TOL, "{oracle} > {central}");
    }

    #[test]
    fn grid_policies_do_not_depend_on_the_goal_reward(f in valid_grid()) {
        for &goal in f.goals() {
            let base = opt1goal(&f, goal, 1.0).unwrap().policies;
            for gr in [10.0, 1000.0] {
                prop_assert_eq!(&opt1goal(&f, goal, gr).unwrap().policies, &base);
            }
        }
    }

    #[test]
    fn grid_sandwich(f in valid_grid()) {
        let ngoals = optngoals(&f, DEFAULT_GR).unwrap().value;
        let oracle = exhaustive_optimal(&f, EnumerationOptions::default()).unwrap().value;
        prop_assert!(ngoals <= oracle + TOL);
        prop_assert!(oracle <= centralized_value(&f) + TOL);
    }

    #[test]
    fn best_response_matches_double_enumeration(seed in any::<u64>(), states in 2usize..=3, horizon in 1usize..=2) {
        let f = random_instance(seed, states, horizon);
        let opts = EnumerationOptions::default();
        let s1 = enumerate_policy_space(f.local(Agent::One), horizon, opts).unwrap();
        let s2 = enumerate_policy_space(f.local(Agent::Two), horizon, opts).unwrap();
        prop_assume!(s1.count() * s2.count() <= 200);
        for d1 in s1.iter() {
            let brute = s2
                .iter()
                .map(|d2| compute_v(&f, [&d1, &d2], start(&f)).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let (_, v) = best_response(&f, &d1).unwrap();
            prop_assert!((v - brute).abs() <= TOL, "best response {v} brute force {brute}");
        }
    }

    #[test]
    fn classifier_agrees_with_brute_force(seed in any::<u64>(), perturb in any::<bool>(), frac in 0.1f64..0.9) {
        let f = random_instance(seed, 2, 1);
        let mut m = compose_joint(&f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES).unwrap();
        if perturb {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = rng.gen_range(0..m.num_states());
            let a1 = rng.gen_range(0..m.num_actions(Agent::One));
            let a2 = rng.gen_range(0..m.num_actions(Agent::Two));
            let to = rng.gen_range(0..m.num_states());
            if let Some((p, _)) = shift_mass(&m, s, a1, a2, to, frac) {
                m = p;
            }
        }
        let verdict = check_independent_transitions(&m, m.split().unwrap()).unwrap();
        prop_assert_eq!(verdict.holds, brute_force_it(&m));
        prop_assert_eq!(verdict.holds, verdict.witness.is_none());
    }

    #[test]
    fn transition_residual_grows_with_the_perturbation(seed in any::<u64>(), frac in 0.05f64..1.0) {
        let f = random_instance(seed, 2, 1);
        let m = compose_joint(&f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES).unwrap();
        let split = m.split().unwrap().clone();
        let (n1, n2) = split.sizes();
        // Rows outside the first context of either agent are not used to
        // build the candidate marginals.
        let s = split.joint(n1 - 1, n2 - 1);
        let (a1, a2) = (m.num_actions(Agent::One) - 1, m.num_actions(Agent::Two) - 1);
        prop_assume!(a1 > 0 && a2 > 0);
        let row = m.row(s, a1, a2).to_vec();
        let Some(to) = (0..row.len()).find(|&j| row[j] <= 0.25 && j != (0..row.len()).max_by(|&i, &k| row[i].total_cmp(&row[k])).unwrap()) else {
            return Ok(());
        };
        let (p, eps) = shift_mass(&m, s, a1, a2, to, frac * 0.5).unwrap();
        let before = check_independent_transitions(&m, &split).unwrap().max_residual;
        let after = check_independent_transitions(&p, &split).unwrap().max_residual;
        prop_assert!(before <= TOL);
        prop_assert!(after >= eps / 2.0 - 1e-12, "residual {after} for a shift of {eps}");
        prop_assert_eq!(candidate_marginals(&p, &split).unwrap(), candidate_marginals(&m, &split).unwrap());
    }

    #[test]
    fn joint_and_independent_observability_imply_local(
        seed in any::<u64>(),
        coarse1 in any::<bool>(),
        coarse2 in any::<bool>(),
    ) {
        let f = random_instance(seed, 3, 1);
        let code = |coarse: bool| if coarse { vec![0, 0, 1] } else { vec![2, 0, 1] };
        let (c1, c2) = (code(coarse1), code(coarse2));
        let m = observed(&f, [&c1, &c2]);
        let split = m.split().unwrap();
        let premise = check_independent_transitions(&m, split).unwrap().holds
            && check_independent_observations(&m, split).unwrap().holds
            && check_joint_full_observability(&m).holds;
        let local = check_local_full_observability(&m, split).unwrap().holds;
        prop_assert_eq!(premise, !coarse1 && !coarse2);
        if premise {
            prop_assert!(local);
        }
    }

    #[test]
    fn communication_value_is_monotone_and_bracketed(
        seed in any::<u64>(),
        c1 in -2.0f64..=0.0,
        c2 in -2.0f64..=0.0,
    ) {
        let f = random_instance(seed, 2, 2);
        let opts = EnumerationOptions::default();
        let (hi, lo) = if c1 >= c2 { (c1, c2) } else { (c2, c1) };
        let v_hi = search_comm_optimal(&f, &CommSpec::new(hi).unwrap(), opts).unwrap().value;
        let v_lo = search_comm_optimal(&f, &CommSpec::new(lo).unwrap(), opts).unwrap().value;
        let no_comm = exhaustive_optimal(&f, opts).unwrap().value;
        prop_assert!(v_lo <= v_hi + TOL);
        prop_assert!(no_comm <= v_lo + TOL);
        prop_assert!(v_hi <= centralized_value(&f) + TOL);
    }
}

/// One decision slot of a communication policy.
#[derive(Clone, Copy)]
enum Slot {
    Act(Agent, SyncState, usize, usize),
    Send(Agent, SyncState, usize, usize),
}

fn comm_slots(f: &FactoredDecMDP) -> Vec<(Slot, Vec<usize>)> {
    let n2 = f.local(Agent::Two).num_states();
    let horizon = f.horizon();
    let joint_reach = {
        let r1 = f.local(Agent::One).reachable(horizon);
        let r2 = f.local(Agent::Two).reachable(horizon);
        move |t: usize, s: usize| r1[t][s / n2] && r2[t][s % n2]
    };
    let s0 = f.local(Agent::One).initial() * n2 + f.local(Agent::Two).initial();
    let mut slots = Vec::new();
    for agent in Agent::BOTH {
        let local = f.local(agent);
        for tau in 0..horizon {
            for state in (0..f.num_joint_states()).filter(|&s| if tau == 0 { s == s0 } else { joint_reach(tau, s) }) {
                let sync = SyncState { state, time: tau };
                let own = if agent == Agent::One { state / n2 } else { state % n2 };
                let reach = local.reachable_from(own, tau, horizon);
                for t in tau..horizon {
                    for s in (0..local.num_states()).filter(|&s| reach[t][s]) {
                        slots.push((Slot::Act(agent, sync, s, t), local.undominated_actions(s)));
                        if t > tau {
                            slots.push((Slot::Send(agent, sync, s, t), vec![0, 1]));
                        }
                    }
                }
            }
        }
    }
    slots
}

fn best_by_double_enumeration(f: &FactoredDecMDP, spec: &CommSpec) -> f64 {
    let slots = comm_slots(f);
    let total: u128 = slots.iter().map(|(_, c)| c.len() as u128).product();
    assert!(total <= 2_000_000, "{total} joint communication policies");
    let mut best = f64::NEG_INFINITY;
    let mut digits = vec![0usize; slots.len()];
    loop {
        let mut policy = CommPolicy::undefined(f);
        for ((slot, choices), &d) in slots.iter().zip(&digits) {
            match *slot {
                Slot::Act(agent, sync, s, t) => policy.agents[agent.index()].set_action(sync, s, t, choices[d]).unwrap(),
                Slot::Send(agent, sync, s, t) => policy.agents[agent.index()].set_send(sync, s, t, choices[d] == 1).unwrap(),
            }
        }
        best = best.max(eval_comm_policy(f, spec, &policy).unwrap());
        let mut k = 0;
        loop {
            if k == digits.len() {
                return best;
            }
            digits[k] += 1;
            if digits[k] < slots[k].1.len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

fn corridor(p: f64, sites: &[usize], jr: &[f64]) -> FactoredDecMDP {
    gen_meeting(&MeetingSpec {
        width: 1,
        height: 2,
        p_success: p,
        meeting_sites: sites.to_vec(),
        start1: 0,
        start2: 0,
        step_cost: -1.0,
        joint_reward: jr.to_vec(),
        horizon: 2,
    })
    .unwrap()
}

#[test]
fn comm_search_matches_double_enumeration() {
    for f in [corridor(0.6, &[1], &[10.0]), corridor(0.8, &[0, 1], &[1.5, 4.0])] {
        for cost in [0.0, -0.05, -0.5, -5.0] {
            let spec = CommSpec::new(cost).unwrap();
            let searched = search_comm_optimal(&f, &spec, EnumerationOptions::default()).unwrap();
            let brute = best_by_double_enumeration(&f, &spec);
            assert!(
                (searched.value - brute).abs() <= TOL,
                "cost {cost}: search {} brute force {brute}",
                searched.value
            );
        }
    }
}
