use decmdp::classifier::{classify_factored, classify_joint, ClassificationReport};
use decmdp::comm::{
    eval_comm_policy, language_experiment, search_comm_optimal, transform_direct_to_indirect, CommSpec, MessageMenu,
    DEFAULT_LANGUAGE_BUDGET,
};
use decmdp::goals::{check_nbclg as nbclg, compute_v, opt1goal, optngoals};
use decmdp::io::{
    comm_policy_to_json, model_to_json, parse_comm_policy, parse_policy_pair, policy_pair_to_json,
};
use decmdp::model::{centralize, compose_joint, Agent, FactoredDecMDP, Model, ObservationMode};
use decmdp::oracle::{exhaustive_optimal, history_best_response, policy_space_sizes, EnumerationOptions, DEFAULT_BUDGET};
use decmdp::policy::LocalPolicy;
use decmdp::scenarios::{
    gen_flashlight_variant, gen_meeting, gen_obstacle_variant, random_goal_instance_from_seed,
    search_nbclg_counterexample, MeetingSpec, RandomGoalSpec,
};
use decmdp::sim::simulate_joint;
use serde_json::{json, Value};

use crate::report::{digest, load_factored, load_model, read_file, write_file, CliError, CliResult, Run};
use crate::{ClassifyArgs, CommArgs, Common, EvalArgs, GenArgs, NbclgArgs, OracleArgs, SolveManyArgs, SolveOneArgs, Variant};

const COUNTEREXAMPLE_GAP: f64 = 1e-6;

fn options(common: &Common) -> EnumerationOptions {
    EnumerationOptions {
        budget: common.budget.unwrap_or(DEFAULT_BUDGET),
        ..Default::default()
    }
}

fn policies_json(policies: [&LocalPolicy; 2]) -> Value {
    json!({ "agent1": policies[0].entries(), "agent2": policies[1].entries() })
}

fn start(f: &FactoredDecMDP) -> (usize, usize) {
    (f.local(Agent::One).initial(), f.local(Agent::Two).initial())
}

pub fn gen(a: &GenArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let model = if a.variant == Variant::Random {
        let spec = RandomGoalSpec {
            num_states: a.states,
            moves: a.moves,
            num_goals: a.goals,
            horizon: a.horizon,
            step_cost: a.step_cost,
            ..Default::default()
        };
        Model::Factored(random_goal_instance_from_seed(a.common.seed, &spec)?)
    } else {
        let cells = a.width * a.height;
        let joint_reward = match a.jr.as_slice() {
            [v] => vec![*v; a.sites.len()],
            many => many.to_vec(),
        };
        let spec = MeetingSpec {
            width: a.width,
            height: a.height,
            p_success: a.p,
            meeting_sites: a.sites.clone(),
            start1: a.start1.unwrap_or(0),
            start2: a.start2.unwrap_or(cells.saturating_sub(1)),
            step_cost: a.step_cost,
            joint_reward,
            horizon: a.horizon,
        };
        match a.variant {
            Variant::Meeting => Model::Factored(gen_meeting(&spec)?),
            Variant::Obstacle => Model::Joint(gen_obstacle_variant(&spec, &a.obstacles, a.p_obstacle)?),
            Variant::Flashlight => Model::Joint(gen_flashlight_variant(&spec, a.noise, a.lights_always_on)?),
            Variant::Random => unreachable!(),
        }
    };
    let text = model_to_json(&model);
    let Some(path) = &a.common.out else {
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), "{text}");
        return Ok(());
    };
    write_file(path, &text)?;
    let states = match &model {
        Model::Factored(f) => f.num_joint_states(),
        Model::Joint(j) => j.num_states(),
    };
    run.finish_to(
        Some(digest(&text)),
        json!({ "model": path, "joint_states": states, "horizon": model.horizon() }),
        None,
    )
}

fn print_table(r: &ClassificationReport) {
    eprintln!("{:<28} {:<6} {:>12}  witness", "property", "holds", "residual");
    for (name, v) in &r.verdicts {
        let witness = v.witness.as_ref().map(|w| format!("{w:?}")).unwrap_or_default();
        eprintln!("{name:<28} {:<6} {:>12.3e}  {witness}", v.holds, v.max_residual);
    }
    eprintln!("class: {} ({:?})", r.taxonomy_label, r.complexity);
}

pub fn classify(a: &ClassifyArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let loaded = load_model(&a.common)?;
    let report = match &loaded.model {
        Model::Factored(f) => classify_factored(f, a.common.max_joint_states)?,
        Model::Joint(j) => classify_joint(j)?,
    };
    print_table(&report);
    run.finish(Some(loaded.digest), serde_json::to_value(&report).expect("reports serialize"))
}

pub fn solve_one(a: &SolveOneArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let (f, digest) = load_factored(&a.common)?;
    let goal = match &a.goal {
        Some(g) => (g[0], g[1]),
        None => *f.goals().first().ok_or(decmdp::Error::EmptyGoalSet)?,
    };
    let r = opt1goal(&f, goal, a.gr)?;
    let pols = [&r.policies[0], &r.policies[1]];
    if let Some(path) = &a.policy_out {
        write_file(path, &policy_pair_to_json(pols))?;
    }
    run.finish(
        Some(digest),
        json!({
            "goal": r.goal,
            "gr": a.gr,
            "value": r.value,
            "optimality_guaranteed": r.optimality_guaranteed,
            "notes": r.notes,
            "policies": policies_json(pols),
        }),
    )
}

pub fn solve_many(a: &SolveManyArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let (f, digest) = load_factored(&a.common)?;
    let b = optngoals(&f, a.gr)?;
    let pols = b.chosen_policies();
    if let Some(path) = &a.policy_out {
        write_file(path, &policy_pair_to_json(pols))?;
    }
    run.finish(
        Some(digest),
        json!({
            "gr": a.gr,
            "goal_values": b.values(),
            "chosen_goal": f.goals()[b.chosen],
            "value": b.value,
            "optimality_guaranteed": b.optimality_guaranteed,
            "notes": b.notes,
            "policies": policies_json(pols),
        }),
    )
}

pub fn check_nbclg(a: &NbclgArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    if let Some(attempts) = a.search {
        let spec = RandomGoalSpec {
            num_states: a.states,
            moves: a.moves,
            num_goals: a.goals,
            horizon: a.horizon,
            ..Default::default()
        };
        let found = search_nbclg_counterexample(a.common.seed, attempts, &spec, options(&a.common), COUNTEREXAMPLE_GAP)?;
        let result = match &found {
            None => json!({ "found": false, "attempts": attempts }),
            Some(c) => {
                let text = model_to_json(&Model::Factored(c.model.clone()));
                if let Some(path) = &a.model_out {
                    write_file(path, &text)?;
                }
                json!({
                    "found": true,
                    "attempt": c.attempt,
                    "optngoals_value": c.optngoals_value,
                    "oracle_value": c.oracle_value,
                    "gap": c.oracle_value - c.optngoals_value,
                    "violations": c.violations,
                    "model_digest": digest(&text),
                })
            }
        };
        return run.finish(None, result);
    }
    let (f, digest) = load_factored(&a.common)?;
    let r = nbclg(&f, a.gr)?;
    run.finish(
        Some(digest),
        json!({
            "holds": r.holds,
            "chosen_goal": f.goals()[r.chosen],
            "value": r.bundle.value,
            "goal_values": r.bundle.values(),
            "violations": r.violations,
        }),
    )
}

pub fn oracle(a: &OracleArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let (f, digest) = load_factored(&a.common)?;
    let opts = EnumerationOptions {
        restrict_to_reachable: !a.no_reachable_restriction,
        collapse_duplicates: !a.no_collapse,
        ..options(&a.common)
    };
    let sizes = policy_space_sizes(&f, opts);
    let r = exhaustive_optimal(&f, opts)?;
    let pols = [&r.policies[0], &r.policies[1]];
    if let Some(path) = &a.policy_out {
        write_file(path, &policy_pair_to_json(pols))?;
    }
    let history = if a.history_check {
        match history_best_response(&f, &r.policies[0]) {
            Ok(v) => json!({ "value": v, "agrees": (v - r.value).abs() <= a.common.tol }),
            Err(e) if e.is_budget() => json!({ "skipped": e.to_string() }),
            Err(e) => return Err(e.into()),
        }
    } else {
        Value::Null
    };
    run.finish(
        Some(digest),
        json!({
            "value": r.value,
            "enumerated_agent": r.enumerated_agent,
            "enumerated": r.enumerated.to_string(),
            "raw_count": r.raw_count.to_string(),
            "best_index": r.best_index.to_string(),
            "space_sizes": {
                "agent1": sizes.agent1.to_string(),
                "agent2": sizes.agent2.to_string(),
                "agent1_raw": sizes.agent1_raw.to_string(),
                "agent2_raw": sizes.agent2_raw.to_string(),
            },
            "history_check": history,
            "policies": policies_json(pols),
        }),
    )
}

/// `lo:hi:n` as `n` evenly spaced points from `lo` to `hi`.
pub fn parse_sweep(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("--sweep expects lo:hi:n, got {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

pub fn comm(a: &CommArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    if a.cost.is_none() && a.sweep.is_none() {
        return Err(CliError::Usage("comm needs --cost or --sweep".into()));
    }
    let (f, digest) = load_factored(&a.common)?;
    let opts = options(&a.common);
    let mut result = serde_json::Map::new();

    let costs = match (&a.sweep, a.cost) {
        (Some(s), _) => parse_sweep(s)?,
        (None, Some(c)) => vec![c],
        (None, None) => unreachable!(),
    };
    let specs = costs.iter().map(|&c| CommSpec::new(c)).collect::<Result<Vec<_>, _>>()?;
    let no_comm = exhaustive_optimal(&f, opts)?.value;
    let joint = compose_joint(&f, ObservationMode::LocalState, a.common.max_joint_states)?;
    let centralized = centralize(&joint).solve_backward().values.get(joint.initial(), 0);
    let mut rows = Vec::new();
    let mut last_policy = None;
    for spec in &specs {
        let r = search_comm_optimal(&f, spec, opts)?;
        rows.push((spec.cost(), r.value));
        last_policy = Some(r.policy);
    }
    let tol = a.common.tol;
    let mut by_cost = rows.clone();
    by_cost.sort_by(|x, y| y.0.total_cmp(&x.0));
    let monotone = by_cost.windows(2).all(|w| w[1].1 <= w[0].1 + tol);
    let bracketed = rows.iter().all(|&(_, v)| no_comm <= v + tol && v <= centralized + tol);
    let mut csv = String::from("cost,value,no_comm_value,centralized_value\n");
    for &(c, v) in &rows {
        csv.push_str(&format!("{c},{v},{no_comm},{centralized}\n"));
    }
    if let Some(path) = &a.csv {
        write_file(path, &csv)?;
    }
    if let (Some(path), Some(p)) = (&a.policy_out, &last_policy) {
        write_file(path, &comm_policy_to_json(p))?;
    }
    result.insert(
        "table".into(),
        rows.iter().map(|&(c, v)| json!({ "cost": c, "value": v })).collect(),
    );
    result.insert("no_comm_value".into(), json!(no_comm));
    result.insert("centralized_value".into(), json!(centralized));
    result.insert("monotone".into(), json!(monotone));
    result.insert("bracketed".into(), json!(bracketed));

    if !a.menu.is_empty() {
        let menus = a.menu.iter().map(|m| MessageMenu::parse(m)).collect::<Result<Vec<_>, _>>()?;
        let budget = a.common.budget.unwrap_or(DEFAULT_LANGUAGE_BUDGET);
        let results = language_experiment(&f, &specs[0], &menus, budget)?;
        result.insert(
            "language".into(),
            results
                .iter()
                .map(|r| {
                    json!({
                        "menu": r.menu.to_string(),
                        "value": r.value,
                        "enumerated_agent": r.enumerated_agent,
                        "enumerated_policies": r.enumerated_policies.to_string(),
                    })
                })
                .collect(),
        );
    }
    if a.transform {
        let explicit = joint.with_explicit_observations()?;
        let reduced = transform_direct_to_indirect(&explicit, &specs[0])?;
        let text = model_to_json(&Model::Joint(reduced.clone()));
        if let Some(path) = &a.model_out {
            write_file(path, &text)?;
        }
        result.insert(
            "transform".into(),
            json!({
                "states": reduced.num_states(),
                "horizon": reduced.horizon(),
                "model_digest": crate::report::digest(&text),
            }),
        );
    }
    run.finish(Some(digest), Value::Object(result))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let run = Run::start(&a.common)?;
    let (f, digest) = load_factored(&a.common)?;
    let result = match (&a.policy, &a.comm_policy) {
        (Some(path), None) => {
            let [p1, p2] = parse_policy_pair(&read_file(path)?, &f)?;
            let value = compute_v(&f, [&p1, &p2], start(&f))?;
            let sampled = match a.episodes {
                Some(n) => {
                    let e = simulate_joint(&f, [&p1, &p2], n, a.common.seed)?;
                    json!({ "mean": e.mean, "std_err": e.std_err, "episodes": e.episodes, "agrees": e.agrees_with(value, 4.0) })
                }
                None => Value::Null,
            };
            json!({ "value": value, "monte_carlo": sampled })
        }
        (None, Some(path)) => {
            let p = parse_comm_policy(&read_file(path)?, &f)?;
            let spec = CommSpec::new(a.cost)?;
            json!({ "cost": a.cost, "value": eval_comm_policy(&f, &spec, &p)? })
        }
        _ => return Err(CliError::Usage("eval needs exactly one of --policy or --comm-policy".into())),
    };
    run.finish(Some(digest), result)
}
