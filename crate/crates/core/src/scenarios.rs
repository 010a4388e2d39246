//! Generators for the meeting-under-uncertainty grid and its variants with
//! coupled transitions (obstacles) and coupled observations (flashlights).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goals::check_nbclg;
use crate::model::{
    compose_joint, FactoredDecMDP, JointDecMDP, LocalModel, Metadata, ObservationMode, DEFAULT_MAX_JOINT_STATES,
};
use crate::oracle::{exhaustive_optimal, EnumerationOptions};

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const NOP: usize = 4;
/// Obstacle variant only.
pub const PUSH: usize = 5;
/// Flashlight variant only.
pub const LIGHT_ON: usize = 5;
pub const LIGHT_OFF: usize = 6;

/// Grid cells are numbered `y * width + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingSpec {
    pub width: usize,
    pub height: usize,
    pub p_success: f64,
    pub meeting_sites: Vec<usize>,
    pub start1: usize,
    pub start2: usize,
    pub step_cost: f64,
    /// One entry per site.
    pub joint_reward: Vec<f64>,
    pub horizon: usize,
}

impl MeetingSpec {
    pub fn validate(&self) -> Result<()> {
        let cells = self.width * self.height;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if cells == 0 {
            return bad("grid must have at least one cell".into());
        }
        if !(self.p_success > 0.0 && self.p_success <= 1.0) {
            return bad(format!("p_success {} outside (0, 1]", self.p_success));
        }
        if !(self.step_cost < 0.0) {
            return bad(format!("step cost {} must be negative", self.step_cost));
        }
        if self.meeting_sites.is_empty() {
            return bad("at least one meeting site is required".into());
        }
        if let Some(&c) = self.meeting_sites.iter().find(|&&c| c >= cells) {
            return bad(format!("meeting site {c} outside the {}x{} grid", self.width, self.height));
        }
        for (k, c) in self.meeting_sites.iter().enumerate() {
            if self.meeting_sites[..k].contains(c) {
                return bad(format!("meeting site {c} listed twice"));
            }
        }
        if self.joint_reward.len() != self.meeting_sites.len() {
            return bad(format!(
                "{} joint rewards for {} sites",
                self.joint_reward.len(),
                self.meeting_sites.len()
            ));
        }
        if self.start1 >= cells || self.start2 >= cells {
            return bad("start cell outside the grid".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    /// Cell reached by a successful move, if it stays on the grid.
    pub fn neighbour(&self, cell: usize, direction: usize) -> Option<usize> {
        let (x, y) = (cell % self.width, cell / self.width);
        match direction {
            NORTH if y > 0 => Some(cell - self.width),
            SOUTH if y + 1 < self.height => Some(cell + self.width),
            EAST if x + 1 < self.width => Some(cell + 1),
            WEST if x > 0 => Some(cell - 1),
            _ => None,
        }
    }

    fn metadata(&self, generator: &str) -> Metadata {
        let mut m = Metadata::new();
        m.insert("generator".into(), generator.into());
        m.insert("grid".into(), format!("{}x{}", self.width, self.height));
        m.insert("p_success".into(), self.p_success.to_string());
        m.insert(
            "meeting".into(),
            "agents score only when both occupy the same designated site at the horizon".into(),
        );
        m
    }
}

/// Row for a move from `cell`: success `p` to the neighbour unless it is
/// off-grid or `blocked`, otherwise stay.
fn move_row(spec: &MeetingSpec, cell: usize, direction: usize, blocked: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; spec.num_cells()];
    match spec.neighbour(cell, direction).filter(|c| !blocked.contains(c)) {
        Some(target) => {
            row[target] += spec.p_success;
            row[cell] += 1.0 - spec.p_success;
        }
        None => row[cell] = 1.0,
    }
    row
}

fn grid_local(spec: &MeetingSpec, start: usize) -> Result<LocalModel> {
    let n = spec.num_cells();
    let mut tr = Vec::with_capacity(n * 5 * n);
    for cell in 0..n {
        for d in [NORTH, SOUTH, EAST, WEST] {
            tr.extend(move_row(spec, cell, d, &[]));
        }
        let mut stay = vec![0.0; n];
        stay[cell] = 1.0;
        tr.extend(stay);
    }
    let mut costs = vec![spec.step_cost; 5];
    costs[NOP] = 0.0;
    LocalModel::new(n, start, 5, tr, costs, Some(NOP), &spec.meeting_sites)
}

/// Factored meeting model: goals `(l, l)` for every site `l`.
pub fn gen_meeting(spec: &MeetingSpec) -> Result<FactoredDecMDP> {
    spec.validate()?;
    let goals = spec.meeting_sites.iter().map(|&l| (l, l)).collect();
    Ok(FactoredDecMDP::new(
        grid_local(spec, spec.start1)?,
        grid_local(spec, spec.start2)?,
        goals,
        spec.joint_reward.clone(),
        spec.horizon,
    )?
    .with_metadata(spec.metadata("meeting")))
}

/// Meeting grid with static obstacle cells. Ordinary moves into an obstacle
/// fail; `PUSH` enters the first adjacent obstacle (N, S, E, W order) with
/// probability `p_obstacle`, and if both agents push the same obstacle in
/// the same stage neither moves.
pub fn gen_obstacle_variant(spec: &MeetingSpec, obstacle_cells: &[usize], p_obstacle: f64) -> Result<JointDecMDP> {
    spec.validate()?;
    let n = spec.num_cells();
    if let Some(&c) = obstacle_cells.iter().find(|&&c| c >= n) {
        return Err(Error::InvalidArgument(format!("obstacle {c} outside the grid")));
    }
    if !(0.0..=1.0).contains(&p_obstacle) {
        return Err(Error::InvalidArgument(format!("p_obstacle {p_obstacle} outside [0, 1]")));
    }
    let target = |cell: usize| -> Option<usize> {
        [NORTH, SOUTH, EAST, WEST]
            .into_iter()
            .filter_map(|d| spec.neighbour(cell, d))
            .find(|c| obstacle_cells.contains(c))
    };
    let local = |start: usize| -> Result<LocalModel> {
        let mut tr = Vec::with_capacity(n * 6 * n);
        for cell in 0..n {
            for d in [NORTH, SOUTH, EAST, WEST] {
                tr.extend(move_row(spec, cell, d, obstacle_cells));
            }
            let mut stay = vec![0.0; n];
            stay[cell] = 1.0;
            tr.extend(stay.clone());
            match target(cell) {
                Some(ob) => {
                    let mut row = vec![0.0; n];
                    row[ob] += p_obstacle;
                    row[cell] += 1.0 - p_obstacle;
                    tr.extend(row);
                }
                None => tr.extend(stay),
            }
        }
        let mut costs = vec![spec.step_cost; 6];
        costs[NOP] = 0.0;
        LocalModel::new(n, start, 6, tr, costs, Some(NOP), &spec.meeting_sites)
    };
    let goals = spec.meeting_sites.iter().map(|&l| (l, l)).collect();
    let f = FactoredDecMDP::new(local(spec.start1)?, local(spec.start2)?, goals, spec.joint_reward.clone(), spec.horizon)?;
    let mut m = compose_joint(&f, ObservationMode::LocalState, DEFAULT_MAX_JOINT_STATES)?;
    for s1 in 0..n {
        for s2 in 0..n {
            match (target(s1), target(s2)) {
                (Some(o1), Some(o2)) if o1 == o2 => {
                    let mut row = vec![0.0; n * n];
                    row[s1 * n + s2] = 1.0;
                    m = m.with_row(s1 * n + s2, PUSH, PUSH, &row)?;
                }
                _ => {}
            }
        }
    }
    let mut meta = spec.metadata("obstacle");
    meta.insert("obstacles".into(), format!("{obstacle_cells:?}"));
    meta.insert("p_obstacle".into(), p_obstacle.to_string());
    *m.metadata_mut() = meta;
    Ok(m)
}

/// Meeting grid where each local state is `(cell, light)` with index
/// `2 * cell + light`. Light actions set the agent's own light; an agent
/// sees its cell exactly while the partner's light is on and otherwise
/// sees a uniformly random wrong cell with probability `noise` (its own
/// light bit is always seen exactly). With `lights_always_on` the lights
/// cannot be switched off and observations are always exact.
pub fn gen_flashlight_variant(spec: &MeetingSpec, noise: f64, lights_always_on: bool) -> Result<JointDecMDP> {
    spec.validate()?;
    let cells = spec.num_cells();
    if cells < 2 && noise > 0.0 {
        return Err(Error::InvalidArgument("observation noise needs at least two cells".into()));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidArgument(format!("noise {noise} outside [0, 1]")));
    }
    let n = 2 * cells;
    let local = |start: usize| -> Result<LocalModel> {
        let mut tr = Vec::with_capacity(n * 7 * n);
        for s in 0..n {
            let (cell, light) = (s / 2, s % 2);
            for d in [NORTH, SOUTH, EAST, WEST] {
                let mut row = vec![0.0; n];
                for (c, p) in move_row(spec, cell, d, &[]).into_iter().enumerate() {
                    row[2 * c + light] += p;
                }
                tr.extend(row);
            }
            for next_light in [light, 1, if lights_always_on { 1 } else { 0 }] {
                let mut row = vec![0.0; n];
                row[2 * cell + next_light] = 1.0;
                tr.extend(row);
            }
        }
        let mut costs = vec![spec.step_cost; 7];
        costs[NOP] = 0.0;
        let nop_states: Vec<usize> = spec.meeting_sites.iter().flat_map(|&l| [2 * l, 2 * l + 1]).collect();
        LocalModel::new(n, 2 * start + 1, 7, tr, costs, Some(NOP), &nop_states)
    };
    let mut goals = Vec::new();
    let mut jr = Vec::new();
    for (k, &l) in spec.meeting_sites.iter().enumerate() {
        for b1 in 0..2 {
            for b2 in 0..2 {
                goals.push((2 * l + b1, 2 * l + b2));
                jr.push(spec.joint_reward[k]);
            }
        }
    }
    let f = FactoredDecMDP::new(local(spec.start1)?, local(spec.start2)?, goals, jr, spec.horizon)?;
    // O1(o1 | s1', partner light) for one agent.
    let obs_row = |own: usize, partner_light: usize| -> Vec<f64> {
        let mut row = vec![0.0; n];
        let (cell, light) = (own / 2, own % 2);
        if partner_light == 1 || lights_always_on || noise == 0.0 {
            row[own] = 1.0;
        } else {
            row[own] = 1.0 - noise;
            for c in (0..cells).filter(|&c| c != cell) {
                row[2 * c + light] += noise / (cells - 1) as f64;
            }
        }
        row
    };
    let na = 7;
    let joint_states = n * n;
    let mut table = vec![0.0; joint_states * na * na * joint_states * n * n];
    for s in 0..joint_states {
        for a1 in 0..na {
            for a2 in 0..na {
                for next in 0..joint_states {
                    let (t1, t2) = (next / n, next % n);
                    let r1 = obs_row(t1, t2 % 2);
                    let r2 = obs_row(t2, t1 % 2);
                    let base = (((s * na + a1) * na + a2) * joint_states + next) * n * n;
                    for (o1, &p1) in r1.iter().enumerate() {
                        if p1 == 0.0 {
                            continue;
                        }
                        for (o2, &p2) in r2.iter().enumerate() {
                            table[base + o1 * n + o2] = p1 * p2;
                        }
                    }
                }
            }
        }
    }
    let mut m = compose_joint(
        &f,
        ObservationMode::Custom {
            num_obs: [n, n],
            table,
        },
        DEFAULT_MAX_JOINT_STATES,
    )?;
    let mut meta = spec.metadata("flashlight");
    meta.insert("noise".into(), noise.to_string());
    meta.insert("lights_always_on".into(), lights_always_on.to_string());
    *m.metadata_mut() = meta;
    Ok(m)
}

/// Shape of a random goal-oriented instance: `moves` move actions per agent
/// plus a NOP at goal components, each move reaching at most two successors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomGoalSpec {
    pub num_states: usize,
    pub moves: usize,
    pub num_goals: usize,
    pub horizon: usize,
    pub step_cost: f64,
    pub max_joint_reward: f64,
}

impl Default for RandomGoalSpec {
    fn default() -> Self {
        RandomGoalSpec {
            num_states: 3,
            moves: 2,
            num_goals: 2,
            horizon: 3,
            step_cost: -1.0,
            max_joint_reward: 20.0,
        }
    }
}

fn random_local(rng: &mut impl Rng, spec: &RandomGoalSpec, goal_components: &[usize]) -> Result<LocalModel> {
    let n = spec.num_states;
    let na = spec.moves + 1;
    let mut tr = Vec::with_capacity(n * na * n);
    for s in 0..n {
        for _ in 0..spec.moves {
            let mut row = vec![0.0; n];
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let p = (rng.gen_range(1..=10) as f64) / 10.0;
            row[a] += p;
            row[b] += 1.0 - p;
            tr.extend(row);
        }
        let mut stay = vec![0.0; n];
        stay[s] = 1.0;
        tr.extend(stay);
    }
    let mut costs = vec![spec.step_cost; na];
    costs[spec.moves] = 0.0;
    let mut nop_states = goal_components.to_vec();
    nop_states.sort_unstable();
    nop_states.dedup();
    LocalModel::new(n, 0, na, tr, costs, Some(spec.moves), &nop_states)
}

/// Attempts at drawing a valid instance before giving up.
const MAX_DRAWS: usize = 1000;

/// Random uniform-cost goal-oriented instance with distinct goal pairs.
/// Draws that fail validation (no goal occupiable at T) are redrawn.
pub fn random_goal_instance(rng: &mut impl Rng, spec: &RandomGoalSpec) -> Result<FactoredDecMDP> {
    for _ in 0..MAX_DRAWS {
        let f = draw_goal_instance(rng, spec)?;
        if f.validate().is_valid() {
            return Ok(f);
        }
    }
    Err(Error::InvalidArgument(format!("no valid instance in {MAX_DRAWS} draws for {spec:?}")))
}

fn draw_goal_instance(rng: &mut impl Rng, spec: &RandomGoalSpec) -> Result<FactoredDecMDP> {
    let n = spec.num_states;
    if n == 0 || spec.moves == 0 || spec.num_goals == 0 || spec.num_goals > n * n || spec.horizon == 0 {
        return Err(Error::InvalidArgument(format!("unusable random instance shape {spec:?}")));
    }
    if !(spec.step_cost < 0.0) || !(spec.max_joint_reward >= 1.0) {
        return Err(Error::InvalidArgument("step cost must be negative and rewards at least 1".into()));
    }
    let mut goals: Vec<(usize, usize)> = Vec::new();
    while goals.len() < spec.num_goals {
        let g = (rng.gen_range(0..n), rng.gen_range(0..n));
        if !goals.contains(&g) {
            goals.push(g);
        }
    }
    let jr = (0..spec.num_goals)
        .map(|_| rng.gen_range(1..=spec.max_joint_reward as u64) as f64)
        .collect();
    let g1: Vec<usize> = goals.iter().map(|g| g.0).collect();
    let g2: Vec<usize> = goals.iter().map(|g| g.1).collect();
    let l1 = random_local(rng, spec, &g1)?;
    let l2 = random_local(rng, spec, &g2)?;
    let mut meta = Metadata::new();
    meta.insert("scenario".into(), "random-goal".into());
    Ok(FactoredDecMDP::new(l1, l2, goals, jr, spec.horizon)?.with_metadata(meta))
}

pub fn random_goal_instance_from_seed(seed: u64, spec: &RandomGoalSpec) -> Result<FactoredDecMDP> {
    random_goal_instance(&mut ChaCha8Rng::seed_from_u64(seed), spec)
}

/// A multi-goal instance on which committing to one goal is strictly
/// suboptimal while the NBCLG check reports a violation.
#[derive(Debug, Clone)]
pub struct NbclgCounterexample {
    pub model: FactoredDecMDP,
    pub attempt: usize,
    pub optngoals_value: f64,
    pub oracle_value: f64,
    pub violations: usize,
}

/// Seeded random search; `Ok(None)` when no counterexample is found within
/// `attempts` instances.
pub fn search_nbclg_counterexample(
    seed: u64,
    attempts: usize,
    spec: &RandomGoalSpec,
    opts: EnumerationOptions,
    gap: f64,
) -> Result<Option<NbclgCounterexample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..attempts {
        let f = random_goal_instance(&mut rng, spec)?;
        let report = check_nbclg(&f, None)?;
        if report.holds {
            continue;
        }
        let oracle = exhaustive_optimal(&f, opts)?;
        if oracle.value > report.bundle.value + gap {
            let mut meta = f.metadata().clone();
            meta.insert("search_seed".into(), seed.to_string());
            meta.insert("search_attempt".into(), attempt.to_string());
            return Ok(Some(NbclgCounterexample {
                model: f.with_metadata(meta),
                attempt,
                optngoals_value: report.bundle.value,
                oracle_value: oracle.value,
                violations: report.violations.len(),
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{
        check_distinctive_goals, check_independent_observations, check_independent_transitions, uniform_cost,
    };
    use crate::goals::{opt1goal, DEFAULT_GR};

    pub(crate) fn spec(width: usize, height: usize, p: f64, sites: Vec<usize>, horizon: usize) -> MeetingSpec {
        let k = sites.len();
        MeetingSpec {
            width,
            height,
            p_success: p,
            meeting_sites: sites,
            start1: 0,
            start2: width * height - 1,
            step_cost: -1.0,
            joint_reward: vec![10.0; k],
            horizon,
        }
    }

    #[test]
    fn random_search_finds_a_commitment_counterexample() {
        let found = search_nbclg_counterexample(0, 2000, &RandomGoalSpec::default(), EnumerationOptions::default(), 1e-6)
            .unwrap()
            .expect("counterexample within 2000 attempts");
        assert!(found.violations > 0);
        assert!(found.oracle_value > found.optngoals_value + 1e-6);
        eprintln!("attempt {} gap {}", found.attempt, found.oracle_value - found.optngoals_value);
    }

    #[test]
    fn one_by_two_corridor_scores_eight() {
        let mut s = spec(2, 1, 1.0, vec![1], 2);
        s.start2 = 0;
        let f = gen_meeting(&s).unwrap();
        assert!(f.validate().is_valid());
        let r = opt1goal(&f, (1, 1), DEFAULT_GR).unwrap();
        assert!((r.value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn meeting_models_are_products_with_distinctive_goals() {
        let f = gen_meeting(&spec(2, 2, 0.8, vec![0, 3], 3)).unwrap();
        assert!(f.validate().is_valid());
        assert!(uniform_cost(&f));
        assert!(check_distinctive_goals(&f).holds);
        let m = compose_joint(&f, ObservationMode::LocalState, 100).unwrap();
        assert!(check_independent_transitions(&m, m.split().unwrap()).unwrap().holds);
    }

    #[test]
    fn shared_obstacle_breaks_independent_transitions() {
        // 3x1 grid, obstacle in the middle, agents on both sides.
        let mut s = spec(3, 1, 1.0, vec![0], 2);
        s.start2 = 2;
        let m = gen_obstacle_variant(&s, &[1], 0.9).unwrap();
        assert!(m.validate().is_valid());
        let v = check_independent_transitions(&m, m.split().unwrap()).unwrap();
        assert!(!v.holds);
        let w = v.witness.unwrap();
        assert_eq!((w[1], w[2]), (PUSH, PUSH));
        let (s1, s2) = m.split().unwrap().pair(w[0]);
        assert!([0, 2].contains(&s1) && [0, 2].contains(&s2), "{w:?}");
    }

    #[test]
    fn obstacle_variant_without_obstacles_is_a_product() {
        let m = gen_obstacle_variant(&spec(2, 2, 0.8, vec![0], 2), &[], 0.5).unwrap();
        assert!(m.validate().is_valid());
        assert!(check_independent_transitions(&m, m.split().unwrap()).unwrap().holds);
    }

    #[test]
    fn flashlight_noise_breaks_independent_observations() {
        let m = gen_flashlight_variant(&spec(2, 1, 0.9, vec![1], 2), 0.3, false).unwrap();
        assert!(m.validate().is_valid());
        let v = check_independent_observations(&m, m.split().unwrap()).unwrap();
        assert!(!v.holds);
        assert!(v.witness.is_some());
        assert!(check_independent_transitions(&m, m.split().unwrap()).unwrap().holds);
    }

    #[test]
    fn lights_always_on_restores_independent_observations() {
        let m = gen_flashlight_variant(&spec(2, 1, 0.9, vec![1], 2), 0.3, true).unwrap();
        assert!(m.validate().is_valid());
        let v = check_independent_observations(&m, m.split().unwrap()).unwrap();
        assert!(v.holds);
        assert_eq!(v.max_residual, 0.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(2, 2, 0.8, vec![0], 2);
        s.p_success = 0.0;
        assert!(gen_meeting(&s).is_err());
        let mut s = spec(2, 2, 0.8, vec![7], 2);
        s.joint_reward = vec![1.0];
        assert!(gen_meeting(&s).is_err());
    }
}
