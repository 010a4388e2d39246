//! Seeded Monte Carlo rollouts, used to cross-check exact evaluators.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Agent, FactoredDecMDP, LocalModel};
use crate::policy::LocalPolicy;

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
}

impl Estimate {
    fn from_samples(sum: f64, sum_sq: f64, n: usize) -> Self {
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sum_sq - sum * mean) / (n as f64 - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / n as f64).sqrt(),
            episodes: n,
        }
    }

    /// `|mean - exact| <= k * std_err` (exact match when the variance is 0).
    pub fn agrees_with(&self, exact: f64, k: f64) -> bool {
        (self.mean - exact).abs() <= k * self.std_err + 1e-12
    }
}

fn step(local: &LocalModel, s: usize, a: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    let dist = WeightedIndex::new(local.row(s, a))
        .map_err(|e| Error::InvalidModel(format!("cannot sample row (s={s}, a={a}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Estimates the expected cost of `policy` from `(state, time)`.
pub fn simulate_local_cost(
    local: &LocalModel,
    policy: &LocalPolicy,
    state: usize,
    time: usize,
    episodes: usize,
    seed: u64,
) -> Result<Estimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes.max(1) {
        let mut s = state;
        let mut total = 0.0;
        for t in time..policy.horizon() {
            let a = policy.require(s, t)?;
            total += local.cost(a);
            s = step(local, s, a, &mut rng)?;
        }
        sum += total;
        sum_sq += total * total;
    }
    Ok(Estimate::from_samples(sum, sum_sq, episodes.max(1)))
}

/// Estimates the joint value of `(δ1, δ2)` from the initial state.
pub fn simulate_joint(
    f: &FactoredDecMDP,
    policies: [&LocalPolicy; 2],
    episodes: usize,
    seed: u64,
) -> Result<Estimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes.max(1) {
        let mut s = [f.local(Agent::One).initial(), f.local(Agent::Two).initial()];
        let mut total = 0.0;
        for t in 0..f.horizon() {
            for agent in Agent::BOTH {
                let i = agent.index();
                let a = policies[i].require(s[i], t)?;
                total += f.local(agent).cost(a);
                s[i] = step(f.local(agent), s[i], a, &mut rng)?;
            }
        }
        total += f.terminal_reward(s[0], s[1]);
        sum += total;
        sum_sq += total * total;
    }
    Ok(Estimate::from_samples(sum, sum_sq, episodes.max(1)))
}
