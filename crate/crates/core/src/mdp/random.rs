//! Seeded random factored MDPs for oracle and property suites.

use rand::Rng;

use super::{ActionSpace, FactoredMdp, MdpError, Outcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub num_states: usize,
    pub gamma: f64,
    /// Maximum number of successor outcomes per (state, action); 1 is deterministic.
    pub max_outcomes: usize,
    /// Probability that an outcome terminates the episode.
    pub done_prob: f64,
    /// Probability that a joint action is infeasible (state keeps at least one feasible action).
    pub infeasible_prob: f64,
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        Self { num_states: 5, gamma: 0.9, max_outcomes: 1, done_prob: 0.0, infeasible_prob: 0.0 }
    }
}

/// Samples an MDP with rewards uniform in `[0, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], spec: RandomMdpSpec) -> Result<FactoredMdp, MdpError> {
    let space = ActionSpace::new(dims.to_vec())?;
    let n = space.size();
    let mut outcomes = Vec::with_capacity(spec.num_states * n);
    for _ in 0..spec.num_states * n {
        let count = rng.gen_range(1..=spec.max_outcomes.max(1));
        let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut dist: Vec<Outcome> = weights
            .iter()
            .map(|w| Outcome {
                next: rng.gen_range(0..spec.num_states),
                prob: w / total,
                reward: rng.gen::<f64>(),
                done: rng.gen::<f64>() < spec.done_prob,
            })
            .collect();
        if count == 1 {
            dist[0].prob = 1.0;
        }
        outcomes.push(dist);
    }
    let mut feasible = vec![true; spec.num_states * n];
    if spec.infeasible_prob > 0.0 {
        for s in 0..spec.num_states {
            let keep = rng.gen_range(0..n);
            for j in 0..n {
                if j != keep && rng.gen::<f64>() < spec.infeasible_prob {
                    feasible[s * n + j] = false;
                }
            }
        }
    }
    FactoredMdp::from_table(spec.num_states, space, spec.gamma, 0, outcomes, Some(feasible))
}

/// Samples dims with `levels` components, each in `1..=max_width`.
pub fn random_dims<R: Rng + ?Sized>(rng: &mut R, levels: usize, max_width: usize) -> Vec<usize> {
    (0..levels).map(|_| rng.gen_range(1..=max_width)).collect()
}
