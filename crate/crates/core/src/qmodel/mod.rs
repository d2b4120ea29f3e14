//! Q-cascades: per-level value models, sequential greedy selection and the
//! n-step and 1-step training targets.

mod checkpoint;
mod gradcheck;
mod mlp;
mod model;
mod param;
mod tabular;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::{grad_check, GradCheck, REL_FLOOR};
pub use mlp::{Adam, Dense, Mlp, OptimizerConfig, OptimizerKind};
pub use model::{FlatMask, QModel, Representation};
pub use param::{ParamCascade, ParamConfig};
pub use tabular::TabularCascade;

use thiserror::Error;

use crate::blockworld::ActionMasks;
use crate::mdp::{AugmentedMdp, AugmentedState, FiniteMdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("no feasible action at level {level}")]
    NoFeasibleAction { level: usize },
    #[error("non-terminal transition without a successor observation")]
    MissingSuccessor,
    #[error("non-finite loss during gradient check")]
    NonFiniteLoss,
    #[error("prefix of length {len} is invalid for a {levels}-level cascade")]
    BadPrefix { len: usize, levels: usize },
    #[error("action {0:?} does not match the cascade dimensions")]
    BadAction(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, QError>;

/// Feasibility of each partial action at level `prefix.len()`.
pub trait LevelMask {
    fn level_mask(&self, prefix: &[usize]) -> Vec<bool>;
}

impl LevelMask for ActionMasks {
    fn level_mask(&self, prefix: &[usize]) -> Vec<bool> {
        ActionMasks::level_mask(self, prefix)
    }
}

/// Feasibility read off an augmented MDP at a base state.
pub struct AugmentedMask<'a> {
    pub mdp: &'a AugmentedMdp,
    pub base: usize,
}

impl LevelMask for AugmentedMask<'_> {
    fn level_mask(&self, prefix: &[usize]) -> Vec<bool> {
        let idx = self.mdp.index_of(&AugmentedState { base: self.base, prefix: prefix.to_vec() });
        (0..self.mdp.num_actions(idx)).map(|a| self.mdp.is_feasible(idx, a)).collect()
    }
}

/// Values of each partial action at level `prefix.len()`, conditioned on the
/// prefix. Level `i` has width `dims()[i]`.
pub trait QFunction<S: ?Sized> {
    fn dims(&self) -> &[usize];

    fn values(&self, state: &S, prefix: &[usize]) -> Vec<f64>;

    fn levels(&self) -> usize {
        self.dims().len()
    }
}

/// Differentiable (or tabular) models that accept row gradients.
pub trait Trainable<S: ?Sized>: QFunction<S> {
    /// Accumulates `d loss / d values(state, prefix)`.
    fn backward(&mut self, state: &S, prefix: &[usize], row_grad: &[f64]);
    /// Applies and clears the accumulated gradient.
    fn step(&mut self);
}

/// Applies `mask` in place, writing `-inf` on infeasible entries.
pub fn apply_mask(values: &mut [f64], mask: Option<&[bool]>) {
    if let Some(m) = mask {
        for (v, &ok) in values.iter_mut().zip(m) {
            if !ok {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Greedy {
    pub action: Vec<usize>,
    /// Masked value rows seen at each level.
    pub traces: Vec<Vec<f64>>,
    /// Value of the last chosen partial action.
    pub value: f64,
}

/// Sequential argmax through the cascade: each level maximizes over its
/// feasible entries given the prefix chosen so far, lowest index on ties.
pub fn greedy_action<S, Q>(q: &Q, state: &S, mask: Option<&dyn LevelMask>) -> Result<Greedy>
where
    S: ?Sized,
    Q: QFunction<S> + ?Sized,
{
    let k = q.levels();
    let mut action = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    let mut value = f64::NEG_INFINITY;
    for level in 0..k {
        let mut row = q.values(state, &action);
        let m = mask.map(|m| m.level_mask(&action));
        apply_mask(&mut row, m.as_deref());
        let a = crate::argmax_masked(&row, None).ok_or(QError::NoFeasibleAction { level })?;
        value = row[a];
        action.push(a);
        traces.push(row);
    }
    Ok(Greedy { action, traces, value })
}

fn masked_max<S, Q>(q: &Q, state: &S, prefix: &[usize], mask: Option<&dyn LevelMask>) -> Result<f64>
where
    S: ?Sized,
    Q: QFunction<S> + ?Sized,
{
    let mut row = q.values(state, prefix);
    let m = mask.map(|m| m.level_mask(prefix));
    apply_mask(&mut row, m.as_deref());
    let a = crate::argmax_masked(&row, None).ok_or(QError::NoFeasibleAction { level: prefix.len() })?;
    Ok(row[a])
}

/// Successor state and its feasibility, absent on terminal transitions.
pub type Successor<'a, S> = Option<(&'a S, Option<&'a dyn LevelMask>)>;

/// Shared target for every level: `r + gamma * Q_k(s', greedy prefix, .)`
/// maximized, or `r` when `done`.
pub fn n_step_target<S, Q>(target: &Q, reward: f64, gamma: f64, done: bool, next: Successor<'_, S>) -> Result<f64>
where
    S: ?Sized,
    Q: QFunction<S> + ?Sized,
{
    if done {
        return Ok(reward);
    }
    let (s, m) = next.ok_or(QError::MissingSuccessor)?;
    Ok(reward + gamma * greedy_action(target, s, m)?.value)
}

/// Per-level 1-step targets: level `i < k` bootstraps from the max of level
/// `i + 1` at the recorded prefix; level `k` from `max Q_1(s')`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_targets<S, Q>(
    target: &Q,
    state: &S,
    mask: Option<&dyn LevelMask>,
    action: &[usize],
    reward: f64,
    gamma: f64,
    done: bool,
    next: Successor<'_, S>,
) -> Result<Vec<f64>>
where
    S: ?Sized,
    Q: QFunction<S> + ?Sized,
{
    let k = target.levels();
    if action.len() != k {
        return Err(QError::BadAction(action.to_vec()));
    }
    let mut ys = Vec::with_capacity(k);
    for i in 0..k - 1 {
        ys.push(masked_max(target, state, &action[..=i], mask)?);
    }
    let last = if done {
        reward
    } else {
        let (s, m) = next.ok_or(QError::MissingSuccessor)?;
        reward + gamma * masked_max(target, s, &[], m)?
    };
    ys.push(last);
    Ok(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random::{random_dims, random_mdp, RandomMdpSpec};
    use crate::mdp::{augment, flat_qstar, value_iteration, SolverOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixed(Vec<usize>, Vec<Vec<f64>>);

    impl QFunction<()> for Fixed {
        fn dims(&self) -> &[usize] {
            &self.0
        }
        fn values(&self, _: &(), prefix: &[usize]) -> Vec<f64> {
            self.1[prefix.len()].clone()
        }
    }

    struct Rows(Vec<Vec<bool>>);

    impl LevelMask for Rows {
        fn level_mask(&self, prefix: &[usize]) -> Vec<bool> {
            self.0[prefix.len()].clone()
        }
    }

    #[test]
    fn single_level_is_plain_argmax() {
        let q = Fixed(vec![4], vec![vec![0.1, 0.7, 0.7, -1.0]]);
        let g = greedy_action(&q, &(), None).unwrap();
        assert_eq!(g.action, vec![1]);
        assert_eq!(g.value, 0.7);
    }

    #[test]
    fn masks_redirect_the_choice() {
        let q = Fixed(vec![3, 2], vec![vec![5.0, 1.0, 3.0], vec![0.0, 2.0]]);
        let m = Rows(vec![vec![false, true, true], vec![true, false]]);
        let g = greedy_action(&q, &(), Some(&m)).unwrap();
        assert_eq!(g.action, vec![2, 0]);
        assert_eq!(g.traces[0][0], f64::NEG_INFINITY);
        let none = Rows(vec![vec![false; 3], vec![true; 2]]);
        assert_eq!(greedy_action(&q, &(), Some(&none)), Err(QError::NoFeasibleAction { level: 0 }));
    }

    #[test]
    fn terminal_targets_do_not_bootstrap() {
        let q = Fixed(vec![2, 3], vec![vec![0.5, 0.25], vec![0.125, 4.0, 2.0]]);
        assert_eq!(n_step_target::<(), _>(&q, 1.0, 0.9, true, None).unwrap(), 1.0);
        let ys = one_step_targets::<(), _>(&q, &(), None, &[1, 2], 1.0, 0.9, true, None).unwrap();
        assert_eq!(ys, vec![4.0, 1.0]);
        assert_eq!(n_step_target::<(), _>(&q, 0.0, 0.9, false, None), Err(QError::MissingSuccessor));
    }

    #[test]
    fn two_level_n_step_uses_the_greedy_prefix() {
        let q = Fixed(vec![2, 3], vec![vec![0.5, 0.25], vec![0.125, 4.0, 2.0]]);
        let y = n_step_target(&q, 0.5, 0.9, false, Some((&(), None))).unwrap();
        assert!((y - (0.5 + 0.9 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn one_and_n_step_agree_for_one_level() {
        let q = Fixed(vec![3], vec![vec![0.2, 0.9, 0.4]]);
        let n = n_step_target(&q, 0.3, 0.9, false, Some((&(), None))).unwrap();
        let one = one_step_targets(&q, &(), None, &[0], 0.3, 0.9, false, Some((&(), None))).unwrap();
        assert_eq!(one, vec![n]);
    }

    #[test]
    fn max_marginal_cascade_attains_flat_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let dims = random_dims(&mut rng, 3, 4);
            let mdp = random_mdp(&mut rng, &dims, RandomMdpSpec::default()).unwrap();
            let flat = flat_qstar(&mdp, SolverOptions::default()).unwrap();
            let cascade = TabularCascade::from_flat(&flat);
            for s in 0..mdp.num_states() {
                let g = greedy_action(&cascade, &s, None).unwrap();
                let j = mdp.action_space().encode(&g.action);
                assert_eq!(flat.get(s, j), flat.max(s));
            }
        }
    }

    #[test]
    fn exact_cascade_targets_reproduce_the_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = vec![2, 3, 2];
        let mdp = random_mdp(&mut rng, &dims, RandomMdpSpec::default()).unwrap();
        let flat = flat_qstar(&mdp, SolverOptions::default()).unwrap();
        let aug = augment(mdp.clone());
        let sol = value_iteration(&aug, SolverOptions::default()).unwrap();
        let cascade = TabularCascade::from_augmented(&aug, &sol);
        for s in 0..mdp.num_states() {
            for a in mdp.action_space().iter().collect::<Vec<_>>() {
                let j = mdp.action_space().encode(&a);
                let o = mdp.outcomes(s, j)[0];
                let next = AugmentedMask { mdp: &aug, base: o.next };
                let succ = (!o.done).then_some((&o.next, Some(&next as &dyn LevelMask)));
                let y = n_step_target(&cascade, o.reward, mdp.gamma(), o.done, succ).unwrap();
                assert!((y - flat.get(s, j)).abs() < 1e-9);
                let here = AugmentedMask { mdp: &aug, base: s };
                let ys = one_step_targets(&cascade, &s, Some(&here), &a, o.reward, mdp.gamma(), o.done, succ).unwrap();
                for (i, yi) in ys.iter().enumerate() {
                    let exact = cascade.values(&s, &a[..i])[a[i]];
                    assert!((yi - exact).abs() < 1e-9, "level {i}");
                }
            }
        }
    }
}
