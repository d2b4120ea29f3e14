use super::{FactoredMdp, FiniteMdp, Outcome, Step};

/// A base state together with the partial actions already chosen for it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentedState {
    pub base: usize,
    pub prefix: Vec<usize>,
}

impl AugmentedState {
    pub fn base(base: usize) -> Self {
        Self { base, prefix: Vec::new() }
    }

    /// Cascade level (0-based) whose partial action is chosen next.
    pub fn level(&self) -> usize {
        self.prefix.len()
    }
}

/// The augmented-state MDP: `S_i = S x A1 x .. x A(i-1)` for each level `i`.
///
/// Augmented state indices are laid out level by level; level 0 coincides
/// with the source state indices.
#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    source: FactoredMdp,
    offsets: Vec<usize>,
    /// `feasible[level][local index * |A_level| + a]`
    feasible: Vec<Vec<bool>>,
}

/// Transforms a factored MDP into its augmented-state equivalent.
pub fn augment(mdp: FactoredMdp) -> AugmentedMdp {
    let space = mdp.action_space().clone();
    let k = space.levels();
    let n_states = mdp.num_states();
    let mut offsets = Vec::with_capacity(k + 1);
    let mut total = 0;
    for level in 0..k {
        offsets.push(total);
        total += n_states * space.prefix_count(level);
    }
    offsets.push(total);

    // Level k-1 feasibility is the source feasibility; shallower levels are
    // feasible iff some completion is.
    let joint = space.size();
    let mut feasible = vec![Vec::new(); k];
    feasible[k - 1] = (0..n_states * joint).map(|i| mdp.is_feasible(i / joint, i % joint)).collect();
    for level in (0..k - 1).rev() {
        let width = space.dims()[level];
        let child_width = space.dims()[level + 1];
        let rows = n_states * space.prefix_count(level);
        let mut table = vec![false; rows * width];
        for (i, slot) in table.iter_mut().enumerate() {
            let child_row = i; // (state, prefix, a) flattens to the child's local index
            let start = child_row * child_width;
            *slot = feasible[level + 1][start..start + child_width].iter().any(|&f| f);
        }
        feasible[level] = table;
    }

    AugmentedMdp { source: mdp, offsets, feasible }
}

impl AugmentedMdp {
    pub fn source(&self) -> &FactoredMdp {
        &self.source
    }

    pub fn levels(&self) -> usize {
        self.source.action_dims().len()
    }

    /// Number of augmented states at each level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of partial actions available at each level.
    pub fn level_actions(&self) -> &[usize] {
        self.source.action_dims()
    }

    pub fn num_augmented_states(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn index_of(&self, state: &AugmentedState) -> usize {
        let level = state.prefix.len();
        debug_assert!(level < self.levels());
        let space = self.source.action_space();
        self.offsets[level] + state.base * space.prefix_count(level) + space.encode_prefix(&state.prefix)
    }

    pub fn state(&self, index: usize) -> AugmentedState {
        let level = self.level_of(index);
        let space = self.source.action_space();
        let local = index - self.offsets[level];
        let per_base = space.prefix_count(level);
        AugmentedState { base: local / per_base, prefix: space.decode_prefix(local % per_base, level) }
    }

    pub fn level_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index) - 1
    }

    /// All augmented states in index order.
    pub fn states(&self) -> impl Iterator<Item = AugmentedState> + '_ {
        (0..self.num_augmented_states()).map(|i| self.state(i))
    }

    /// Follows the chain of partial actions from a base state and returns the
    /// per-transition (reward, discount) pairs together with the final
    /// source-level outcome distribution.
    pub fn compose(&self, base: usize, action: &[usize]) -> (Vec<(f64, f64)>, Vec<Outcome>) {
        let k = self.levels();
        assert_eq!(action.len(), k);
        let mut state = AugmentedState::base(base);
        let mut trace = Vec::with_capacity(k);
        let mut finals = Vec::new();
        for &a in action {
            let idx = self.index_of(&state);
            let mut steps = Vec::new();
            self.visit_steps(idx, a, &mut |st| steps.push(st));
            if state.level() + 1 < k {
                let st = steps[0];
                trace.push((st.reward, st.discount));
                state = self.state(st.next);
            } else {
                trace.push((steps[0].reward, steps[0].discount));
                finals = steps
                    .iter()
                    .map(|st| Outcome {
                        next: self.state(st.next).base,
                        prob: st.prob,
                        reward: st.reward,
                        done: st.done,
                    })
                    .collect();
            }
        }
        (trace, finals)
    }
}

impl FiniteMdp for AugmentedMdp {
    fn num_states(&self) -> usize {
        self.num_augmented_states()
    }

    fn num_actions(&self, state: usize) -> usize {
        self.source.action_dims()[self.level_of(state)]
    }

    fn is_feasible(&self, state: usize, action: usize) -> bool {
        let level = self.level_of(state);
        let width = self.source.action_dims()[level];
        self.feasible[level][(state - self.offsets[level]) * width + action]
    }

    fn visit_steps(&self, state: usize, action: usize, f: &mut dyn FnMut(Step)) {
        let level = self.level_of(state);
        let k = self.levels();
        let local = state - self.offsets[level];
        if level + 1 < k {
            // (s, a1..ai) --a(i+1)--> (s, a1..a(i+1)): reward 0, discount 1.
            let width = self.source.action_dims()[level];
            f(Step {
                next: self.offsets[level + 1] + local * width + action,
                prob: 1.0,
                reward: 0.0,
                discount: 1.0,
                done: false,
            });
        } else {
            let joint_count = self.source.action_space().size();
            let per_base = joint_count / self.source.action_dims()[k - 1];
            let base = local / per_base;
            let joint = (local % per_base) * self.source.action_dims()[k - 1] + action;
            let gamma = self.source.gamma();
            for o in self.source.outcomes(base, joint) {
                f(Step { next: o.next, prob: o.prob, reward: o.reward, discount: gamma, done: o.done });
            }
        }
    }

    /// Deepest level first, so one sweep backs a value all the way up to the
    /// base states.
    fn sweep_order(&self) -> Vec<usize> {
        (0..self.levels()).rev().flat_map(|level| self.offsets[level]..self.offsets[level + 1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_mdp() -> FactoredMdp {
        FactoredMdp::deterministic(3, vec![2, 2, 2], 0.9, 0, |s, a| {
            let j = a[0] * 4 + a[1] * 2 + a[2];
            ((s + j) % 3, j as f64 / 8.0, j == 7)
        })
        .unwrap()
    }

    #[test]
    fn counts_states_per_level() {
        let aug = augment(chain_mdp());
        assert_eq!(aug.level_sizes(), vec![3, 6, 12]);
        assert_eq!(aug.num_augmented_states(), 21);
        assert_eq!(aug.level_actions(), &[2, 2, 2]);
    }

    #[test]
    fn index_round_trip() {
        let aug = augment(chain_mdp());
        for i in 0..aug.num_augmented_states() {
            let s = aug.state(i);
            assert!(s.prefix.len() < 3);
            assert_eq!(aug.index_of(&s), i);
        }
        assert_eq!(aug.index_of(&AugmentedState::base(2)), 2);
    }

    #[test]
    fn fig3_chain_rewards_and_discounts() {
        let mdp = chain_mdp();
        let aug = augment(mdp.clone());
        let (trace, finals) = aug.compose(1, &[1, 0, 1]);
        let src = mdp.outcomes_for(1, &[1, 0, 1]).unwrap();
        assert_eq!(trace, vec![(0.0, 1.0), (0.0, 1.0), (src[0].reward, 0.9)]);
        assert_eq!(finals, src.to_vec());
    }

    #[test]
    fn single_level_is_isomorphic() {
        let mdp = FactoredMdp::deterministic(4, vec![3], 0.8, 0, |s, a| ((s + a[0]) % 4, a[0] as f64, false)).unwrap();
        let aug = augment(mdp.clone());
        assert_eq!(aug.num_augmented_states(), 4);
        for s in 0..4 {
            for a in 0..3 {
                let mut steps = Vec::new();
                aug.visit_steps(s, a, &mut |st| steps.push(st));
                let o = mdp.outcomes(s, a)[0];
                assert_eq!(steps, vec![Step { next: o.next, prob: 1.0, reward: o.reward, discount: 0.8, done: false }]);
            }
        }
    }

    #[test]
    fn feasibility_propagates_to_prefixes() {
        let mdp = chain_mdp().with_feasibility(|_, a| a[0] == 1 && a[2] == 0);
        let aug = augment(mdp);
        let root = aug.index_of(&AugmentedState::base(0));
        assert!(!aug.is_feasible(root, 0));
        assert!(aug.is_feasible(root, 1));
        let mid = aug.index_of(&AugmentedState { base: 0, prefix: vec![1] });
        assert!(aug.is_feasible(mid, 0) && aug.is_feasible(mid, 1));
        let deep = aug.index_of(&AugmentedState { base: 0, prefix: vec![1, 1] });
        assert!(aug.is_feasible(deep, 0) && !aug.is_feasible(deep, 1));
    }
}
