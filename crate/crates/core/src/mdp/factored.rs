use super::MdpError;

/// One possible result of taking an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub done: bool,
}

impl Outcome {
    pub fn certain(next: usize, reward: f64, done: bool) -> Self {
        Self { next, prob: 1.0, reward, done }
    }
}

/// Mixed-radix indexing of a product action space `A1 x .. x Ak`, first
/// component most significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionSpace {
    dims: Vec<usize>,
}

impl ActionSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self, MdpError> {
        if dims.is_empty() {
            return Err(MdpError::EmptyFactorization);
        }
        if let Some(level) = dims.iter().position(|&d| d == 0) {
            return Err(MdpError::ZeroDimension { level });
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    /// Number of joint actions.
    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    /// Number of distinct prefixes of the given length.
    pub fn prefix_count(&self, len: usize) -> usize {
        self.dims[..len].iter().product()
    }

    pub fn contains(&self, action: &[usize]) -> bool {
        action.len() == self.dims.len() && action.iter().zip(&self.dims).all(|(a, d)| a < d)
    }

    /// Index of a (possibly partial) prefix among prefixes of its length.
    pub fn encode_prefix(&self, prefix: &[usize]) -> usize {
        prefix.iter().zip(&self.dims).fold(0, |acc, (&a, &d)| acc * d + a)
    }

    pub fn encode(&self, action: &[usize]) -> usize {
        debug_assert!(self.contains(action));
        self.encode_prefix(action)
    }

    pub fn decode_prefix(&self, mut index: usize, len: usize) -> Vec<usize> {
        let mut out = vec![0; len];
        for i in (0..len).rev() {
            out[i] = index % self.dims[i];
            index /= self.dims[i];
        }
        out
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        self.decode_prefix(index, self.dims.len())
    }

    /// All joint actions in index order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.size()).map(|i| self.decode(i))
    }
}

/// A finite MDP whose action set is a Cartesian product of components.
///
/// Transitions are stored densely: every (state, joint action) pair has an
/// outcome distribution, and infeasible actions are flagged separately so
/// action indexing stays dense.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredMdp {
    num_states: usize,
    space: ActionSpace,
    gamma: f64,
    initial_state: usize,
    outcomes: Vec<Vec<Outcome>>,
    feasible: Vec<bool>,
}

const PROB_TOLERANCE: f64 = 1e-9;

impl FactoredMdp {
    /// Builds an MDP by querying `transition` for every state and joint action.
    pub fn new<F>(
        num_states: usize,
        action_dims: Vec<usize>,
        gamma: f64,
        initial_state: usize,
        mut transition: F,
    ) -> Result<Self, MdpError>
    where
        F: FnMut(usize, &[usize]) -> Vec<Outcome>,
    {
        let space = ActionSpace::new(action_dims)?;
        let n = space.size();
        let mut outcomes = Vec::with_capacity(num_states * n);
        for s in 0..num_states {
            for j in 0..n {
                outcomes.push(transition(s, &space.decode(j)));
            }
        }
        Self::from_table(num_states, space, gamma, initial_state, outcomes, None)
    }

    /// Deterministic convenience constructor: `transition` returns `(next, reward, done)`.
    pub fn deterministic<F>(
        num_states: usize,
        action_dims: Vec<usize>,
        gamma: f64,
        initial_state: usize,
        mut transition: F,
    ) -> Result<Self, MdpError>
    where
        F: FnMut(usize, &[usize]) -> (usize, f64, bool),
    {
        Self::new(num_states, action_dims, gamma, initial_state, |s, a| {
            let (next, reward, done) = transition(s, a);
            vec![Outcome::certain(next, reward, done)]
        })
    }

    pub(crate) fn from_table(
        num_states: usize,
        space: ActionSpace,
        gamma: f64,
        initial_state: usize,
        outcomes: Vec<Vec<Outcome>>,
        feasible: Option<Vec<bool>>,
    ) -> Result<Self, MdpError> {
        if num_states == 0 {
            return Err(MdpError::NoStates);
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(MdpError::InvalidGamma(gamma));
        }
        if initial_state >= num_states {
            return Err(MdpError::StateOutOfRange { state: initial_state, num_states });
        }
        let n = space.size();
        debug_assert_eq!(outcomes.len(), num_states * n);
        for (idx, dist) in outcomes.iter().enumerate() {
            let (state, action) = (idx / n, idx % n);
            let mut total = 0.0;
            for o in dist {
                if o.next >= num_states {
                    return Err(MdpError::StateOutOfRange { state: o.next, num_states });
                }
                if !o.reward.is_finite() {
                    return Err(MdpError::NonFiniteReward { state, action });
                }
                if !(o.prob >= 0.0) {
                    return Err(MdpError::BadDistribution { state, action, total: o.prob });
                }
                total += o.prob;
            }
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return Err(MdpError::BadDistribution { state, action, total });
            }
        }
        let feasible = feasible.unwrap_or_else(|| vec![true; num_states * n]);
        Ok(Self { num_states, space, gamma, initial_state, outcomes, feasible })
    }

    /// Marks joint actions for which `predicate(state, action)` is false as infeasible.
    pub fn with_feasibility<P>(mut self, mut predicate: P) -> Self
    where
        P: FnMut(usize, &[usize]) -> bool,
    {
        let n = self.space.size();
        for s in 0..self.num_states {
            for j in 0..n {
                self.feasible[s * n + j] = predicate(s, &self.space.decode(j));
            }
        }
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn action_dims(&self) -> &[usize] {
        self.space.dims()
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn outcomes(&self, state: usize, joint: usize) -> &[Outcome] {
        &self.outcomes[state * self.space.size() + joint]
    }

    pub fn outcomes_for(&self, state: usize, action: &[usize]) -> Result<&[Outcome], MdpError> {
        self.check(state, action)?;
        Ok(self.outcomes(state, self.space.encode(action)))
    }

    pub fn is_feasible(&self, state: usize, joint: usize) -> bool {
        self.feasible[state * self.space.size() + joint]
    }

    pub fn is_deterministic(&self) -> bool {
        self.outcomes.iter().all(|d| d.len() == 1)
    }

    fn check(&self, state: usize, action: &[usize]) -> Result<(), MdpError> {
        if state >= self.num_states {
            return Err(MdpError::StateOutOfRange { state, num_states: self.num_states });
        }
        if !self.space.contains(action) {
            return Err(MdpError::InvalidAction { action: action.to_vec(), dims: self.space.dims().to_vec() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_radix_round_trip() {
        let space = ActionSpace::new(vec![2, 3, 4]).unwrap();
        assert_eq!(space.size(), 24);
        for j in 0..24 {
            assert_eq!(space.encode(&space.decode(j)), j);
        }
        assert_eq!(space.encode(&[1, 0, 0]), 12);
        assert_eq!(space.encode_prefix(&[1, 2]), 5);
        assert_eq!(space.prefix_count(2), 6);
    }

    #[test]
    fn rejects_degenerate_factorizations() {
        let t = |_: usize, _: &[usize]| (0, 0.0, false);
        assert_eq!(FactoredMdp::deterministic(1, vec![], 0.9, 0, t).unwrap_err(), MdpError::EmptyFactorization);
        assert_eq!(
            FactoredMdp::deterministic(1, vec![2, 0], 0.9, 0, t).unwrap_err(),
            MdpError::ZeroDimension { level: 1 }
        );
        assert!(matches!(FactoredMdp::deterministic(1, vec![2], 0.0, 0, t), Err(MdpError::InvalidGamma(_))));
        assert!(matches!(FactoredMdp::deterministic(1, vec![2], 1.5, 0, t), Err(MdpError::InvalidGamma(_))));
        assert!(FactoredMdp::deterministic(1, vec![2], 1.0, 0, t).is_ok());
    }

    #[test]
    fn rejects_bad_distributions() {
        let err =
            FactoredMdp::new(2, vec![1], 0.9, 0, |_, _| vec![Outcome { next: 0, prob: 0.5, reward: 0.0, done: false }])
                .unwrap_err();
        assert!(matches!(err, MdpError::BadDistribution { .. }));
        let err = FactoredMdp::deterministic(2, vec![1], 0.9, 0, |_, _| (5, 0.0, false)).unwrap_err();
        assert!(matches!(err, MdpError::StateOutOfRange { state: 5, .. }));
    }

    #[test]
    fn invalid_action_tuple_is_reported() {
        let mdp = FactoredMdp::deterministic(2, vec![2, 2], 0.9, 0, |s, _| (s, 0.0, false)).unwrap();
        assert!(mdp.outcomes_for(0, &[1, 1]).is_ok());
        assert!(matches!(mdp.outcomes_for(0, &[2, 0]), Err(MdpError::InvalidAction { .. })));
        assert!(matches!(mdp.outcomes_for(0, &[1]), Err(MdpError::InvalidAction { .. })));
    }
}
