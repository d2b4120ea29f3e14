use super::{FactoredMdp, MdpError, ENUMERATION_CAP};

/// One weighted successor as seen by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub discount: f64,
    pub done: bool,
}

/// The view of an MDP that [`value_iteration`] needs.
pub trait FiniteMdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self, state: usize) -> usize;
    fn is_feasible(&self, state: usize, action: usize) -> bool;
    fn visit_steps(&self, state: usize, action: usize, f: &mut dyn FnMut(Step));

    /// Order in which a sweep updates states.
    fn sweep_order(&self) -> Vec<usize> {
        (0..self.num_states()).collect()
    }
}

impl FiniteMdp for FactoredMdp {
    fn num_states(&self) -> usize {
        FactoredMdp::num_states(self)
    }

    fn num_actions(&self, _state: usize) -> usize {
        self.action_space().size()
    }

    fn is_feasible(&self, state: usize, action: usize) -> bool {
        FactoredMdp::is_feasible(self, state, action)
    }

    fn visit_steps(&self, state: usize, action: usize, f: &mut dyn FnMut(Step)) {
        let gamma = self.gamma();
        for o in self.outcomes(state, action) {
            f(Step { next: o.next, prob: o.prob, reward: o.reward, discount: gamma, done: o.done });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_sweeps: 100_000 }
    }
}

/// Optimal values, action values and the greedy policy of a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    /// `q[s][a]`; infeasible actions hold `-inf`.
    pub q: Vec<Vec<f64>>,
    /// Lowest-index maximizer, `None` where no action is feasible.
    pub policy: Vec<Option<usize>>,
    /// Max-norm Bellman residual of `values`.
    pub residual: f64,
    pub sweeps: usize,
}

fn backup<M: FiniteMdp + ?Sized>(mdp: &M, values: &[f64], state: usize, action: usize) -> f64 {
    let mut total = 0.0;
    mdp.visit_steps(state, action, &mut |st| {
        let future = if st.done { 0.0 } else { st.discount * values[st.next] };
        total += st.prob * (st.reward + future);
    });
    total
}

/// Returns `(max, argmax)` over feasible entries with lowest-index ties.
fn masked_max<M: FiniteMdp + ?Sized>(mdp: &M, values: &[f64], state: usize) -> (f64, Option<usize>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for a in 0..mdp.num_actions(state) {
        if !mdp.is_feasible(state, a) {
            continue;
        }
        let q = backup(mdp, values, state, a);
        if arg.is_none() || q > best {
            best = q;
            arg = Some(a);
        }
    }
    (best, arg)
}

/// Gauss-Seidel value iteration until the Bellman residual drops below `tol`.
///
/// States without any feasible action are treated as absorbing with value 0.
pub fn value_iteration<M: FiniteMdp + ?Sized>(mdp: &M, options: SolverOptions) -> Result<Solution, MdpError> {
    if !(options.tol > 0.0) {
        return Err(MdpError::InvalidTolerance(options.tol));
    }
    let n = mdp.num_states();
    let order = mdp.sweep_order();
    let mut values = vec![0.0; n];
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut delta: f64 = 0.0;
        for &s in &order {
            let (best, arg) = masked_max(mdp, &values, s);
            let v = if arg.is_some() { best } else { 0.0 };
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        if !delta.is_finite() {
            break;
        }
        if delta < options.tol {
            residual = bellman_residual(mdp, &values);
            if residual < options.tol {
                break;
            }
        }
    }
    if !(residual < options.tol) {
        if residual.is_infinite() {
            residual = bellman_residual(mdp, &values);
        }
        return Err(MdpError::NotConverged { residual, sweeps });
    }

    let mut q = Vec::with_capacity(n);
    let mut policy = Vec::with_capacity(n);
    for s in 0..n {
        let row: Vec<f64> = (0..mdp.num_actions(s))
            .map(|a| if mdp.is_feasible(s, a) { backup(mdp, &values, s, a) } else { f64::NEG_INFINITY })
            .collect();
        policy.push(crate::argmax_masked(&row, None));
        q.push(row);
    }
    Ok(Solution { values, q, policy, residual, sweeps })
}

fn bellman_residual<M: FiniteMdp + ?Sized>(mdp: &M, values: &[f64]) -> f64 {
    (0..mdp.num_states())
        .map(|s| {
            let (best, arg) = masked_max(mdp, values, s);
            let v = if arg.is_some() { best } else { 0.0 };
            (v - values[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Exact `Q*` over joint actions of a factored MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatQ {
    pub dims: Vec<usize>,
    pub num_states: usize,
    /// Row-major `[state][joint action]`.
    pub values: Vec<f64>,
}

impl FlatQ {
    pub fn joint_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn row(&self, state: usize) -> &[f64] {
        let n = self.joint_count();
        &self.values[state * n..(state + 1) * n]
    }

    pub fn get(&self, state: usize, joint: usize) -> f64 {
        self.values[state * self.joint_count() + joint]
    }

    pub fn max(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Enumerates `Q*(s, a)` for every joint action; guarded by [`ENUMERATION_CAP`].
pub fn flat_qstar(mdp: &FactoredMdp, options: SolverOptions) -> Result<FlatQ, MdpError> {
    let entries = mdp.num_states().saturating_mul(mdp.action_space().size());
    if entries > ENUMERATION_CAP {
        return Err(MdpError::EnumerationCap { entries, cap: ENUMERATION_CAP });
    }
    let solution = value_iteration(mdp, options)?;
    Ok(FlatQ {
        dims: mdp.action_dims().to_vec(),
        num_states: mdp.num_states(),
        values: solution.q.into_iter().flatten().collect(),
    })
}
