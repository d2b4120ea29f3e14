use std::collections::HashMap;
use std::hash::Hash;

use super::{QFunction, Trainable};
use crate::mdp::{AugmentedMdp, FlatQ, Solution};

/// Exact per-level tables keyed by `(state, prefix)`. Unseen rows read as
/// `init`. Rows are kept in insertion order so iteration is deterministic.
#[derive(Debug, Clone)]
pub struct TabularCascade<K> {
    dims: Vec<usize>,
    init: f64,
    lr: f64,
    weight_decay: f64,
    index: HashMap<(K, Vec<usize>), usize>,
    rows: Vec<((K, Vec<usize>), Vec<f64>)>,
    pending: Vec<(usize, Vec<f64>)>,
    pending_index: HashMap<usize, usize>,
}

impl<K: Hash + Eq + Clone> TabularCascade<K> {
    pub fn new(dims: Vec<usize>, init: f64) -> Self {
        Self {
            dims,
            init,
            lr: 1.0,
            weight_decay: 0.0,
            index: HashMap::new(),
            rows: Vec::new(),
            pending: Vec::new(),
            pending_index: HashMap::new(),
        }
    }

    pub fn with_step(mut self, lr: f64, weight_decay: f64) -> Self {
        self.lr = lr;
        self.weight_decay = weight_decay;
        self
    }

    pub fn init(&self) -> f64 {
        self.init
    }

    pub fn step_size(&self) -> (f64, f64) {
        (self.lr, self.weight_decay)
    }

    pub fn row(&self, state: &K, prefix: &[usize]) -> Option<&[f64]> {
        self.index.get(&(state.clone(), prefix.to_vec())).map(|&i| self.rows[i].1.as_slice())
    }

    pub fn set_row(&mut self, state: K, prefix: Vec<usize>, values: Vec<f64>) {
        assert_eq!(values.len(), self.dims[prefix.len()], "row width");
        let slot = self.slot(state, prefix);
        self.rows[slot].1 = values;
    }

    fn slot(&mut self, state: K, prefix: Vec<usize>) -> usize {
        let key = (state, prefix);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let width = self.dims[key.1.len()];
        self.rows.push((key.clone(), vec![self.init; width]));
        self.index.insert(key, self.rows.len() - 1);
        self.rows.len() - 1
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&K, &[usize], &[f64])> {
        self.rows.iter().map(|((k, p), v)| (k, p.as_slice(), v.as_slice()))
    }
}

impl TabularCascade<usize> {
    /// Reads every level off an exactly solved augmented MDP.
    pub fn from_augmented(aug: &AugmentedMdp, solution: &Solution) -> Self {
        let mut t = Self::new(aug.level_actions().to_vec(), 0.0);
        for (idx, s) in aug.states().enumerate() {
            t.set_row(s.base, s.prefix, solution.q[idx].clone());
        }
        t
    }

    /// Max-marginalizes a flat table: level `i` holds the best completion of
    /// each `prefix + [a]`.
    pub fn from_flat(flat: &FlatQ) -> Self {
        let dims = flat.dims.clone();
        let k = dims.len();
        let mut t = Self::new(dims.clone(), 0.0);
        for s in 0..flat.num_states {
            let row = flat.row(s);
            let mut prefixes: Vec<Vec<usize>> = vec![Vec::new()];
            for level in 0..k {
                let block: usize = dims[level + 1..].iter().product();
                let mut next = Vec::new();
                for p in &prefixes {
                    let base = p.iter().zip(&dims).fold(0, |acc, (&a, &n)| acc * n + a);
                    let values = (0..dims[level])
                        .map(|a| {
                            let start = (base * dims[level] + a) * block;
                            row[start..start + block].iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect();
                    t.set_row(s, p.clone(), values);
                    for a in 0..dims[level] {
                        let mut q = p.clone();
                        q.push(a);
                        next.push(q);
                    }
                }
                prefixes = next;
            }
        }
        t
    }
}

impl<K: Hash + Eq + Clone> QFunction<K> for TabularCascade<K> {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn values(&self, state: &K, prefix: &[usize]) -> Vec<f64> {
        match self.row(state, prefix) {
            Some(r) => r.to_vec(),
            None => vec![self.init; self.dims[prefix.len()]],
        }
    }
}

impl<K: Hash + Eq + Clone> Trainable<K> for TabularCascade<K> {
    fn backward(&mut self, state: &K, prefix: &[usize], row_grad: &[f64]) {
        let slot = self.slot(state.clone(), prefix.to_vec());
        let p = match self.pending_index.get(&slot) {
            Some(&p) => p,
            None => {
                self.pending.push((slot, vec![0.0; row_grad.len()]));
                self.pending_index.insert(slot, self.pending.len() - 1);
                self.pending.len() - 1
            }
        };
        for (g, d) in self.pending[p].1.iter_mut().zip(row_grad) {
            *g += d;
        }
    }

    fn step(&mut self) {
        for (slot, grad) in self.pending.drain(..) {
            for (v, g) in self.rows[slot].1.iter_mut().zip(&grad) {
                *v -= self.lr * (g + self.weight_decay * *v);
            }
        }
        self.pending_index.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unseen_rows_read_init() {
        let t: TabularCascade<u8> = TabularCascade::new(vec![3, 2], 0.5);
        assert_eq!(t.values(&1, &[]), vec![0.5; 3]);
        assert_eq!(t.values(&1, &[2]), vec![0.5; 2]);
    }

    #[test]
    fn gradient_step_moves_entries() {
        let mut t: TabularCascade<u8> = TabularCascade::new(vec![2], 0.0).with_step(0.5, 0.0);
        t.backward(&7, &[], &[1.0, -2.0]);
        t.backward(&7, &[], &[1.0, 0.0]);
        assert_eq!(t.values(&7, &[]), vec![0.0, 0.0]);
        t.step();
        assert_eq!(t.values(&7, &[]), vec![-1.0, 1.0]);
        t.step();
        assert_eq!(t.values(&7, &[]), vec![-1.0, 1.0]);
    }

    #[test]
    fn flat_marginals() {
        let flat = FlatQ { dims: vec![2, 2], num_states: 1, values: vec![1.0, 4.0, 3.0, 2.0] };
        let t = TabularCascade::from_flat(&flat);
        assert_eq!(t.values(&0, &[]), vec![4.0, 3.0]);
        assert_eq!(t.values(&0, &[1]), vec![3.0, 2.0]);
    }
}
