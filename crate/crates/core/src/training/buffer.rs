use rand::seq::index;
use rand::Rng;
use std::collections::VecDeque;

use crate::transition::TransitionRecord;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<TransitionRecord>,
    expert: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, expert: bool) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(4096)), expert }
    }

    pub fn from_records(records: Vec<TransitionRecord>, capacity: usize, expert: bool) -> Self {
        let mut b = Self::new(capacity, expert);
        for r in records {
            b.push(r);
        }
        b
    }

    pub fn is_expert(&self) -> bool {
        self.expert
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest record when full.
    pub fn push(&mut self, mut record: TransitionRecord) {
        record.expert = self.expert;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(record);
    }

    pub fn get(&self, i: usize) -> &TransitionRecord {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.items.iter()
    }

    /// `min(n, len)` distinct records chosen uniformly.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, n: usize) -> Vec<&'a TransitionRecord> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::{tasks::builtin, BlockWorld};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn records(n: usize) -> Vec<TransitionRecord> {
        let mut env = BlockWorld::new(builtin("2s").unwrap()).unwrap();
        let obs = env.reset(0).unwrap();
        (0..n)
            .map(|i| TransitionRecord {
                obs: obs.clone(),
                masks: env.masks(),
                action: vec![i],
                reward: 0.0,
                next_obs: None,
                next_masks: None,
                done: true,
                expert: false,
            })
            .collect()
    }

    #[test]
    fn evicts_in_insertion_order() {
        let mut b = ReplayBuffer::new(3, false);
        for r in records(5) {
            b.push(r);
        }
        assert_eq!(b.len(), 3);
        let ids: Vec<usize> = b.iter().map(|r| r.action[0]).collect();
        assert_eq!(ids, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let b = ReplayBuffer::from_records(records(10), 100, true);
        assert!(b.iter().all(|r| r.expert));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = b.sample(&mut rng, 8);
            let mut ids: Vec<usize> = s.iter().map(|r| r.action[0]).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 8);
        }
        assert_eq!(b.sample(&mut rng, 32).len(), 10);
    }
}
