use serde::{Deserialize, Serialize};

use crate::blockworld::{ActionMasks, Observation};

/// One original-environment step: `(s, a1..ak, s', r, done)` plus the
/// feasibility masks needed to maximize at `s` and `s'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs: Observation,
    pub masks: ActionMasks,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_obs: Option<Observation>,
    pub next_masks: Option<ActionMasks>,
    pub done: bool,
    pub expert: bool,
}
