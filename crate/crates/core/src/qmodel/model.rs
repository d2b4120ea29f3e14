use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::{LevelMask, ParamCascade, QFunction, TabularCascade, Trainable};
use crate::blockworld::{ActionMasks, Observation};
use crate::mdp::{ActionSpace, ENUMERATION_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    /// Parametric per-level cascade.
    Cascade,
    /// Exact per-level tables over observed states.
    Tabular,
    /// One table over joint action tuples, no factorization.
    FlatTabular,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Cascade => "cascade",
            Representation::Tabular => "tabular",
            Representation::FlatTabular => "flat-tabular",
        })
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cascade" => Ok(Representation::Cascade),
            "tabular" => Ok(Representation::Tabular),
            "flat-tabular" | "flat" => Ok(Representation::FlatTabular),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}

/// Joint-action feasibility for the flat representation.
pub struct FlatMask {
    mask: Vec<bool>,
}

impl FlatMask {
    pub fn new(masks: &ActionMasks, space: &ActionSpace) -> Self {
        let mut mask = vec![false; space.size()];
        for t in masks.feasible_tuples() {
            mask[space.encode(&t)] = true;
        }
        Self { mask }
    }
}

impl LevelMask for FlatMask {
    fn level_mask(&self, prefix: &[usize]) -> Vec<bool> {
        assert!(prefix.is_empty(), "flat tables have a single level");
        self.mask.clone()
    }
}

/// A value model over block-world observations in one of the three
/// representations. Actions and masks are translated to model space by
/// [`QModel::to_model_action`] and [`QModel::mask`].
#[derive(Debug, Clone)]
pub enum QModel {
    Cascade(ParamCascade),
    Tabular(TabularCascade<Observation>),
    Flat { table: TabularCascade<Observation>, space: ActionSpace },
}

impl QModel {
    /// Flat table over `dims`; rejected when the joint space reaches the
    /// enumeration cap.
    pub fn flat(dims: Vec<usize>, init: f64, lr: f64, weight_decay: f64) -> Result<Self, String> {
        let space = ActionSpace::new(dims).map_err(|e| e.to_string())?;
        if space.size() >= ENUMERATION_CAP {
            return Err(format!(
                "flat action space of {} tuples is not below the enumeration cap {ENUMERATION_CAP}",
                space.size()
            ));
        }
        let table = TabularCascade::new(vec![space.size()], init).with_step(lr, weight_decay);
        Ok(QModel::Flat { table, space })
    }

    pub fn representation(&self) -> Representation {
        match self {
            QModel::Cascade(_) => Representation::Cascade,
            QModel::Tabular(_) => Representation::Tabular,
            QModel::Flat { .. } => Representation::FlatTabular,
        }
    }

    pub fn to_model_action(&self, tuple: &[usize]) -> Vec<usize> {
        match self {
            QModel::Flat { space, .. } => vec![space.encode(tuple)],
            _ => tuple.to_vec(),
        }
    }

    pub fn to_env_action(&self, action: &[usize]) -> Vec<usize> {
        match self {
            QModel::Flat { space, .. } => space.decode(action[0]),
            _ => action.to_vec(),
        }
    }

    pub fn mask<'a>(&self, masks: &'a ActionMasks) -> Box<dyn LevelMask + 'a> {
        match self {
            QModel::Flat { space, .. } => Box::new(FlatMask::new(masks, space)),
            _ => Box::new(masks.clone()),
        }
    }
}

impl QFunction<Observation> for QModel {
    fn dims(&self) -> &[usize] {
        match self {
            QModel::Cascade(m) => m.dims(),
            QModel::Tabular(t) => t.dims(),
            QModel::Flat { table, .. } => table.dims(),
        }
    }

    fn values(&self, state: &Observation, prefix: &[usize]) -> Vec<f64> {
        match self {
            QModel::Cascade(m) => m.values(state, prefix),
            QModel::Tabular(t) => t.values(state, prefix),
            QModel::Flat { table, .. } => table.values(state, prefix),
        }
    }
}

impl Trainable<Observation> for QModel {
    fn backward(&mut self, state: &Observation, prefix: &[usize], row_grad: &[f64]) {
        match self {
            QModel::Cascade(m) => m.backward(state, prefix, row_grad),
            QModel::Tabular(t) => t.backward(state, prefix, row_grad),
            QModel::Flat { table, .. } => table.backward(state, prefix, row_grad),
        }
    }

    fn step(&mut self) {
        match self {
            QModel::Cascade(m) => m.step(),
            QModel::Tabular(t) => t.step(),
            QModel::Flat { table, .. } => table.step(),
        }
    }
}
