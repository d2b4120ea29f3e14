//! Grid block-construction simulator with heightmap observations, sparse goal
//! reward and strictly alternating pick/place dynamics.

mod env;
mod goal;
mod shape;
mod state;
pub mod tasks;

pub use env::{ActionLayout, ActionMasks, BlockWorld, Gripper, Observation, Primitive, StepOutcome};
pub use goal::{Column, GoalSlot, GoalTemplate};
pub use shape::{center_cell, footprint, rotate_quarter, BlockSpec, ShapeId};
pub use state::{Block, BlockState, Held, Pose};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum BlockWorldError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("coordinates ({x}, {y}) are outside the {w}x{h} grid")]
    OutOfGrid { x: i64, y: i64, w: usize, h: usize },
    #[error("malformed action: {0}")]
    InvalidAction(String),
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("gripper protocol: expected a {expected} action")]
    Protocol { expected: Primitive },
    #[error("held block does not fit inside the grid at the commanded pose")]
    FootprintOutOfGrid,
    #[error("commanded height {z} is below the support surface {rest}")]
    Collision { z: i64, rest: i64 },
    #[error("no free ground pose for the dropped block")]
    NoRestingPose,
    #[error("could not place the inventory after {retries} attempts")]
    PlacementFailed { retries: usize },
    #[error("goal template does not fit the grid")]
    TemplateDoesNotFit,
}

pub type Result<T> = std::result::Result<T, BlockWorldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionMode {
    XY,
    XYT,
    XYTZ,
}

impl ActionMode {
    pub fn levels(self) -> usize {
        match self {
            ActionMode::XY => 1,
            ActionMode::XYT => 2,
            ActionMode::XYTZ => 3,
        }
    }
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::XY => "xy",
            ActionMode::XYT => "xyt",
            ActionMode::XYTZ => "xytz",
        })
    }
}

impl FromStr for ActionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(ActionMode::XY),
            "xyt" => Ok(ActionMode::XYT),
            "xytz" => Ok(ActionMode::XYTZ),
            other => Err(format!("unknown action mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWorldConfig {
    pub name: String,
    pub grid_w: usize,
    pub grid_h: usize,
    pub action_mode: ActionMode,
    /// Gripper angles are quarter turns `0..theta_count`.
    pub theta_count: usize,
    pub z_count: usize,
    pub inventory: Vec<BlockSpec>,
    pub goal: GoalTemplate,
    pub max_steps: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
    /// Side of the square crops fed to the in-hand image and the encoders.
    pub crop: usize,
}

impl BlockWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BlockWorldError::InvalidConfig(m));
        if self.grid_w < 4 || self.grid_h < 4 {
            return bad(format!("grid {}x{} is smaller than 4x4", self.grid_w, self.grid_h));
        }
        if ![1, 2, 4].contains(&self.theta_count) {
            return bad(format!("theta_count {} not in {{1, 2, 4}}", self.theta_count));
        }
        if self.action_mode == ActionMode::XY && self.theta_count != 1 {
            return bad("xy mode has a single gripper angle; set theta_count = 1".into());
        }
        if self.z_count == 0 || (self.action_mode != ActionMode::XYTZ && self.z_count != 1) {
            return bad(format!("z_count {} invalid for {} mode", self.z_count, self.action_mode));
        }
        if self.inventory.is_empty() {
            return bad("empty inventory".into());
        }
        if let Some(s) = self.inventory.iter().find(|s| !s.is_valid()) {
            return bad(format!("invalid block spec {s:?}"));
        }
        if self.max_steps < 2 * self.inventory.len() {
            return bad(format!(
                "max_steps {} is below twice the block count {}",
                self.max_steps,
                self.inventory.len()
            ));
        }
        let min_h = self.inventory.iter().map(BlockSpec::min_height).min().unwrap_or(1) as f64;
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude < min_h / 2.0) {
            return bad(format!("noise amplitude {} must lie in [0, {})", self.noise_amplitude, min_h / 2.0));
        }
        if self.crop.is_multiple_of(2) || self.crop > self.grid_w.min(self.grid_h) {
            return bad(format!("crop {} must be odd and fit the grid", self.crop));
        }
        self.goal.validate(&self.inventory)?;
        if self.goal.realizations(self.grid_w, self.grid_h).is_empty() {
            return Err(BlockWorldError::TemplateDoesNotFit);
        }
        Ok(())
    }

    pub fn layout(&self) -> ActionLayout {
        ActionLayout {
            grid_w: self.grid_w,
            grid_h: self.grid_h,
            mode: self.action_mode,
            theta_count: self.theta_count,
            z_count: self.z_count,
        }
    }

    pub fn action_dims(&self) -> Vec<usize> {
        self.layout().dims()
    }
}
