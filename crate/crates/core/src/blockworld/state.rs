use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::shape::{center_cell, footprint, rotate_quarter, ShapeId};
use crate::grid::Grid;

/// Anchor cell, bottom level and orientation (quarter turns) of a placed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub x: i64,
    pub y: i64,
    pub z: i64,
    pub theta: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    pub shape: ShapeId,
    pub w: usize,
    pub d: usize,
    pub height: usize,
    /// `None` while the block is in the gripper.
    pub pose: Option<Pose>,
    pub supported_by: Vec<usize>,
}

impl Block {
    pub fn cells(&self) -> Vec<(i64, i64)> {
        let p = self.pose.expect("block is not placed");
        footprint(p.x, p.y, self.w, self.d, p.theta)
    }

    pub fn top(&self) -> i64 {
        self.pose.map_or(0, |p| p.z + self.height as i64)
    }

    pub fn volume(&self) -> usize {
        self.w * self.d * self.height
    }

    /// Square footprints look the same under any quarter turn.
    pub fn is_square(&self) -> bool {
        self.w == self.d
    }
}

/// The block in the gripper and how it was grasped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Held {
    pub block: usize,
    /// Gripper angle of the pick, in quarter turns.
    pub grasp_quarters: usize,
    /// Block anchor relative to the grasp cell at pick time.
    pub anchor_offset: (i64, i64),
    /// Block orientation at pick time.
    pub orientation: usize,
}

impl Held {
    /// Anchor and orientation of the block if released at `(x, y)` with the
    /// gripper at `quarters`.
    pub fn release_pose(&self, x: i64, y: i64, quarters: usize) -> (i64, i64, usize) {
        let delta = (quarters + 4 - self.grasp_quarters % 4) % 4;
        let (ox, oy) = rotate_quarter(self.anchor_offset.0, self.anchor_offset.1, delta);
        (x + ox, y + oy, (self.orientation + delta) % 4)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockState {
    pub blocks: Vec<Block>,
    pub holding: Option<Held>,
    pub steps_taken: usize,
}

impl BlockState {
    pub fn placed(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.pose.is_some())
    }

    pub fn heightmap(&self, w: usize, h: usize) -> Grid {
        let mut g = Grid::zeros(w, h);
        for b in self.placed() {
            let top = b.top() as i32;
            for (x, y) in b.cells() {
                if g.contains(x, y) && g.get(x as usize, y as usize) < top {
                    g.set(x as usize, y as usize, top);
                }
            }
        }
        g
    }

    /// Highest block covering a cell.
    pub fn top_block_at(&self, x: i64, y: i64) -> Option<usize> {
        self.placed()
            .filter(|b| b.cells().contains(&(x, y)))
            .max_by_key(|b| (b.top(), std::cmp::Reverse(b.id)))
            .map(|b| b.id)
    }

    /// Top surface under `cells`, ignoring `exclude`.
    pub fn rest_height(&self, cells: &[(i64, i64)], exclude: Option<usize>) -> i64 {
        self.placed()
            .filter(|b| Some(b.id) != exclude)
            .filter(|b| b.cells().iter().any(|c| cells.contains(c)))
            .map(Block::top)
            .max()
            .unwrap_or(0)
    }

    /// Blocks whose top is exactly at `z` under any of `cells`, together with
    /// the covered cells that count as support (roofs do not support).
    fn support_at(&self, cells: &[(i64, i64)], z: i64, exclude: Option<usize>) -> (Vec<usize>, Vec<(i64, i64)>) {
        let mut ids = Vec::new();
        let mut supported = Vec::new();
        for b in self.placed().filter(|b| Some(b.id) != exclude && b.top() == z) {
            let mut used = false;
            for c in b.cells() {
                if cells.contains(&c) && b.shape.supports_above() {
                    supported.push(c);
                    used = true;
                }
            }
            if used {
                ids.push(b.id);
            }
        }
        supported.sort_unstable();
        supported.dedup();
        (ids, supported)
    }

    /// Stability rule: a block resting at level `z` over `cells` needs at least
    /// half its footprint supported at that level, including the centre cell.
    /// Returns the supporting block ids on success.
    pub fn stable_support(&self, cells: &[(i64, i64)], z: i64, exclude: Option<usize>) -> Option<Vec<usize>> {
        if z == 0 {
            return Some(Vec::new());
        }
        let (ids, supported) = self.support_at(cells, z, exclude);
        let centre = center_cell(cells);
        (2 * supported.len() >= cells.len() && supported.contains(&centre)).then_some(ids)
    }

    /// Blocks resting directly on `id`.
    pub fn resting_on(&self, id: usize) -> Vec<usize> {
        let below = &self.blocks[id];
        let Some(_) = below.pose else { return Vec::new() };
        let cells = below.cells();
        let top = below.top();
        self.placed()
            .filter(|b| b.id != id && b.pose.unwrap().z == top)
            .filter(|b| b.cells().iter().any(|c| cells.contains(c)))
            .map(|b| b.id)
            .collect()
    }

    pub fn total_volume(&self) -> usize {
        self.blocks.iter().map(Block::volume).sum()
    }

    pub fn held_volume(&self) -> usize {
        self.holding.map_or(0, |h| self.blocks[h.block].volume())
    }

    /// Checks every structural invariant: blocks in-grid, no overlapping
    /// voxels, every placed block stable, holding consistent with poses.
    pub fn audit(&self, w: usize, h: usize) -> Result<(), String> {
        let mut voxels: HashMap<(i64, i64, i64), usize> = HashMap::new();
        for b in &self.blocks {
            let held = self.holding.is_some_and(|hd| hd.block == b.id);
            match (b.pose, held) {
                (None, false) => return Err(format!("block {} has no pose and is not held", b.id)),
                (Some(_), true) => return Err(format!("held block {} still has a pose", b.id)),
                _ => {}
            }
            let Some(pose) = b.pose else { continue };
            for (x, y) in b.cells() {
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    return Err(format!("block {} leaves the grid at ({x}, {y})", b.id));
                }
                for z in pose.z..b.top() {
                    if let Some(other) = voxels.insert((x, y, z), b.id) {
                        return Err(format!("blocks {} and {other} overlap at ({x}, {y}, {z})", b.id));
                    }
                }
            }
        }
        for b in self.placed() {
            let pose = b.pose.unwrap();
            if self.stable_support(&b.cells(), pose.z, Some(b.id)).is_none() {
                return Err(format!("block {} at level {} is unsupported", b.id, pose.z));
            }
        }
        Ok(())
    }
}
