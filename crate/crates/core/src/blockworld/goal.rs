use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::shape::{footprint, rotate_quarter, BlockSpec, ShapeId};
use super::state::{Block, BlockState, Pose};
use super::{BlockWorldError, Result};

/// One block of the goal pattern, relative to the pattern origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSlot {
    pub shape: ShapeId,
    pub dx: i64,
    pub dy: i64,
    pub z: i64,
    pub theta: usize,
    pub w: usize,
    pub d: usize,
    /// Required block height; `None` accepts any.
    pub height: Option<usize>,
    /// Allowed per-slot displacement in cells, on top of the global fit.
    pub tolerance: i64,
}

impl GoalSlot {
    pub fn new(shape: ShapeId, dx: i64, dy: i64, z: i64, theta: usize) -> Self {
        let (w, d, _) = shape.default_geometry();
        Self { shape, dx, dy, z, theta, w, d, height: None, tolerance: 0 }
    }

    /// Footprint after rotating the whole pattern by `r` quarter turns.
    pub fn cells(&self, r: usize) -> Vec<(i64, i64)> {
        let (ax, ay) = rotate_quarter(self.dx, self.dy, r);
        footprint(ax, ay, self.w, self.d, self.theta + r)
    }

    fn accepts(&self, b: &Block) -> bool {
        b.shape == self.shape
            && b.pose.is_some_and(|p| p.z == self.z)
            && self.height.is_none_or(|h| h == b.height)
            && b.w * b.d == self.w * self.d
    }
}

/// A cell whose levels `0..height` must all be occupied, by any blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub dx: i64,
    pub dy: i64,
    pub height: i64,
}

impl Column {
    pub fn cell(&self, r: usize) -> (i64, i64) {
        rotate_quarter(self.dx, self.dy, r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalTemplate {
    pub slots: Vec<GoalSlot>,
    pub columns: Vec<Column>,
    /// Global rotations (quarter turns) under which the pattern counts.
    pub rotations: Vec<usize>,
}

fn shift(cells: &[(i64, i64)], t: (i64, i64)) -> Vec<(i64, i64)> {
    cells.iter().map(|&(x, y)| (x + t.0, y + t.1)).collect()
}

/// Translation taking `from` onto `to` when both are the same cell set up to
/// translation. Both inputs are sorted by `(y, x)`.
fn offset_between(from: &[(i64, i64)], to: &[(i64, i64)]) -> Option<(i64, i64)> {
    if from.len() != to.len() || from.is_empty() {
        return None;
    }
    let t = (to[0].0 - from[0].0, to[0].1 - from[0].1);
    (shift(from, t) == to).then_some(t)
}

impl GoalTemplate {
    pub fn new(slots: Vec<GoalSlot>) -> Self {
        Self { slots, columns: Vec::new(), rotations: vec![0, 1, 2, 3] }
    }

    pub fn with_columns(mut self, columns: Vec<Column>) -> Self {
        self.columns = columns;
        self
    }

    /// All cells the pattern touches under rotation `r`, before translation.
    fn pattern_cells(&self, r: usize) -> Vec<(i64, i64)> {
        let mut cells: Vec<_> = self.slots.iter().flat_map(|s| s.cells(r)).collect();
        cells.extend(self.columns.iter().map(|c| c.cell(r)));
        cells
    }

    /// Every `(rotation, translation)` that keeps the pattern inside a
    /// `w x h` grid, in a fixed order.
    pub fn realizations(&self, w: usize, h: usize) -> Vec<(usize, (i64, i64))> {
        let mut out = Vec::new();
        for &r in &self.rotations {
            let cells = self.pattern_cells(r);
            if cells.is_empty() {
                continue;
            }
            let min_x = cells.iter().map(|c| c.0).min().unwrap();
            let max_x = cells.iter().map(|c| c.0).max().unwrap();
            let min_y = cells.iter().map(|c| c.1).min().unwrap();
            let max_y = cells.iter().map(|c| c.1).max().unwrap();
            for ty in -min_y..(h as i64 - max_y) {
                for tx in -min_x..(w as i64 - max_x) {
                    out.push((r, (tx, ty)));
                }
            }
        }
        out
    }

    /// Blocks for the slots plus unit filler cubes for the columns, placed
    /// under rotation `r` and translation `t`.
    pub fn instantiate(&self, r: usize, t: (i64, i64)) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut voxels = HashSet::new();
        for s in &self.slots {
            let (ax, ay) = rotate_quarter(s.dx, s.dy, r);
            let height = s.height.unwrap_or(s.shape.default_geometry().2);
            let b = Block {
                id: blocks.len(),
                shape: s.shape,
                w: s.w,
                d: s.d,
                height,
                pose: Some(Pose { x: ax + t.0, y: ay + t.1, z: s.z, theta: (s.theta + r) % 4 }),
                supported_by: Vec::new(),
            };
            for c in b.cells() {
                for z in s.z..s.z + height as i64 {
                    voxels.insert((c.0, c.1, z));
                }
            }
            blocks.push(b);
        }
        for col in &self.columns {
            let (cx, cy) = col.cell(r);
            for z in 0..col.height {
                if voxels.insert((cx + t.0, cy + t.1, z)) {
                    blocks.push(Block {
                        id: blocks.len(),
                        shape: ShapeId::Cube,
                        w: 1,
                        d: 1,
                        height: 1,
                        pose: Some(Pose { x: cx + t.0, y: cy + t.1, z, theta: 0 }),
                        supported_by: Vec::new(),
                    });
                }
            }
        }
        blocks
    }

    /// Load-time check: slots are coverable by the inventory and the pattern
    /// (columns filled with unit cubes) is stable under the simulator's rule.
    pub fn validate(&self, inventory: &[BlockSpec]) -> Result<()> {
        let bad = |m: String| Err(BlockWorldError::InvalidConfig(m));
        if self.slots.is_empty() {
            return bad("goal template has no slots".into());
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|&r| r > 3) {
            return bad("goal rotations must be a non-empty subset of 0..4".into());
        }
        if self.slots.iter().any(|s| s.w == 0 || s.d == 0 || s.z < 0 || s.tolerance < 0) {
            return bad("malformed goal slot".into());
        }
        let mut pool: Vec<&BlockSpec> = inventory.iter().collect();
        for s in &self.slots {
            let pos = pool.iter().position(|b| {
                b.shape == s.shape && b.w * b.d == s.w * s.d && s.height.is_none_or(|h| b.heights.contains(&h))
            });
            match pos {
                Some(i) => {
                    pool.remove(i);
                }
                None => return bad(format!("inventory has no block for goal slot {s:?}")),
            }
        }
        let need: i64 = self.columns.iter().map(|c| c.height).sum();
        let fill: i64 = pool
            .iter()
            .filter(|b| b.w == 1 && b.d == 1 && b.shape.supports_above())
            .map(|b| b.min_height() as i64)
            .sum();
        if need > fill {
            return bad(format!("columns need {need} levels, inventory leftovers provide {fill}"));
        }
        let blocks = self.instantiate(0, (0, 0));
        let cells: Vec<_> = blocks.iter().flat_map(Block::cells).collect();
        let min_x = cells.iter().map(|c| c.0).min().unwrap();
        let min_y = cells.iter().map(|c| c.1).min().unwrap();
        let max_x = cells.iter().map(|c| c.0).max().unwrap();
        let max_y = cells.iter().map(|c| c.1).max().unwrap();
        let blocks = self.instantiate(0, (-min_x, -min_y));
        let state = BlockState { blocks, holding: None, steps_taken: 0 };
        state
            .audit((max_x - min_x + 1) as usize, (max_y - min_y + 1) as usize)
            .map_err(|m| BlockWorldError::InvalidConfig(format!("goal template is unstable: {m}")))?;
        if !self.matches(&state) {
            return bad("goal template does not match its own instantiation".into());
        }
        Ok(())
    }

    /// True when the placed blocks contain the pattern, up to translation and
    /// the allowed global rotations. Extra blocks are ignored.
    pub fn matches(&self, state: &BlockState) -> bool {
        let placed: Vec<&Block> = state.placed().collect();
        let mut voxels = HashSet::new();
        for b in &placed {
            let z0 = b.pose.unwrap().z;
            for c in b.cells() {
                for z in z0..b.top() {
                    voxels.insert((c.0, c.1, z));
                }
            }
        }
        let cells: Vec<Vec<(i64, i64)>> = placed.iter().map(|b| b.cells()).collect();
        for &r in &self.rotations {
            let slot_cells: Vec<Vec<(i64, i64)>> = self.slots.iter().map(|s| s.cells(r)).collect();
            let first = &self.slots[0];
            for (i, b) in placed.iter().enumerate() {
                if !first.accepts(b) {
                    continue;
                }
                let Some(t) = offset_between(&slot_cells[0], &cells[i]) else { continue };
                let columns_ok = self.columns.iter().all(|c| {
                    let (cx, cy) = c.cell(r);
                    (0..c.height).all(|z| voxels.contains(&(cx + t.0, cy + t.1, z)))
                });
                if !columns_ok {
                    continue;
                }
                let mut used = vec![false; placed.len()];
                used[i] = true;
                if self.assign(1, t, &slot_cells, &placed, &cells, &mut used) {
                    return true;
                }
            }
        }
        false
    }

    fn assign(
        &self,
        slot: usize,
        t: (i64, i64),
        slot_cells: &[Vec<(i64, i64)>],
        placed: &[&Block],
        cells: &[Vec<(i64, i64)>],
        used: &mut [bool],
    ) -> bool {
        if slot == self.slots.len() {
            return true;
        }
        let s = &self.slots[slot];
        let target = shift(&slot_cells[slot], t);
        for (i, b) in placed.iter().enumerate() {
            if used[i] || !s.accepts(b) {
                continue;
            }
            let Some(e) = offset_between(&target, &cells[i]) else { continue };
            if e.0.abs() > s.tolerance || e.1.abs() > s.tolerance {
                continue;
            }
            used[i] = true;
            if self.assign(slot + 1, t, slot_cells, placed, cells, used) {
                return true;
            }
            used[i] = false;
        }
        false
    }
}
