use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use super::shape::{footprint, BlockSpec};
use super::state::{Block, BlockState, Held, Pose};
use super::{ActionMode, BlockWorldConfig, BlockWorldError, Result};
use crate::encoding::{in_hand_image, zero_planes, CropSpec, PartialPose, Planes, ProjectionMode};
use crate::grid::Grid;

const RESET_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    Pick,
    Place,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Pick => "pick",
            Primitive::Place => "place",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gripper {
    Open,
    Holding,
}

impl Gripper {
    /// Head selector: 0 for pick, 1 for place.
    pub fn bit(self) -> usize {
        match self {
            Gripper::Open => 0,
            Gripper::Holding => 1,
        }
    }

    pub fn primitive(self) -> Primitive {
        match self {
            Gripper::Open => Primitive::Pick,
            Gripper::Holding => Primitive::Place,
        }
    }
}

/// How action tuples map onto gripper poses. Level 0 is the cell
/// `y * grid_w + x`, level 1 the angle in quarter turns, level 2 the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionLayout {
    pub grid_w: usize,
    pub grid_h: usize,
    pub mode: ActionMode,
    pub theta_count: usize,
    pub z_count: usize,
}

impl ActionLayout {
    pub fn dims(&self) -> Vec<usize> {
        let cells = self.grid_w * self.grid_h;
        match self.mode {
            ActionMode::XY => vec![cells],
            ActionMode::XYT => vec![cells, self.theta_count],
            ActionMode::XYTZ => vec![cells, self.theta_count, self.z_count],
        }
    }

    pub fn levels(&self) -> usize {
        self.mode.levels()
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.grid_w + x
    }

    pub fn xy(&self, cell: usize) -> (usize, usize) {
        (cell % self.grid_w, cell / self.grid_w)
    }

    pub fn quarters(&self, tuple: &[usize]) -> usize {
        tuple.get(1).copied().unwrap_or(0)
    }

    pub fn z(&self, tuple: &[usize]) -> Option<i64> {
        tuple.get(2).map(|&z| z as i64)
    }

    /// Builds a tuple from pose components, dropping the unused ones.
    pub fn tuple(&self, x: usize, y: usize, quarters: usize, z: i64) -> Vec<usize> {
        let mut t = vec![self.cell_index(x, y)];
        if self.levels() >= 2 {
            t.push(quarters);
        }
        if self.levels() >= 3 {
            t.push(z.max(0) as usize);
        }
        t
    }

    pub fn check(&self, tuple: &[usize]) -> Result<()> {
        if tuple.len() != self.levels() {
            return Err(BlockWorldError::InvalidAction(format!(
                "expected {} components, got {}",
                self.levels(),
                tuple.len()
            )));
        }
        if tuple[0] >= self.grid_w * self.grid_h {
            return Err(BlockWorldError::OutOfGrid {
                x: (tuple[0] % self.grid_w) as i64,
                y: (tuple[0] / self.grid_w) as i64,
                w: self.grid_w,
                h: self.grid_h,
            });
        }
        for (i, (&a, &n)) in tuple.iter().zip(self.dims().iter()).enumerate().skip(1) {
            if a >= n {
                return Err(BlockWorldError::InvalidAction(format!("component {i} = {a} exceeds {n}")));
            }
        }
        Ok(())
    }
}

/// Geometry of the block in the gripper, enough to evaluate place masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeldShape {
    pub w: usize,
    pub d: usize,
    pub held: Held,
}

impl HeldShape {
    pub fn cells_at(&self, x: i64, y: i64, quarters: usize) -> Vec<(i64, i64)> {
        let (ax, ay, theta) = self.held.release_pose(x, y, quarters);
        footprint(ax, ay, self.w, self.d, theta)
    }
}

/// Per-level feasibility, derived from the clean heightmap and the held
/// block. Picks are feasible on occupied cells (any angle and height);
/// places where the held block fits in the grid and, with a height
/// component, not below the support surface.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMasks {
    pub layout: ActionLayout,
    pub heightmap: Grid,
    pub held: Option<HeldShape>,
}

impl ActionMasks {
    pub fn primitive(&self) -> Primitive {
        if self.held.is_some() {
            Primitive::Place
        } else {
            Primitive::Pick
        }
    }

    fn place_rest(&self, held: &HeldShape, x: i64, y: i64, quarters: usize) -> Option<i64> {
        let cells = held.cells_at(x, y, quarters);
        if !cells.iter().all(|&(cx, cy)| self.heightmap.contains(cx, cy)) {
            return None;
        }
        Some(cells.iter().map(|&(cx, cy)| self.heightmap.get_or_zero(cx, cy) as i64).max().unwrap_or(0))
    }

    pub fn tuple_feasible(&self, tuple: &[usize]) -> bool {
        if self.layout.check(tuple).is_err() {
            return false;
        }
        let (x, y) = self.layout.xy(tuple[0]);
        match &self.held {
            None => self.heightmap.get(x, y) > 0,
            Some(h) => match self.place_rest(h, x as i64, y as i64, self.layout.quarters(tuple)) {
                None => false,
                Some(rest) => self.layout.z(tuple).is_none_or(|z| z >= rest),
            },
        }
    }

    fn completion_exists(&self, prefix: &mut Vec<usize>, dims: &[usize]) -> bool {
        if prefix.len() == dims.len() {
            return self.tuple_feasible(prefix);
        }
        for a in 0..dims[prefix.len()] {
            prefix.push(a);
            let ok = self.completion_exists(prefix, dims);
            prefix.pop();
            if ok {
                return true;
            }
        }
        false
    }

    /// Mask over level `prefix.len()`: an entry is feasible when some
    /// completion of `prefix + [a]` is a feasible tuple.
    pub fn level_mask(&self, prefix: &[usize]) -> Vec<bool> {
        let dims = self.layout.dims();
        let level = prefix.len();
        assert!(level < dims.len(), "prefix covers every level");
        if self.held.is_none() {
            if level == 0 {
                return self.heightmap.data().iter().map(|&v| v > 0).collect();
            }
            let (x, y) = self.layout.xy(prefix[0]);
            return vec![self.heightmap.get(x, y) > 0; dims[level]];
        }
        let mut p = prefix.to_vec();
        (0..dims[level])
            .map(|a| {
                p.push(a);
                let ok = self.completion_exists(&mut p, &dims);
                p.pop();
                ok
            })
            .collect()
    }

    pub fn any_feasible(&self) -> bool {
        self.level_mask(&[]).iter().any(|&m| m)
    }

    /// Every feasible full tuple, in lexicographic order.
    pub fn feasible_tuples(&self) -> Vec<Vec<usize>> {
        let dims = self.layout.dims();
        let mut out = Vec::new();
        let mut stack = vec![Vec::new()];
        while let Some(p) = stack.pop() {
            if p.len() == dims.len() {
                out.push(p);
                continue;
            }
            let mask = self.level_mask(&p);
            for a in (0..dims[p.len()]).rev().filter(|&a| mask[a]) {
                let mut q = p.clone();
                q.push(a);
                stack.push(q);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub scene: Grid,
    pub in_hand: Planes,
    pub gripper: Gripper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub primitive: Primitive,
    /// Pick grasped a block, or place came to rest where commanded.
    pub succeeded: bool,
}

#[derive(Debug, Clone)]
pub struct BlockWorld {
    config: BlockWorldConfig,
    layout: ActionLayout,
    crop: CropSpec,
    state: BlockState,
    in_hand: Planes,
    done: bool,
    noise_rng: ChaCha8Rng,
}

impl BlockWorld {
    pub fn new(config: BlockWorldConfig) -> Result<Self> {
        config.validate()?;
        let mode = if config.action_mode == ActionMode::XYTZ { ProjectionMode::Triple } else { ProjectionMode::Single };
        let crop = CropSpec::new(config.crop, mode, config.grid_w, config.grid_h)
            .ok_or_else(|| BlockWorldError::InvalidConfig(format!("bad crop {}", config.crop)))?;
        Ok(Self {
            layout: config.layout(),
            in_hand: zero_planes(crop),
            state: BlockState { blocks: Vec::new(), holding: None, steps_taken: 0 },
            done: false,
            noise_rng: ChaCha8Rng::seed_from_u64(config.seed),
            crop,
            config,
        })
    }

    pub fn config(&self) -> &BlockWorldConfig {
        &self.config
    }

    pub fn layout(&self) -> ActionLayout {
        self.layout
    }

    pub fn crop(&self) -> CropSpec {
        self.crop
    }

    pub fn state(&self) -> &BlockState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn heightmap(&self) -> Grid {
        self.state.heightmap(self.config.grid_w, self.config.grid_h)
    }

    pub fn goal_reached(&self) -> bool {
        self.config.goal.matches(&self.state)
    }

    /// Draws per-episode heights for the inventory.
    pub fn draw_blocks<R: Rng + ?Sized>(inventory: &[BlockSpec], rng: &mut R) -> Vec<Block> {
        inventory
            .iter()
            .enumerate()
            .map(|(id, spec)| Block {
                id,
                shape: spec.shape,
                w: spec.w,
                d: spec.d,
                height: spec.heights[rng.gen_range(0..spec.heights.len())],
                pose: None,
                supported_by: Vec::new(),
            })
            .collect()
    }

    /// Puts `block` flat on free ground at a uniformly random pose.
    pub fn drop_randomly<R: Rng + ?Sized>(
        state: &mut BlockState,
        block: usize,
        config: &BlockWorldConfig,
        rng: &mut R,
        retries: usize,
    ) -> Result<()> {
        let (w, d) = (state.blocks[block].w, state.blocks[block].d);
        for _ in 0..retries {
            let theta = rng.gen_range(0..config.theta_count);
            let x = rng.gen_range(0..config.grid_w) as i64;
            let y = rng.gen_range(0..config.grid_h) as i64;
            let cells = footprint(x, y, w, d, theta);
            let inside = cells
                .iter()
                .all(|&(cx, cy)| cx >= 0 && cy >= 0 && cx < config.grid_w as i64 && cy < config.grid_h as i64);
            if inside && state.rest_height(&cells, Some(block)) == 0 {
                let b = &mut state.blocks[block];
                b.pose = Some(Pose { x, y, z: 0, theta });
                b.supported_by.clear();
                return Ok(());
            }
        }
        Err(BlockWorldError::PlacementFailed { retries })
    }

    /// Starts an episode with the inventory scattered flat on the ground.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state =
            BlockState { blocks: Self::draw_blocks(&self.config.inventory, &mut rng), holding: None, steps_taken: 0 };
        for id in 0..state.blocks.len() {
            Self::drop_randomly(&mut state, id, &self.config, &mut rng, RESET_RETRIES)?;
        }
        self.noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        self.state = state;
        self.in_hand = zero_planes(self.crop);
        self.done = false;
        Ok(self.observe())
    }

    /// Starts an episode from a given open-gripper state.
    pub fn reset_to(&mut self, mut state: BlockState, seed: u64) -> Result<Observation> {
        if state.holding.is_some() {
            return Err(BlockWorldError::InvalidConfig("start state must have an open gripper".into()));
        }
        state.audit(self.config.grid_w, self.config.grid_h).map_err(BlockWorldError::InvalidConfig)?;
        state.steps_taken = 0;
        self.noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        self.state = state;
        self.in_hand = zero_planes(self.crop);
        self.done = false;
        Ok(self.observe())
    }

    pub fn gripper(&self) -> Gripper {
        if self.state.holding.is_some() {
            Gripper::Holding
        } else {
            Gripper::Open
        }
    }

    /// Current observation. Noise, when configured, perturbs the scene only.
    pub fn observe(&mut self) -> Observation {
        let mut scene = self.heightmap();
        let a = self.config.noise_amplitude;
        if a > 0.0 {
            let (w, h) = (scene.width(), scene.height());
            for y in 0..h {
                for x in 0..w {
                    let jitter = self.noise_rng.gen_range(-a..=a).round() as i32;
                    scene.set(x, y, (scene.get(x, y) + jitter).max(0));
                }
            }
        }
        Observation { scene, in_hand: self.in_hand.clone(), gripper: self.gripper() }
    }

    pub fn masks(&self) -> ActionMasks {
        ActionMasks {
            layout: self.layout,
            heightmap: self.heightmap(),
            held: self.state.holding.map(|held| {
                let b = &self.state.blocks[held.block];
                HeldShape { w: b.w, d: b.d, held }
            }),
        }
    }

    /// Steps with the primitive implied by the gripper.
    pub fn step(&mut self, tuple: &[usize]) -> Result<StepOutcome> {
        let p = self.gripper().primitive();
        self.step_primitive(p, tuple)
    }

    pub fn step_primitive(&mut self, primitive: Primitive, tuple: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(BlockWorldError::EpisodeDone);
        }
        self.layout.check(tuple)?;
        let expected = self.gripper().primitive();
        if primitive != expected {
            return Err(BlockWorldError::Protocol { expected });
        }
        let succeeded = match primitive {
            Primitive::Pick => self.pick(tuple),
            Primitive::Place => self.place(tuple)?,
        };
        self.state.steps_taken += 1;
        let reached = self.goal_reached();
        self.done = reached || self.state.steps_taken >= self.config.max_steps;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: if reached { 1.0 } else { 0.0 },
            done: self.done,
            primitive,
            succeeded,
        })
    }

    fn pick(&mut self, tuple: &[usize]) -> bool {
        let (x, y) = self.layout.xy(tuple[0]);
        let quarters = self.layout.quarters(tuple);
        let Some(id) = self.state.top_block_at(x as i64, y as i64) else {
            self.in_hand = zero_planes(self.crop);
            return false;
        };
        let b = &self.state.blocks[id];
        let pose = b.pose.unwrap();
        let aligned = b.is_square() || (quarters + 4 - pose.theta % 4).is_multiple_of(2);
        let height_ok = self.layout.z(tuple).is_none_or(|z| z == pose.z);
        if !aligned || !height_ok || !self.state.resting_on(id).is_empty() {
            self.in_hand = zero_planes(self.crop);
            return false;
        }
        let before = self.heightmap();
        self.state.holding = Some(Held {
            block: id,
            grasp_quarters: quarters,
            anchor_offset: (pose.x - x as i64, pose.y - y as i64),
            orientation: pose.theta,
        });
        let b = &mut self.state.blocks[id];
        b.pose = None;
        b.supported_by.clear();
        self.in_hand = in_hand_image(
            &before,
            PartialPose { x, y, theta: quarters as f64 * FRAC_PI_2, z: pose.z, phi: 0.0 },
            self.crop,
        );
        true
    }

    fn place(&mut self, tuple: &[usize]) -> Result<bool> {
        let held = self.state.holding.expect("place without a held block");
        let (x, y) = self.layout.xy(tuple[0]);
        let quarters = self.layout.quarters(tuple);
        let (ax, ay, theta) = held.release_pose(x as i64, y as i64, quarters);
        let (w, d) = (self.state.blocks[held.block].w, self.state.blocks[held.block].d);
        let cells = footprint(ax, ay, w, d, theta);
        let (gw, gh) = (self.config.grid_w as i64, self.config.grid_h as i64);
        if !cells.iter().all(|&(cx, cy)| cx >= 0 && cy >= 0 && cx < gw && cy < gh) {
            return Err(BlockWorldError::FootprintOutOfGrid);
        }
        let rest = self.state.rest_height(&cells, Some(held.block));
        let z = self.layout.z(tuple).unwrap_or(rest);
        if z < rest {
            return Err(BlockWorldError::Collision { z, rest });
        }
        let support = if z == rest { self.state.stable_support(&cells, z, Some(held.block)) } else { None };
        self.state.holding = None;
        self.in_hand = zero_planes(self.crop);
        match support {
            Some(ids) => {
                let b = &mut self.state.blocks[held.block];
                b.pose = Some(Pose { x: ax, y: ay, z, theta });
                b.supported_by = ids;
                Ok(true)
            }
            None => {
                let (px, py, pt) = self.nearest_ground_pose(held.block, ax, ay, theta)?;
                let b = &mut self.state.blocks[held.block];
                b.pose = Some(Pose { x: px, y: py, z: 0, theta: pt });
                b.supported_by.clear();
                Ok(false)
            }
        }
    }

    /// Closest free flat ground pose to the commanded anchor: rings of growing
    /// Chebyshev radius scanned row by row, keeping the orientation when
    /// possible.
    fn nearest_ground_pose(&self, id: usize, ax: i64, ay: i64, theta: usize) -> Result<(i64, i64, usize)> {
        let (w, d) = (self.state.blocks[id].w, self.state.blocks[id].d);
        let (gw, gh) = (self.config.grid_w as i64, self.config.grid_h as i64);
        let free = |x: i64, y: i64, t: usize| {
            let cells = footprint(x, y, w, d, t);
            cells.iter().all(|&(cx, cy)| cx >= 0 && cy >= 0 && cx < gw && cy < gh)
                && self.state.rest_height(&cells, Some(id)) == 0
        };
        let thetas: Vec<usize> = std::iter::once(theta).chain((0..4).filter(|&t| t != theta)).collect();
        for &t in &thetas {
            for radius in 0..gw.max(gh) * 2 {
                for y in ay - radius..=ay + radius {
                    for x in ax - radius..=ax + radius {
                        let on_ring = (x - ax).abs() == radius || (y - ay).abs() == radius;
                        if on_ring && free(x, y, t) {
                            return Ok((x, y, t));
                        }
                    }
                }
            }
        }
        Err(BlockWorldError::NoRestingPose)
    }
}
