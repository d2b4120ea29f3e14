//! Deconstruction expert: spawn a finished structure, take it apart top-down,
//! then reverse and replay the episode to obtain a construction demonstration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use thiserror::Error;

use crate::blockworld::{
    center_cell, footprint, tasks, BlockState, BlockWorld, BlockWorldConfig, BlockWorldError, Pose, Primitive,
};
use crate::transition::TransitionRecord;

pub const GROUND_RETRIES: usize = 100;
const SPAWN_ATTEMPTS: usize = 50;
pub const BUFFER_FORMAT: &str = "asrse3-expert-buffer";
pub const BUFFER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    World(#[from] BlockWorldError),
    #[error("episode does not alternate pick and place at step {0}")]
    Malformed(usize),
    #[error("buffer line {line}: {message}")]
    Buffer { line: usize, message: String },
    #[error("buffer task `{found}` does not match `{expected}`")]
    TaskMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExpertError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Deconstruction,
    Construction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub direction: Direction,
    pub start: BlockState,
    pub actions: Vec<(Primitive, Vec<usize>)>,
    pub records: Vec<TransitionRecord>,
    pub final_state: BlockState,
    pub validated: bool,
}

/// Goal structure at a random realizable placement, leftovers scattered on
/// the ground.
pub fn spawn_goal_state(config: &BlockWorldConfig, seed: u64) -> Result<BlockState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal = &config.goal;
    let realizations: Vec<_> = goal
        .realizations(config.grid_w, config.grid_h)
        .into_iter()
        .filter(|&(r, _)| {
            // Elongated blocks must stay graspable with the available angles.
            config.theta_count > 1 || goal.slots.iter().all(|s| s.w == s.d || (s.theta + r) % 2 == 0)
        })
        .collect();
    if realizations.is_empty() {
        return Err(BlockWorldError::TemplateDoesNotFit.into());
    }
    for _ in 0..SPAWN_ATTEMPTS {
        let (r, t) = *realizations.choose(&mut rng).unwrap();
        let mut state =
            BlockState { blocks: BlockWorld::draw_blocks(&config.inventory, &mut rng), holding: None, steps_taken: 0 };
        if place_pattern(config, &mut state, r, t).is_none() {
            continue;
        }
        let mut ok = true;
        for id in 0..state.blocks.len() {
            if state.blocks[id].pose.is_none()
                && BlockWorld::drop_randomly(&mut state, id, config, &mut rng, GROUND_RETRIES).is_err()
            {
                ok = false;
                break;
            }
        }
        if ok && state.audit(config.grid_w, config.grid_h).is_ok() && goal.matches(&state) {
            link_supports(&mut state);
            return Ok(state);
        }
    }
    Err(BlockWorldError::TemplateDoesNotFit.into())
}

fn link_supports(state: &mut BlockState) {
    for id in 0..state.blocks.len() {
        let Some(pose) = state.blocks[id].pose else { continue };
        let cells = state.blocks[id].cells();
        state.blocks[id].supported_by = state.stable_support(&cells, pose.z, Some(id)).unwrap_or_default();
    }
}

/// Assigns inventory blocks to slots and columns under rotation `r` and
/// translation `t`. `None` when the drawn heights cannot fill the columns.
fn place_pattern(config: &BlockWorldConfig, state: &mut BlockState, r: usize, t: (i64, i64)) -> Option<()> {
    let mut free: Vec<bool> = vec![true; state.blocks.len()];
    for s in &config.goal.slots {
        let id = (0..state.blocks.len()).find(|&i| {
            let b = &state.blocks[i];
            free[i] && b.shape == s.shape && b.w * b.d == s.w * s.d && s.height.is_none_or(|h| h == b.height)
        })?;
        free[id] = false;
        let (ax, ay) = crate::blockworld::rotate_quarter(s.dx, s.dy, r);
        state.blocks[id].pose = Some(Pose { x: ax + t.0, y: ay + t.1, z: s.z, theta: (s.theta + r) % 4 });
    }
    for c in &config.goal.columns {
        let (cx, cy) = c.cell(r);
        let fill: Vec<usize> = (0..state.blocks.len())
            .filter(|&i| {
                free[i] && state.blocks[i].w == 1 && state.blocks[i].d == 1 && state.blocks[i].shape.supports_above()
            })
            .collect();
        let chosen = subset_with_sum(&fill, &|i| state.blocks[i].height as i64, c.height)?;
        let mut z = 0;
        for id in chosen {
            free[id] = false;
            state.blocks[id].pose = Some(Pose { x: cx + t.0, y: cy + t.1, z, theta: 0 });
            z += state.blocks[id].height as i64;
        }
    }
    Some(())
}

/// First subset (in index order) of `items` whose sizes sum to `target`.
fn subset_with_sum(items: &[usize], size: &dyn Fn(usize) -> i64, target: i64) -> Option<Vec<usize>> {
    fn go(items: &[usize], size: &dyn Fn(usize) -> i64, target: i64, acc: &mut Vec<usize>) -> bool {
        if target == 0 {
            return true;
        }
        for (k, &i) in items.iter().enumerate() {
            let s = size(i);
            if s <= target {
                acc.push(i);
                if go(&items[k + 1..], size, target - s, acc) {
                    return true;
                }
                acc.pop();
            }
        }
        false
    }
    let mut acc = Vec::new();
    go(items, size, target, &mut acc).then_some(acc)
}

fn record(
    env: &mut BlockWorld,
    primitive: Primitive,
    action: &[usize],
    obs: crate::blockworld::Observation,
) -> std::result::Result<(TransitionRecord, crate::blockworld::Observation), BlockWorldError> {
    let masks = env.masks();
    let out = env.step_primitive(primitive, action)?;
    let rec = TransitionRecord {
        obs,
        masks,
        action: action.to_vec(),
        reward: out.reward,
        next_obs: Some(out.observation.clone()),
        next_masks: Some(env.masks()),
        done: out.done,
        expert: true,
    };
    Ok((rec, out.observation))
}

/// Picks the highest block (lowest index on ties) at its centre cell and puts
/// it flat on free ground, until every block rests on the ground.
pub fn deconstruct(config: &BlockWorldConfig, goal_state: BlockState, seed: u64) -> Result<Episode> {
    let mut env = BlockWorld::new(config.clone())?;
    let mut obs = env.reset_to(goal_state.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_dec0);
    let layout = env.layout();
    let mut actions = Vec::new();
    let mut records = Vec::new();
    loop {
        let top = env
            .state()
            .placed()
            .filter(|b| b.pose.unwrap().z > 0)
            .max_by_key(|b| (b.pose.unwrap().z, std::cmp::Reverse(b.id)))
            .map(|b| (b.id, b.pose.unwrap(), b.cells()));
        let Some((id, pose, cells)) = top else { break };
        let (gx, gy) = center_cell(&cells);
        let quarters = if config.theta_count == 1 { 0 } else { pose.theta % config.theta_count };
        let pick = layout.tuple(gx as usize, gy as usize, quarters, pose.z);
        let (rec, next) = record(&mut env, Primitive::Pick, &pick, obs)?;
        if !rec.next_obs.as_ref().is_some_and(|o| o.gripper == crate::blockworld::Gripper::Holding) {
            return Err(ExpertError::Malformed(actions.len()));
        }
        actions.push((Primitive::Pick, pick));
        records.push(rec);
        obs = next;

        let masks = env.masks();
        let held = masks.held.expect("holding after a successful pick");
        let mut place = None;
        for _ in 0..GROUND_RETRIES {
            let q = rng.gen_range(0..config.theta_count);
            let x = rng.gen_range(0..config.grid_w);
            let y = rng.gen_range(0..config.grid_h);
            let cells = held.cells_at(x as i64, y as i64, q);
            let on_ground = cells
                .iter()
                .all(|&(cx, cy)| masks.heightmap.contains(cx, cy) && masks.heightmap.get_or_zero(cx, cy) == 0);
            if on_ground {
                place = Some(layout.tuple(x, y, q, 0));
                break;
            }
        }
        let place = place.ok_or(BlockWorldError::NoRestingPose)?;
        let (rec, next) = record(&mut env, Primitive::Place, &place, obs)?;
        debug_assert!(env.state().blocks[id].pose.is_some_and(|p| p.z == 0));
        actions.push((Primitive::Place, place));
        records.push(rec);
        obs = next;
    }
    Ok(Episode {
        direction: Direction::Deconstruction,
        start: goal_state,
        actions,
        records,
        final_state: env.state().clone(),
        validated: true,
    })
}

/// Action list of the reversed episode: each (pick p, place q) becomes
/// (pick q, place p), pairs in reverse order.
pub fn reverse_actions(actions: &[(Primitive, Vec<usize>)]) -> Result<Vec<(Primitive, Vec<usize>)>> {
    if !actions.len().is_multiple_of(2) {
        return Err(ExpertError::Malformed(actions.len()));
    }
    let mut out = Vec::with_capacity(actions.len());
    for (i, pair) in actions.chunks(2).enumerate().rev() {
        let (Primitive::Pick, p) = &pair[0] else { return Err(ExpertError::Malformed(2 * i)) };
        let (Primitive::Place, q) = &pair[1] else { return Err(ExpertError::Malformed(2 * i + 1)) };
        out.push((Primitive::Pick, q.clone()));
        out.push((Primitive::Place, p.clone()));
    }
    Ok(out)
}

/// Replays `actions` from `start`, regenerating every observation and reward.
pub fn replay(
    config: &BlockWorldConfig,
    start: &BlockState,
    actions: &[(Primitive, Vec<usize>)],
    seed: u64,
) -> Result<(Vec<TransitionRecord>, BlockState, bool)> {
    let mut env = BlockWorld::new(config.clone())?;
    let mut obs = env.reset_to(start.clone(), seed)?;
    let mut records = Vec::new();
    let mut reached = false;
    for (p, a) in actions {
        if env.is_done() {
            break;
        }
        let (rec, next) = record(&mut env, *p, a, obs)?;
        reached = rec.reward == 1.0;
        records.push(rec);
        obs = next;
    }
    Ok((records, env.state().clone(), reached))
}

/// Construction demonstration from a deconstruction, validated by replay.
pub fn reverse(config: &BlockWorldConfig, decon: &Episode, seed: u64) -> Result<Episode> {
    let actions = reverse_actions(&decon.actions)?;
    let (records, final_state, reached) = replay(config, &decon.final_state, &actions, seed)?;
    let complete = records.len() == actions.len();
    Ok(Episode {
        direction: Direction::Construction,
        start: decon.final_state.clone(),
        actions,
        records,
        final_state,
        validated: reached && complete,
    })
}

/// Per-episode seed derived from a run seed.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9)) ^ index
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub attempts: usize,
    pub validated: usize,
    pub rejected: usize,
    pub transitions: usize,
}

/// Generates `count` validated construction episodes. Rejected episodes are
/// counted and skipped; attempts are capped at `10 * count + 100`.
pub fn generate(config: &BlockWorldConfig, count: usize, seed: u64) -> Result<(Vec<Episode>, GenerationReport)> {
    let mut report = GenerationReport::default();
    let mut episodes = Vec::with_capacity(count);
    let cap = 10 * count + 100;
    while episodes.len() < count && report.attempts < cap {
        let s = episode_seed(seed, report.attempts as u64);
        report.attempts += 1;
        let outcome =
            spawn_goal_state(config, s).and_then(|g| deconstruct(config, g, s)).and_then(|d| reverse(config, &d, s));
        match outcome {
            Ok(ep) if ep.validated => {
                report.transitions += ep.records.len();
                episodes.push(ep);
            }
            _ => report.rejected += 1,
        }
    }
    report.validated = episodes.len();
    Ok((episodes, report))
}

pub fn config_hash(config: &BlockWorldConfig) -> String {
    let digest = Sha256::digest(tasks::to_text(config).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferHeader {
    pub format: String,
    pub version: u32,
    pub task: String,
    pub config_hash: String,
    pub count: usize,
    pub episodes: usize,
    pub rejected: usize,
    pub seed: u64,
}

pub fn write_buffer<W: Write>(
    mut out: W,
    config: &BlockWorldConfig,
    episodes: &[Episode],
    report: &GenerationReport,
    seed: u64,
) -> Result<()> {
    let records: Vec<&TransitionRecord> = episodes.iter().flat_map(|e| e.records.iter()).collect();
    let header = BufferHeader {
        format: BUFFER_FORMAT.to_string(),
        version: BUFFER_VERSION,
        task: config.name.clone(),
        config_hash: config_hash(config),
        count: records.len(),
        episodes: episodes.len(),
        rejected: report.rejected,
        seed,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_buffer<R: BufRead>(input: R) -> Result<(BufferHeader, Vec<TransitionRecord>)> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(ExpertError::Buffer { line: 1, message: "empty file".into() })??;
    let header: BufferHeader =
        serde_json::from_str(&first).map_err(|e| ExpertError::Buffer { line: 1, message: e.to_string() })?;
    if header.format != BUFFER_FORMAT || header.version != BUFFER_VERSION {
        return Err(ExpertError::Buffer {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut records = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| ExpertError::Buffer { line: i + 2, message: e.to_string() })?,
        );
    }
    if records.len() != header.count {
        return Err(ExpertError::Buffer {
            line: records.len() + 1,
            message: format!("header announces {} records, found {}", header.count, records.len()),
        });
    }
    Ok((header, records))
}

/// Reads a buffer and checks it was generated for `config`.
pub fn load_buffer_for(path: &std::path::Path, config: &BlockWorldConfig) -> Result<Vec<TransitionRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let (header, records) = read_buffer(f)?;
    if header.config_hash != config_hash(config) {
        return Err(ExpertError::TaskMismatch {
            expected: format!("{} ({})", config.name, &config_hash(config)[..12]),
            found: format!("{} ({})", header.task, &header.config_hash[..12.min(header.config_hash.len())]),
        });
    }
    Ok(records)
}

/// Cells of a state's placed blocks; handy for asserting no overlap.
pub fn occupied_cells(state: &BlockState) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    for b in state.placed() {
        let p = b.pose.unwrap();
        for (x, y) in footprint(p.x, p.y, b.w, b.d, p.theta) {
            for z in p.z..b.top() {
                out.push((x, y, z));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::tasks::builtin;

    #[test]
    fn spawned_states_match_and_are_stable() {
        for t in ["2s", "4s", "h2", "h4", "imdis", "2s-xytz"] {
            let c = builtin(t).unwrap();
            for seed in 0..20 {
                let s = spawn_goal_state(&c, seed).unwrap();
                assert!(c.goal.matches(&s), "{t} seed {seed}");
                s.audit(c.grid_w, c.grid_h).unwrap();
            }
        }
    }

    #[test]
    fn spawn_is_seed_deterministic() {
        let c = builtin("4s").unwrap();
        assert_eq!(spawn_goal_state(&c, 3).unwrap(), spawn_goal_state(&c, 3).unwrap());
        let distinct: std::collections::HashSet<_> =
            (0..10).map(|s| format!("{:?}", spawn_goal_state(&c, s).unwrap().blocks)).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn two_stack_deconstructs_in_one_pair() {
        let c = builtin("2s").unwrap();
        let g = spawn_goal_state(&c, 11).unwrap();
        let d = deconstruct(&c, g, 11).unwrap();
        assert_eq!(d.actions.len(), 2);
        assert_eq!(d.actions[0].0, Primitive::Pick);
        assert!(d.final_state.placed().all(|b| b.pose.unwrap().z == 0));
        let r = reverse(&c, &d, 11).unwrap();
        assert!(r.validated);
        assert_eq!(r.records.last().unwrap().reward, 1.0);
        assert!(r.records.last().unwrap().done);
        assert_eq!(r.records[0].reward, 0.0);
    }

    #[test]
    fn house_deconstruction_is_top_down() {
        let c = builtin("h4").unwrap();
        for seed in 0..10 {
            let g = spawn_goal_state(&c, seed).unwrap();
            let d = deconstruct(&c, g, seed).unwrap();
            let heights: Vec<i64> = d
                .actions
                .iter()
                .zip(&d.records)
                .filter(|((p, _), _)| *p == Primitive::Pick)
                .map(|(_, r)| {
                    // Height of the picked block = its level before the pick.
                    let before = &r.masks.heightmap;
                    let (x, y) = r.masks.layout.xy(r.action[0]);
                    before.get(x, y) as i64 - 1
                })
                .collect();
            assert!(heights.windows(2).all(|w| w[0] >= w[1]), "{heights:?}");
            assert_eq!(d.actions.len(), 8);
            let cells = occupied_cells(&d.final_state);
            let unique: std::collections::HashSet<_> = cells.iter().collect();
            assert_eq!(unique.len(), cells.len());
        }
    }

    #[test]
    fn reversal_is_an_involution() {
        let c = builtin("h2").unwrap();
        let g = spawn_goal_state(&c, 2).unwrap();
        let d = deconstruct(&c, g, 2).unwrap();
        let twice = reverse_actions(&reverse_actions(&d.actions).unwrap()).unwrap();
        assert_eq!(twice, d.actions);
        assert!(reverse_actions(&d.actions[..1]).is_err());
    }

    #[test]
    fn buffer_round_trip_and_header() {
        let c = builtin("2s").unwrap();
        let (eps, rep) = generate(&c, 3, 5).unwrap();
        assert_eq!(rep.validated, 3);
        let mut bytes = Vec::new();
        write_buffer(&mut bytes, &c, &eps, &rep, 5).unwrap();
        let (h, recs) = read_buffer(&bytes[..]).unwrap();
        assert_eq!(h.count, 6);
        assert_eq!(h.task, "2s");
        assert_eq!(recs, eps.iter().flat_map(|e| e.records.clone()).collect::<Vec<_>>());

        let mut empty = Vec::new();
        write_buffer(&mut empty, &c, &[], &GenerationReport::default(), 0).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap().lines().count(), 1);
        assert!(read_buffer(&empty[..]).unwrap().1.is_empty());

        let truncated: Vec<u8> = bytes.iter().copied().take_while(|&b| b != b'\n').chain(*b"\n").collect();
        assert!(read_buffer(&truncated[..]).is_err());
    }

    #[test]
    fn subset_search() {
        let h = [2i64, 1, 1, 2];
        let f = |i: usize| h[i];
        assert_eq!(subset_with_sum(&[0, 1, 2, 3], &f, 2), Some(vec![0]));
        assert_eq!(subset_with_sum(&[1, 2, 3], &f, 2), Some(vec![1, 2]));
        assert_eq!(subset_with_sum(&[1], &f, 2), None);
    }
}
