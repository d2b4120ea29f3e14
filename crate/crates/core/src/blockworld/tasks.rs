//! Built-in tasks and the plain-text task format.
//!
//! ```text
//! task = 2s                 # optional built-in to start from
//! grid = 8x8
//! action_mode = xy          # xy | xyt | xytz
//! theta_count = 1
//! z_count = 1
//! max_steps = 10
//! block = cube              # repeatable: shape [WxD] [heights=1,2]
//! block = cube
//! goal = cube 0 0 0 0       # repeatable: shape dx dy z theta [tol=N] [height=N]
//! goal = cube 0 0 1 0
//! column = 0 0 2            # repeatable: dx dy height
//! goal_rotations = 0,1,2,3
//! noise = 0
//! crop = 5
//! seed = 0
//! ```
//!
//! Any `block`, `goal` or `column` line replaces the whole corresponding list
//! of the starting task.

use std::fmt::Write as _;
use std::path::Path;

use super::goal::{Column, GoalSlot, GoalTemplate};
use super::shape::{BlockSpec, ShapeId};
use super::{ActionMode, BlockWorldConfig, BlockWorldError, Result};
use crate::config::{ConfigError, Entry, KvConfig};

pub const BUILTIN_TASKS: [&str; 6] = ["2s", "4s", "h2", "h4", "imdis", "2s-xytz"];

const KEYS: [&str; 15] = [
    "task",
    "name",
    "grid",
    "grid_w",
    "grid_h",
    "action_mode",
    "theta_count",
    "z_count",
    "max_steps",
    "block",
    "goal",
    "column",
    "goal_rotations",
    "noise",
    "crop",
];

fn stack(n: usize) -> GoalTemplate {
    GoalTemplate::new((0..n).map(|z| GoalSlot::new(ShapeId::Cube, 0, 0, z as i64, 0)).collect())
}

fn base(
    name: &str,
    mode: ActionMode,
    theta_count: usize,
    inventory: Vec<BlockSpec>,
    goal: GoalTemplate,
) -> BlockWorldConfig {
    BlockWorldConfig {
        name: name.to_string(),
        grid_w: 8,
        grid_h: 8,
        action_mode: mode,
        theta_count,
        z_count: 1,
        inventory,
        goal,
        max_steps: 10,
        noise_amplitude: 0.0,
        seed: 0,
        crop: 5,
    }
}

/// Built-in task by id (case-insensitive).
pub fn builtin(name: &str) -> Option<BlockWorldConfig> {
    let cube = || BlockSpec::new(ShapeId::Cube);
    let cfg = match name.to_ascii_lowercase().as_str() {
        "2s" => base("2s", ActionMode::XY, 1, vec![cube(); 2], stack(2)),
        "4s" => base("4s", ActionMode::XY, 1, vec![cube(); 4], stack(4)),
        "h2" => base(
            "h2",
            ActionMode::XYT,
            2,
            vec![cube(), cube(), BlockSpec::new(ShapeId::Roof)],
            GoalTemplate::new(vec![
                GoalSlot::new(ShapeId::Cube, 0, 0, 0, 0),
                GoalSlot::new(ShapeId::Cube, 1, 0, 0, 0),
                GoalSlot::new(ShapeId::Roof, 0, 0, 1, 0),
            ]),
        ),
        "h4" => {
            let mut c = base(
                "h4",
                ActionMode::XYT,
                2,
                vec![cube(), cube(), BlockSpec::new(ShapeId::Brick), cube(), cube(), BlockSpec::new(ShapeId::Roof)],
                GoalTemplate::new(vec![
                    GoalSlot::new(ShapeId::Cube, 0, 0, 0, 0),
                    GoalSlot::new(ShapeId::Cube, 1, 0, 0, 0),
                    GoalSlot::new(ShapeId::Brick, 0, 0, 1, 0),
                    GoalSlot::new(ShapeId::Cube, 0, 0, 2, 0),
                    GoalSlot::new(ShapeId::Cube, 1, 0, 2, 0),
                    GoalSlot::new(ShapeId::Roof, 0, 0, 3, 0),
                ]),
            );
            c.max_steps = 20;
            c
        }
        "imdis" => {
            let mut inventory = vec![BlockSpec::new(ShapeId::Roof)];
            inventory.extend(std::iter::repeat_n(BlockSpec::new(ShapeId::RandomHeight), 4));
            base(
                "imdis",
                ActionMode::XYT,
                2,
                inventory,
                GoalTemplate::new(vec![GoalSlot::new(ShapeId::Roof, 0, 0, 2, 0)])
                    .with_columns(vec![Column { dx: 0, dy: 0, height: 2 }, Column { dx: 1, dy: 0, height: 2 }]),
            )
        }
        "2s-xytz" => {
            let mut c = base("2s-xytz", ActionMode::XYTZ, 2, vec![cube(); 2], stack(2));
            c.z_count = 3;
            c
        }
        _ => return None,
    };
    Some(cfg)
}

fn value_err(e: &Entry, msg: impl Into<String>) -> BlockWorldError {
    BlockWorldError::Config(KvConfig::value_error(e, msg))
}

fn parse_block(e: &Entry) -> Result<BlockSpec> {
    let mut parts = e.value.split_whitespace();
    let shape: ShapeId =
        parts.next().ok_or_else(|| value_err(e, "missing shape"))?.parse().map_err(|m: String| value_err(e, m))?;
    let mut spec = BlockSpec::new(shape);
    for p in parts {
        if let Some(hs) = p.strip_prefix("heights=") {
            spec.heights = hs
                .split(',')
                .map(|h| h.parse::<usize>().map_err(|_| value_err(e, format!("bad height `{h}`"))))
                .collect::<Result<_>>()?;
        } else if let Some((w, d)) = p.split_once('x') {
            spec.w = w.parse().map_err(|_| value_err(e, "bad footprint"))?;
            spec.d = d.parse().map_err(|_| value_err(e, "bad footprint"))?;
        } else {
            return Err(value_err(e, format!("unexpected `{p}`")));
        }
    }
    if !spec.is_valid() {
        return Err(value_err(e, "footprint and heights must be at least 1"));
    }
    Ok(spec)
}

fn parse_slot(e: &Entry) -> Result<GoalSlot> {
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    if parts.len() < 5 {
        return Err(value_err(e, "expected `shape dx dy z theta`"));
    }
    let shape: ShapeId = parts[0].parse().map_err(|m: String| value_err(e, m))?;
    let num = |s: &str| s.parse::<i64>().map_err(|_| value_err(e, format!("bad number `{s}`")));
    let theta = num(parts[4])?;
    if !(0..4).contains(&theta) {
        return Err(value_err(e, "theta must be a quarter-turn count in 0..4"));
    }
    let mut slot = GoalSlot::new(shape, num(parts[1])?, num(parts[2])?, num(parts[3])?, theta as usize);
    for p in &parts[5..] {
        if let Some(t) = p.strip_prefix("tol=") {
            slot.tolerance = num(t)?;
        } else if let Some(h) = p.strip_prefix("height=") {
            slot.height = Some(num(h)? as usize);
        } else if let Some((w, d)) = p.split_once('x') {
            slot.w = num(w)? as usize;
            slot.d = num(d)? as usize;
        } else {
            return Err(value_err(e, format!("unexpected `{p}`")));
        }
    }
    Ok(slot)
}

fn parse_column(e: &Entry) -> Result<Column> {
    let n: Vec<i64> = e
        .value
        .split_whitespace()
        .map(|s| s.parse::<i64>().map_err(|_| value_err(e, format!("bad number `{s}`"))))
        .collect::<Result<_>>()?;
    match n.as_slice() {
        &[dx, dy, height] if height >= 1 => Ok(Column { dx, dy, height }),
        _ => Err(value_err(e, "expected `dx dy height` with height >= 1")),
    }
}

/// Builds a task from parsed key/value settings and validates it.
pub fn from_kv(kv: &KvConfig) -> Result<BlockWorldConfig> {
    kv.check_keys(&[&KEYS[..], &["seed"]].concat())?;
    let mut cfg = match kv.last("task") {
        Some(e) => builtin(&e.value).ok_or_else(|| value_err(e, "unknown built-in task"))?,
        None => base("custom", ActionMode::XY, 1, Vec::new(), GoalTemplate::new(Vec::new())),
    };
    if let Some(n) = kv.get("name") {
        cfg.name = n.to_string();
    }
    if let Some(e) = kv.last("grid") {
        let (w, h) = e.value.split_once('x').ok_or_else(|| value_err(e, "expected WxH"))?;
        cfg.grid_w = w.trim().parse().map_err(|_| value_err(e, "bad width"))?;
        cfg.grid_h = h.trim().parse().map_err(|_| value_err(e, "bad height"))?;
    }
    cfg.grid_w = kv.parse("grid_w")?.unwrap_or(cfg.grid_w);
    cfg.grid_h = kv.parse("grid_h")?.unwrap_or(cfg.grid_h);
    cfg.action_mode = kv.parse("action_mode")?.unwrap_or(cfg.action_mode);
    cfg.theta_count = kv.parse("theta_count")?.unwrap_or(cfg.theta_count);
    cfg.z_count = kv.parse("z_count")?.unwrap_or(cfg.z_count);
    cfg.max_steps = kv.parse("max_steps")?.unwrap_or(cfg.max_steps);
    cfg.noise_amplitude = kv.parse("noise")?.unwrap_or(cfg.noise_amplitude);
    cfg.crop = kv.parse("crop")?.unwrap_or(cfg.crop);
    cfg.seed = kv.parse("seed")?.unwrap_or(cfg.seed);
    let blocks = kv.all("block");
    if !blocks.is_empty() {
        cfg.inventory = blocks.into_iter().map(parse_block).collect::<Result<_>>()?;
    }
    let slots = kv.all("goal");
    if !slots.is_empty() {
        cfg.goal.slots = slots.into_iter().map(parse_slot).collect::<Result<_>>()?;
    }
    let columns = kv.all("column");
    if !columns.is_empty() {
        cfg.goal.columns = columns.into_iter().map(parse_column).collect::<Result<_>>()?;
    }
    if let Some(e) = kv.last("goal_rotations") {
        cfg.goal.rotations = e
            .value
            .split(',')
            .map(|r| r.trim().parse::<usize>().map_err(|_| value_err(e, format!("bad rotation `{r}`"))))
            .collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<BlockWorldConfig> {
    from_kv(&KvConfig::load(path)?)
}

/// Built-in id or a path to a task file.
pub fn resolve(task: &str) -> Result<BlockWorldConfig> {
    match builtin(task) {
        Some(c) => Ok(c),
        None if Path::new(task).exists() => load(Path::new(task)),
        None => Err(BlockWorldError::Config(ConfigError::Missing(format!(
            "task `{task}` (built-ins: {})",
            BUILTIN_TASKS.join(", ")
        )))),
    }
}

/// Serializes a task in the plain-text format; `from_kv` reads it back.
pub fn to_text(cfg: &BlockWorldConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", cfg.name);
    let _ = writeln!(s, "grid = {}x{}", cfg.grid_w, cfg.grid_h);
    let _ = writeln!(s, "action_mode = {}", cfg.action_mode);
    let _ = writeln!(s, "theta_count = {}", cfg.theta_count);
    let _ = writeln!(s, "z_count = {}", cfg.z_count);
    let _ = writeln!(s, "max_steps = {}", cfg.max_steps);
    for b in &cfg.inventory {
        let hs: Vec<String> = b.heights.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "block = {} {}x{} heights={}", b.shape, b.w, b.d, hs.join(","));
    }
    for g in &cfg.goal.slots {
        let _ =
            write!(s, "goal = {} {} {} {} {} {}x{} tol={}", g.shape, g.dx, g.dy, g.z, g.theta, g.w, g.d, g.tolerance);
        if let Some(h) = g.height {
            let _ = write!(s, " height={h}");
        }
        s.push('\n');
    }
    for c in &cfg.goal.columns {
        let _ = writeln!(s, "column = {} {} {}", c.dx, c.dy, c.height);
    }
    let rs: Vec<String> = cfg.goal.rotations.iter().map(usize::to_string).collect();
    let _ = writeln!(s, "goal_rotations = {}", rs.join(","));
    let _ = writeln!(s, "noise = {:?}", cfg.noise_amplitude);
    let _ = writeln!(s, "crop = {}", cfg.crop);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for t in BUILTIN_TASKS {
            let c = builtin(t).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{t}: {e}"));
        }
        assert!(builtin("h9").is_none());
    }

    #[test]
    fn text_round_trip() {
        for t in BUILTIN_TASKS {
            let c = builtin(t).unwrap();
            let kv = KvConfig::parse_str(&to_text(&c), t, None).unwrap();
            assert_eq!(from_kv(&kv).unwrap(), c);
        }
    }

    #[test]
    fn overrides_on_a_builtin() {
        let kv = KvConfig::parse_str("task = 2s\ngrid = 6x5\nmax_steps = 12\n", "t", None).unwrap();
        let c = from_kv(&kv).unwrap();
        assert_eq!((c.grid_w, c.grid_h, c.max_steps), (6, 5, 12));
        assert_eq!(c.inventory.len(), 2);
    }

    #[test]
    fn invalid_tasks_are_rejected() {
        let cases = [
            "task = 2s\ngrid = 3x8\n",
            "task = 2s\nmax_steps = 3\n",
            "task = 2s\ntheta_count = 3\naction_mode = xyt\n",
            "task = 2s\nnoise = 0.5\n",
            "task = 2s\ngoal = cube 0 0 0 0\ngoal = cube 0 0 2 0\n",
            "task = 2s\nblock = pyramid\n",
            "task = 2s\ncolour = red\n",
        ];
        for text in cases {
            let kv = KvConfig::parse_str(text, "t", None).unwrap();
            assert!(from_kv(&kv).is_err(), "accepted: {text}");
        }
    }
}
