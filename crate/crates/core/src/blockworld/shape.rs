use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Quarter-turn rotation of an integer offset: `R(90)(dx, dy) = (-dy, dx)`.
pub fn rotate_quarter(dx: i64, dy: i64, quarters: usize) -> (i64, i64) {
    match quarters % 4 {
        0 => (dx, dy),
        1 => (-dy, dx),
        2 => (-dx, -dy),
        _ => (dy, -dx),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeId {
    Cube,
    Brick,
    Roof,
    RandomHeight,
}

impl ShapeId {
    /// Default `(w, d, height)` of the shape.
    pub fn default_geometry(self) -> (usize, usize, usize) {
        match self {
            ShapeId::Cube | ShapeId::RandomHeight => (1, 1, 1),
            ShapeId::Brick | ShapeId::Roof => (2, 1, 1),
        }
    }

    /// Whether other blocks can rest on top of this shape.
    pub fn supports_above(self) -> bool {
        self != ShapeId::Roof
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeId::Cube => "cube",
            ShapeId::Brick => "brick",
            ShapeId::Roof => "roof",
            ShapeId::RandomHeight => "random_height_block",
        }
    }
}

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube" => Ok(ShapeId::Cube),
            "brick" => Ok(ShapeId::Brick),
            "roof" => Ok(ShapeId::Roof),
            "random_height_block" | "random" => Ok(ShapeId::RandomHeight),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

/// One inventory entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub shape: ShapeId,
    pub w: usize,
    pub d: usize,
    /// Candidate heights; one is drawn per episode when there are several.
    pub heights: Vec<usize>,
}

impl BlockSpec {
    pub fn new(shape: ShapeId) -> Self {
        let (w, d, h) = shape.default_geometry();
        let heights = if shape == ShapeId::RandomHeight { vec![1, 2] } else { vec![h] };
        Self { shape, w, d, heights }
    }

    pub fn with_heights(mut self, heights: Vec<usize>) -> Self {
        self.heights = heights;
        self
    }

    pub fn min_height(&self) -> usize {
        self.heights.iter().copied().min().unwrap_or(0)
    }

    pub fn is_valid(&self) -> bool {
        self.w >= 1 && self.d >= 1 && !self.heights.is_empty() && self.heights.iter().all(|&h| h >= 1)
    }
}

/// Footprint cells of a `w x d` rectangle anchored at `(x, y)` and rotated by
/// `quarters` quarter turns about the anchor cell.
pub fn footprint(x: i64, y: i64, w: usize, d: usize, quarters: usize) -> Vec<(i64, i64)> {
    let mut cells = Vec::with_capacity(w * d);
    for j in 0..d as i64 {
        for i in 0..w as i64 {
            let (dx, dy) = rotate_quarter(i, j, quarters);
            cells.push((x + dx, y + dy));
        }
    }
    cells.sort_by_key(|&(cx, cy)| (cy, cx));
    cells
}

/// The footprint cell nearest the centroid, ties broken by lowest `(y, x)`.
pub fn center_cell(cells: &[(i64, i64)]) -> (i64, i64) {
    let n = cells.len() as i64;
    let (sx, sy) = cells.iter().fold((0, 0), |(a, b), &(x, y)| (a + x, b + y));
    // Compare squared distances scaled by n^2 to stay in integers.
    *cells
        .iter()
        .min_by_key(|&&(x, y)| {
            let (dx, dy) = (x * n - sx, y * n - sy);
            (dx * dx + dy * dy, y, x)
        })
        .expect("empty footprint")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brick_footprints_under_rotation() {
        assert_eq!(footprint(3, 3, 2, 1, 0), vec![(3, 3), (4, 3)]);
        assert_eq!(footprint(3, 3, 2, 1, 1), vec![(3, 3), (3, 4)]);
        assert_eq!(footprint(3, 3, 2, 1, 2), vec![(2, 3), (3, 3)]);
        assert_eq!(footprint(3, 3, 2, 1, 3), vec![(3, 2), (3, 3)]);
    }

    #[test]
    fn centre_cell_is_deterministic() {
        assert_eq!(center_cell(&[(3, 3), (4, 3)]), (3, 3));
        assert_eq!(center_cell(&[(3, 3), (3, 4)]), (3, 3));
        assert_eq!(center_cell(&footprint(0, 0, 3, 3, 0)), (1, 1));
        assert_eq!(center_cell(&[(5, 5)]), (5, 5));
    }

    #[test]
    fn shape_names_round_trip() {
        for s in [ShapeId::Cube, ShapeId::Brick, ShapeId::Roof, ShapeId::RandomHeight] {
            assert_eq!(s.name().parse::<ShapeId>().unwrap(), s);
        }
        assert!("pyramid".parse::<ShapeId>().is_err());
    }
}
