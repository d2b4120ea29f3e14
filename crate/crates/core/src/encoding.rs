//! Image encodings of partially chosen actions.
//!
//! Each cascade level sees the scene through the partial action chosen so
//! far: a crop centred on the chosen cell ([`f2`]), the same crop rotated
//! into the gripper frame ([`f3`]), or three orthographic projections of the
//! voxelized neighbourhood once a height (and tilt) is fixed ([`f4`], [`f5`]).
//!
//! Rotation convention: an encoding at angle `theta` shows the scene rotated
//! by `-theta` about the crop centre, so the candidate gripper axis always
//! points along +x. Output pixel `o` samples the scene at `R(theta) o`.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectionMode {
    /// A single `m x m` crop.
    Single,
    /// Three `m x m` orthographic projections.
    Triple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropSpec {
    pub m: usize,
    pub projection_mode: ProjectionMode,
}

impl CropSpec {
    pub fn new(m: usize, projection_mode: ProjectionMode, grid_w: usize, grid_h: usize) -> Option<Self> {
        (m % 2 == 1 && m <= grid_w.min(grid_h)).then_some(Self { m, projection_mode })
    }

    pub fn radius(&self) -> i64 {
        (self.m / 2) as i64
    }

    pub fn channels(&self) -> usize {
        match self.projection_mode {
            ProjectionMode::Single => 1,
            ProjectionMode::Triple => 3,
        }
    }
}

/// Stack of equally sized image channels (one crop or three projections).
pub type Planes = Vec<Grid>;

pub fn zero_planes(spec: CropSpec) -> Planes {
    vec![Grid::zeros(spec.m, spec.m); spec.channels()]
}

/// Maps a crop offset through rotation by `theta`, exactly for quarter turns
/// and rounded to the nearest cell otherwise.
fn rotate_offset(dx: i64, dy: i64, theta: f64) -> (i64, i64) {
    let quarters = theta / FRAC_PI_2;
    if (quarters - quarters.round()).abs() < 1e-12 {
        match (quarters.round() as i64).rem_euclid(4) {
            0 => (dx, dy),
            1 => (-dy, dx),
            2 => (-dx, -dy),
            _ => (dy, -dx),
        }
    } else {
        let (s, c) = theta.sin_cos();
        let (fx, fy) = (dx as f64, dy as f64);
        ((fx * c - fy * s).round() as i64, (fx * s + fy * c).round() as i64)
    }
}

/// Rotates a square image by `-theta` about its centre (nearest neighbour).
pub fn rotate(image: &Grid, theta: f64) -> Grid {
    let m = image.width();
    assert_eq!(m, image.height(), "rotation expects a square image");
    let r = (m / 2) as i64;
    let mut out = Grid::zeros(m, m);
    for oy in 0..m {
        for ox in 0..m {
            let (sx, sy) = rotate_offset(ox as i64 - r, oy as i64 - r, theta);
            out.set(ox, oy, image.get_or_zero(sx + r, sy + r));
        }
    }
    out
}

/// `m x m` crop of the scene centred at `(x, y)`, zero-padded off-grid.
pub fn f2(scene: &Grid, x: usize, y: usize, m: usize) -> Grid {
    let r = (m / 2) as i64;
    let mut out = Grid::zeros(m, m);
    for oy in 0..m {
        for ox in 0..m {
            let v = scene.get_or_zero(x as i64 + ox as i64 - r, y as i64 + oy as i64 - r);
            out.set(ox, oy, v);
        }
    }
    out
}

/// [`f2`] followed by rotation into the frame of `theta`.
pub fn f3(scene: &Grid, x: usize, y: usize, theta: f64, m: usize) -> Grid {
    let r = (m / 2) as i64;
    let mut out = Grid::zeros(m, m);
    for oy in 0..m {
        for ox in 0..m {
            let (sx, sy) = rotate_offset(ox as i64 - r, oy as i64 - r, theta);
            out.set(ox, oy, scene.get_or_zero(x as i64 + sx, y as i64 + sy));
        }
    }
    out
}

/// A partial gripper pose: cell, in-plane angle, height level and tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialPose {
    pub x: usize,
    pub y: usize,
    pub theta: f64,
    pub z: i64,
    pub phi: f64,
}

/// Occupancy of the `m x m x m` neighbourhood of `pose`, indexed `[k][j][i]`
/// with `i`, `j` along the gripper x/y axes and `k` along its z axis.
///
/// A scene column of height `h` occupies levels `0..h`. The local grid is
/// centred on level `pose.z`; the tilt `phi` rotates the local x-z plane
/// before the in-plane rotation, resampled to the nearest voxel.
pub fn voxelize(scene: &Grid, pose: PartialPose, m: usize) -> Vec<bool> {
    let r = (m / 2) as i64;
    let (ps, pc) = pose.phi.sin_cos();
    let tilted = pose.phi != 0.0;
    let mut vox = vec![false; m * m * m];
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let (li, lj, lk) = (i as i64 - r, j as i64 - r, k as i64 - r);
                let (ti, tk) = if tilted {
                    let (fi, fk) = (li as f64, lk as f64);
                    ((fi * pc + fk * ps).round() as i64, (-fi * ps + fk * pc).round() as i64)
                } else {
                    (li, lk)
                };
                let (dx, dy) = rotate_offset(ti, lj, pose.theta);
                let level = pose.z + tk;
                let h = scene.get_or_zero(pose.x as i64 + dx, pose.y as i64 + dy) as i64;
                vox[(k * m + j) * m + i] = level >= 0 && level < h;
            }
        }
    }
    vox
}

/// Sums of an occupancy grid along its z, y and x axes.
pub fn project(vox: &[bool], m: usize) -> Planes {
    let mut along_z = Grid::zeros(m, m);
    let mut along_y = Grid::zeros(m, m);
    let mut along_x = Grid::zeros(m, m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                if vox[(k * m + j) * m + i] {
                    along_z.set(i, j, along_z.get(i, j) + 1);
                    along_y.set(i, k, along_y.get(i, k) + 1);
                    along_x.set(j, k, along_x.get(j, k) + 1);
                }
            }
        }
    }
    vec![along_z, along_y, along_x]
}

/// Three orthographic projections of the neighbourhood at `(x, y, theta, z)`.
pub fn f4(scene: &Grid, x: usize, y: usize, theta: f64, z: i64, m: usize) -> Planes {
    project(&voxelize(scene, PartialPose { x, y, theta, z, phi: 0.0 }, m), m)
}

/// [`f4`] with an additional tilt `phi`.
pub fn f5(scene: &Grid, x: usize, y: usize, theta: f64, z: i64, phi: f64, m: usize) -> Planes {
    project(&voxelize(scene, PartialPose { x, y, theta, z, phi }, m), m)
}

/// In-hand image after a pick at `pose` on the pre-pick scene: a rotated crop
/// in single-channel mode, projections in triple mode.
pub fn in_hand_image(prev_scene: &Grid, pose: PartialPose, spec: CropSpec) -> Planes {
    match spec.projection_mode {
        ProjectionMode::Single => vec![f3(prev_scene, pose.x, pose.y, pose.theta, spec.m)],
        ProjectionMode::Triple => project(&voxelize(prev_scene, pose, spec.m), spec.m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scene_with(w: usize, h: usize, cells: &[(usize, usize, i32)]) -> Grid {
        let mut g = Grid::zeros(w, h);
        for &(x, y, v) in cells {
            g.set(x, y, v);
        }
        g
    }

    #[test]
    fn crop_of_empty_scene_is_zero() {
        assert!(f2(&Grid::zeros(8, 8), 3, 3, 5).is_zero());
    }

    #[test]
    fn crop_centre_reads_scene() {
        let scene = scene_with(8, 8, &[(4, 4, 2)]);
        let crop = f2(&scene, 4, 4, 5);
        assert_eq!(crop.get(2, 2), 2);
        assert_eq!(crop.sum(), 2);
    }

    #[test]
    fn corner_crop_is_zero_padded() {
        let scene = Grid::from_vec(4, 4, (1..=16).collect());
        let crop = f2(&scene, 0, 0, 3);
        // Hand-padded reference: the row and column left of / above (0,0) are zeros.
        let expected = Grid::from_rows("0 0 0\n0 1 2\n0 5 6");
        assert_eq!(crop, expected);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let scene = Grid::from_vec(6, 6, (0..36).collect());
        assert_eq!(f3(&scene, 2, 3, 0.0, 5), f2(&scene, 2, 3, 5));
    }

    #[test]
    fn half_turn_is_point_reflection() {
        let scene = Grid::from_vec(7, 7, (0..49).map(|v| v * 3 % 11).collect());
        let a = f2(&scene, 3, 3, 5);
        let b = f3(&scene, 3, 3, PI, 5);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(b.get(x, y), a.get(4 - x, 4 - y));
            }
        }
    }

    #[test]
    fn quarter_turn_of_l_shape_matches_hand_rotation() {
        // L shape in the crop; rows listed top (y=0) first.
        let crop = Grid::from_rows(
            "0 0 0 0 0
             0 1 0 0 0
             0 1 0 0 0
             0 1 1 1 0
             0 0 0 0 0",
        );
        // out(o) = in(R(90) o) with R(90)(dx,dy) = (-dy, dx).
        let expected = Grid::from_rows(
            "0 0 0 0 0
             0 0 0 1 0
             0 0 0 1 0
             0 1 1 1 0
             0 0 0 0 0",
        );
        assert_eq!(rotate(&crop, FRAC_PI_2), expected);
        assert_eq!(f3(&crop, 2, 2, FRAC_PI_2, 5), expected);
    }

    #[test]
    fn quarter_turn_round_trip() {
        let img = Grid::from_vec(5, 5, (0..25).collect());
        for q in 0..4 {
            let t = q as f64 * FRAC_PI_2;
            assert_eq!(rotate(&rotate(&img, t), -t), img);
        }
    }

    #[test]
    fn projections_of_empty_crop_are_zero() {
        let planes = f4(&Grid::zeros(8, 8), 4, 4, 0.0, 0, 5);
        assert_eq!(planes.len(), 3);
        assert!(planes.iter().all(Grid::is_zero));
    }

    #[test]
    fn unit_cube_projects_to_single_plateau() {
        let scene = scene_with(8, 8, &[(4, 4, 1)]);
        let planes = f4(&scene, 4, 4, 0.0, 0, 5);
        let z = &planes[0];
        assert_eq!(z.get(2, 2), 1);
        assert_eq!(z.sum(), 1);
        for p in &planes {
            assert_eq!(p.sum(), 1);
        }
        // The cube sits at the centre level of the local grid.
        assert_eq!(planes[1].get(2, 2), 1);
    }

    #[test]
    fn projection_masses_agree() {
        let scene = Grid::from_vec(6, 6, (0..36).map(|v| v * 7 % 5).collect());
        for &(theta, z, phi) in &[(0.0, 1, 0.0), (FRAC_PI_2, 2, 0.0), (0.3, 1, 0.4), (PI, 0, -0.5)] {
            let vox = voxelize(&scene, PartialPose { x: 2, y: 3, theta, z, phi }, 5);
            let count = vox.iter().filter(|&&v| v).count() as i64;
            let planes = project(&vox, 5);
            for p in &planes {
                assert_eq!(p.sum(), count);
            }
        }
    }

    #[test]
    fn in_hand_matches_crops() {
        let scene = scene_with(8, 8, &[(3, 3, 1), (4, 3, 1)]);
        let single = CropSpec { m: 5, projection_mode: ProjectionMode::Single };
        let pose = PartialPose { x: 3, y: 3, theta: 0.0, z: 0, phi: 0.0 };
        assert_eq!(in_hand_image(&scene, pose, single), vec![f2(&scene, 3, 3, 5)]);
        let turned = PartialPose { theta: FRAC_PI_2, ..pose };
        assert_eq!(in_hand_image(&scene, turned, single), vec![f3(&scene, 3, 3, FRAC_PI_2, 5)]);
        let triple = CropSpec { m: 5, projection_mode: ProjectionMode::Triple };
        assert_eq!(in_hand_image(&scene, pose, triple), f4(&scene, 3, 3, 0.0, 0, 5));
    }

    #[test]
    fn crop_spec_validation() {
        assert!(CropSpec::new(5, ProjectionMode::Single, 8, 8).is_some());
        assert!(CropSpec::new(4, ProjectionMode::Single, 8, 8).is_none());
        assert!(CropSpec::new(9, ProjectionMode::Single, 8, 8).is_none());
    }
}
