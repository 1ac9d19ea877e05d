//! Orthographic heightmaps, segmentation, masks, border occupancy, and map
//! rotations.

mod grid;
pub mod pgm;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::Grid;

use crate::world::{geometry, Scene, Vec2};

/// Number of discrete gripper orientations (multiples of π/8).
pub const NUM_ROTATIONS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptError {
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("goal id {0} is not visible in the segmentation")]
    MissingGoal(u32),
    #[error("goal mask is empty")]
    EmptyGoal,
    #[error("border mask is empty")]
    EmptyBorder,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptConfig {
    /// Heightmap side in pixels.
    pub map_size: usize,
    /// Band width around the goal for border occupancy (px).
    pub border_radius: usize,
    /// Dilation applied to object/goal masks for push candidates (px).
    pub push_dilate_radius: usize,
    /// Heights above this count as occupied (m).
    pub height_threshold: f64,
}

impl Default for PerceptConfig {
    fn default() -> Self {
        PerceptConfig { map_size: 64, border_radius: 4, push_dilate_radius: 3, height_threshold: 0.005 }
    }
}

/// Top-down height and color grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    pub height: Grid<f32>,
    pub color: Grid<u8>,
    /// Meters per pixel.
    pub resolution: f64,
    /// World position of the grid's top-left corner (row 0, col 0).
    pub origin: Vec2,
}

impl Heightmap {
    pub fn rows(&self) -> usize {
        self.height.rows()
    }

    pub fn cols(&self) -> usize {
        self.height.cols()
    }

    /// World coordinates of a pixel center. Columns run along +x, rows along +y.
    pub fn pixel_to_world(&self, row: usize, col: usize) -> Vec2 {
        pixel_center(self.origin, self.resolution, row, col)
    }

    /// Pixel containing a world point, if inside the grid.
    pub fn world_to_pixel(&self, p: Vec2) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.resolution).floor();
        let r = ((p.y - self.origin.y) / self.resolution).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols() as f64 || r >= self.rows() as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }
}

fn pixel_center(origin: Vec2, res: f64, row: usize, col: usize) -> Vec2 {
    Vec2::new(origin.x + (col as f64 + 0.5) * res, origin.y + (row as f64 + 0.5) * res)
}

/// Per-pixel object ids, 0 for empty table.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap(pub Grid<u32>);

impl SegMap {
    pub fn ids(&self) -> std::collections::BTreeSet<u32> {
        self.0.data().iter().copied().filter(|&v| v != 0).collect()
    }
}

/// Binary pixel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(pub Grid<bool>);

impl Mask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask(Grid::new(rows, cols))
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Mask(Grid::filled(rows, cols, true))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.0.get(r, c)
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.data().iter().any(|&b| b)
    }

    /// Set pixels in raster order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let cols = self.0.cols();
        self.0
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / cols, i % cols))
            .collect()
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        let data = self.0.data().iter().zip(other.0.data()).map(|(&a, &b)| a && !b).collect();
        Mask(Grid::from_vec(self.0.rows(), self.0.cols(), data))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.0.data().iter().zip(other.0.data()).all(|(&a, &b)| !a || b)
    }
}

/// Border occupancy statistics around a goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BorderStats {
    /// Border pixel count.
    pub m: usize,
    /// Occupied border pixel count.
    pub m_v: usize,
    /// Occupancy ratio `m_v / m`.
    pub m_r: f64,
}

/// Rasterizes pixel centers against object polygons.
pub fn render(scene: &Scene, resolution: f64) -> Result<(Heightmap, SegMap), PerceptError> {
    if !(resolution > 0.0) {
        return Err(PerceptError::InvalidResolution(resolution));
    }
    let ws = scene.workspace;
    let cols = (ws.width() / resolution).round() as usize;
    let rows = (ws.height() / resolution).round() as usize;
    let mut height = Grid::new(rows, cols);
    let mut color = Grid::new(rows, cols);
    let mut seg = Grid::new(rows, cols);
    let h = scene.object_height as f32;
    for o in &scene.objects {
        let poly = o.world_polygon();
        let b = geometry::Aabb::of(&poly);
        let c0 = (((b.min.x - ws.min.x) / resolution - 0.5).floor().max(0.0)) as usize;
        let c1 = (((b.max.x - ws.min.x) / resolution - 0.5).ceil().max(0.0) as usize).min(cols.saturating_sub(1));
        let r0 = (((b.min.y - ws.min.y) / resolution - 0.5).floor().max(0.0)) as usize;
        let r1 = (((b.max.y - ws.min.y) / resolution - 0.5).ceil().max(0.0) as usize).min(rows.saturating_sub(1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                if geometry::contains(&poly, pixel_center(ws.min, resolution, r, c)) {
                    height.set(r, c, h);
                    color.set(r, c, o.color_tag);
                    seg.set(r, c, o.id);
                }
            }
        }
    }
    Ok((Heightmap { height, color, resolution, origin: ws.min }, SegMap(seg)))
}

/// Renders at the configured square map size.
pub fn render_config(scene: &Scene, cfg: &PerceptConfig) -> (Heightmap, SegMap) {
    let res = scene.workspace.width() / cfg.map_size as f64;
    render(scene, res).expect("positive workspace")
}

pub fn object_mask(seg: &SegMap) -> Mask {
    Mask(seg.0.map(|id| id != 0))
}

pub fn goal_mask(seg: &SegMap, goal_id: u32) -> Result<Mask, PerceptError> {
    let m = Mask(seg.0.map(|id| id == goal_id));
    if goal_id == 0 || m.is_empty() {
        return Err(PerceptError::MissingGoal(goal_id));
    }
    Ok(m)
}

/// Offsets of a Euclidean disc of integer radius.
fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Morphological dilation with a disc structuring element.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (rows, cols) = mask.shape();
    let offsets = disc_offsets(radius);
    let mut out = Grid::new(rows, cols);
    for (r, c) in mask.pixels() {
        for &(dr, dc) in &offsets {
            let rr = r as isize + dr;
            let cc = c as isize + dc;
            if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                out.set(rr as usize, cc as usize, true);
            }
        }
    }
    Mask(out)
}

/// Band of pixels added by dilating the goal.
pub fn border_mask(goal: &Mask, radius: usize) -> Result<Mask, PerceptError> {
    if goal.is_empty() {
        return Err(PerceptError::EmptyGoal);
    }
    Ok(dilate(goal, radius).and_not(goal))
}

pub fn border_occupancy(border: &Mask, height: &Heightmap, h_thresh: f64) -> Result<BorderStats, PerceptError> {
    if border.shape() != height.height.shape() {
        return Err(PerceptError::ShapeMismatch(border.shape(), height.height.shape()));
    }
    let mut m = 0;
    let mut m_v = 0;
    for (&b, &h) in border.0.data().iter().zip(height.height.data()) {
        if b {
            m += 1;
            if f64::from(h) > h_thresh {
                m_v += 1;
            }
        }
    }
    if m == 0 {
        return Err(PerceptError::EmptyBorder);
    }
    Ok(BorderStats { m, m_v, m_r: m_v as f64 / m as f64 })
}

/// Border statistics for a goal in a rendered scene.
pub fn goal_border_stats(
    heightmap: &Heightmap,
    seg: &SegMap,
    goal_id: u32,
    cfg: &PerceptConfig,
) -> Result<BorderStats, PerceptError> {
    let goal = goal_mask(seg, goal_id)?;
    let border = border_mask(&goal, cfg.border_radius)?;
    border_occupancy(&border, heightmap, cfg.height_threshold)
}

/// Decrease in border occupancy; positive when a push freed space.
pub fn eta(before: &BorderStats, after: &BorderStats) -> f64 {
    before.m_r - after.m_r
}

pub fn rotation_angle(k: usize) -> f64 {
    (k % NUM_ROTATIONS) as f64 * PI / 8.0
}

fn rotation_cos_sin(k: usize) -> (f64, f64) {
    match k % NUM_ROTATIONS {
        0 => (1.0, 0.0),
        4 => (0.0, 1.0),
        8 => (-1.0, 0.0),
        12 => (0.0, -1.0),
        k => {
            let (s, c) = rotation_angle(k).sin_cos();
            (c, s)
        }
    }
}

/// Pixel of the source grid sampled for output pixel `(row, col)`.
///
/// The forward rotation by `k` resamples a square grid so that the world
/// direction at angle `k·π/8` lies along +col in the output; the inverse
/// undoes it. Nearest-neighbor sampling about the grid center; `None` when the
/// sample falls outside the frame.
pub fn rotation_source(size: usize, k: usize, row: usize, col: usize, inverse: bool) -> Option<(usize, usize)> {
    let (c, s) = rotation_cos_sin(k);
    let s = if inverse { -s } else { s };
    let half = size as f64 / 2.0;
    let dx = col as f64 + 0.5 - half;
    let dy = row as f64 + 0.5 - half;
    let sx = (c * dx - s * dy + half).floor();
    let sy = (s * dx + c * dy + half).floor();
    if sx < 0.0 || sy < 0.0 || sx >= size as f64 || sy >= size as f64 {
        return None;
    }
    Some((sy as usize, sx as usize))
}

fn resample<T: Copy + Default>(grid: &Grid<T>, k: usize, inverse: bool) -> Grid<T> {
    let (rows, cols) = grid.shape();
    assert_eq!(rows, cols, "rotation requires a square grid");
    if k % NUM_ROTATIONS == 0 {
        return grid.clone();
    }
    Grid::from_fn(rows, cols, |r, c| match rotation_source(rows, k, r, c, inverse) {
        Some((sr, sc)) => grid.get(sr, sc),
        None => T::default(),
    })
}

/// Rotates a square grid by `k·π/8` (see [`rotation_source`]); out-of-frame pixels become zero.
pub fn rotate_map<T: Copy + Default>(grid: &Grid<T>, k: usize) -> Grid<T> {
    resample(grid, k, false)
}

pub fn inverse_rotate_map<T: Copy + Default>(grid: &Grid<T>, k: usize) -> Grid<T> {
    resample(grid, k, true)
}
