//! Binary portable graymap (P5) export with an explicit value scale.

use std::io;
use std::path::Path;

use super::Grid;

/// Linear mapping from values to 8-bit gray: `lo → 0`, `hi → 255`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrayScale {
    pub lo: f64,
    pub hi: f64,
}

impl GrayScale {
    /// Scale spanning the finite values of `grid` (non-finite entries are ignored).
    pub fn fit(grid: &Grid<f32>) -> GrayScale {
        let (lo, hi) = grid
            .data()
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
        if !lo.is_finite() {
            return GrayScale { lo: 0.0, hi: 1.0 };
        }
        GrayScale { lo, hi }
    }

    pub fn level(&self, v: f64) -> u8 {
        if !v.is_finite() {
            return 0;
        }
        if self.hi <= self.lo {
            return if v >= self.hi { 255 } else { 0 };
        }
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }
}

pub fn encode(grid: &Grid<f32>, scale: GrayScale) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    out.extend(grid.data().iter().map(|&v| scale.level(v as f64)));
    out
}

/// Parses a P5 image with maxval 255 into a grid of gray levels.
pub fn decode(bytes: &[u8]) -> Option<Grid<u8>> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let cols: usize = fields[1].parse().ok()?;
    let rows: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos..pos + rows * cols)?.to_vec();
    Some(Grid::from_vec(rows, cols, data))
}

pub fn write(path: &Path, grid: &Grid<f32>, scale: GrayScale) -> io::Result<()> {
    std::fs::write(path, encode(grid, scale))
}
