//! Bifunctional fully-convolutional Q network written from scratch: a shared
//! strided encoder, a grasp head and a push head with skip connections and
//! nearest upsampling, backprop, Huber loss, Adam, and binary checkpoints.

pub mod arch;
pub mod codec;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod real;
pub mod tensor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{ArchConfig, Layout};
pub use net::{backward, backward_into, forward, init_params, ForwardTrace, Heads, NetworkParams};
pub use optim::{adam_step, huber, AdamConfig, AdamState};
pub use real::Real;
pub use tensor::Tensor;

use crate::percept::{rotation_source, Grid, Heightmap, NUM_ROTATIONS};
use crate::world::Primitive;

#[derive(Debug, Error, PartialEq)]
pub enum QError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trace was produced by different parameters")]
    StaleTrace,
    #[error("network has no {0:?} head")]
    MissingHead(Primitive),
}

/// Fixed input normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputNorm {
    /// Heights are multiplied by this (1 / 0.1 m).
    pub depth_scale: f64,
    pub color_mean: f64,
    pub color_std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm { depth_scale: 10.0, color_mean: 0.0, color_std: 1.0 }
    }
}

/// RGB in [0, 1] for a color tag; tag 0 is the bare table.
pub fn palette(tag: u8) -> [f32; 3] {
    const P: [[f32; 3]; 8] = [
        [0.0, 0.0, 0.0],
        [0.90, 0.20, 0.20],
        [0.20, 0.70, 0.25],
        [0.20, 0.35, 0.90],
        [0.95, 0.80, 0.15],
        [0.65, 0.30, 0.80],
        [0.95, 0.55, 0.15],
        [0.20, 0.80, 0.85],
    ];
    P[tag as usize % P.len()]
}

/// Channels: normalized R, G, B, then scaled height.
pub fn encode_input(hm: &Heightmap, norm: &InputNorm) -> Tensor<f32> {
    let (rows, cols) = hm.height.shape();
    let plane = rows * cols;
    let mut data = vec![0.0f32; 4 * plane];
    let mean = norm.color_mean as f32;
    let std = norm.color_std as f32;
    for (i, (&tag, &h)) in hm.color.data().iter().zip(hm.height.data()).enumerate() {
        let rgb = palette(tag);
        for c in 0..3 {
            data[c * plane + i] = (rgb[c] - mean) / std;
        }
        data[3 * plane + i] = h * norm.depth_scale as f32;
    }
    Tensor::from_vec(4, rows, cols, data)
}

/// Resamples every channel by rotation `k` (see [`crate::percept::rotate_map`]).
pub fn rotate_tensor<S: Real>(t: &Tensor<S>, k: usize, inverse: bool) -> Tensor<S> {
    assert_eq!(t.rows, t.cols, "rotation requires square maps");
    if k % NUM_ROTATIONS == 0 {
        return t.clone();
    }
    let n = t.rows;
    let plane = n * n;
    let table: Vec<Option<usize>> = (0..plane)
        .map(|i| rotation_source(n, k, i / n, i % n, inverse).map(|(r, c)| r * n + c))
        .collect();
    let mut out = Tensor::zeros(t.channels, n, n);
    for c in 0..t.channels {
        let src = t.channel(c);
        let dst = &mut out.data[c * plane..(c + 1) * plane];
        for (d, s) in dst.iter_mut().zip(&table) {
            if let Some(s) = s {
                *d = src[*s];
            }
        }
    }
    out
}

/// Pixel of the rotation-`k` network output that holds the Q value of
/// unrotated pixel `(row, col)`; `None` outside the rotated frame.
pub fn rotated_pixel(size: usize, k: usize, row: usize, col: usize) -> Option<(usize, usize)> {
    if k % NUM_ROTATIONS == 0 {
        return Some((row, col));
    }
    rotation_source(size, k, row, col, true)
}

/// Dense Q values per primitive and rotation, in the unrotated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct QMaps {
    pub rows: usize,
    pub cols: usize,
    /// `[grasp, push]`, each `NUM_ROTATIONS · rows · cols`; push is empty without a push head.
    pub maps: [Vec<f32>; 2],
}

impl QMaps {
    pub fn filled(rows: usize, cols: usize, value: f32, with_push: bool) -> QMaps {
        let n = NUM_ROTATIONS * rows * cols;
        QMaps { rows, cols, maps: [vec![value; n], if with_push { vec![value; n] } else { Vec::new() }] }
    }

    pub fn has(&self, p: Primitive) -> bool {
        !self.maps[p.index()].is_empty()
    }

    pub fn index(&self, k: usize, row: usize, col: usize) -> usize {
        (k * self.rows + row) * self.cols + col
    }

    pub fn get(&self, p: Primitive, k: usize, row: usize, col: usize) -> f32 {
        self.maps[p.index()][self.index(k, row, col)]
    }

    pub fn set(&mut self, p: Primitive, k: usize, row: usize, col: usize, v: f32) {
        let i = self.index(k, row, col);
        self.maps[p.index()][i] = v;
    }

    pub fn slice(&self, p: Primitive, k: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.maps[p.index()][k * n..(k + 1) * n]
    }

    pub fn grid(&self, p: Primitive, k: usize) -> Grid<f32> {
        Grid::from_vec(self.rows, self.cols, self.slice(p, k).to_vec())
    }
}

fn one_rotation(params: &NetworkParams<f32>, input: &Tensor<f32>, k: usize, heads: Heads) -> Result<[Option<Vec<f32>>; 2], QError> {
    let trace = forward(params, &rotate_tensor(input, k, false), heads)?;
    let mut out = [None, None];
    for p in [Primitive::Grasp, Primitive::Push] {
        if let Some(q) = trace.q(p) {
            out[p.index()] = Some(rotate_tensor(q, k, true).data);
        }
    }
    Ok(out)
}

fn assemble(rows: usize, cols: usize, per_k: Vec<[Option<Vec<f32>>; 2]>) -> QMaps {
    let mut maps = [Vec::new(), Vec::new()];
    for slices in per_k {
        for (dst, src) in maps.iter_mut().zip(slices) {
            if let Some(s) = src {
                dst.extend_from_slice(&s);
            }
        }
    }
    QMaps { rows, cols, maps }
}

/// Rotate, forward and inverse-rotate for all 16 orientations.
pub fn forward_all_rotations(params: &NetworkParams<f32>, input: &Tensor<f32>, heads: Heads, parallel: bool) -> Result<QMaps, QError> {
    if input.rows != input.cols {
        return Err(QError::ShapeMismatch(format!("non-square input {}x{}", input.rows, input.cols)));
    }
    let per_k: Result<Vec<_>, QError> = if parallel {
        (0..NUM_ROTATIONS).into_par_iter().map(|k| one_rotation(params, input, k, heads)).collect()
    } else {
        (0..NUM_ROTATIONS).map(|k| one_rotation(params, input, k, heads)).collect()
    };
    Ok(assemble(input.rows, input.cols, per_k?))
}

/// Q value of one action, evaluating only the needed rotation and head.
pub fn q_at(params: &NetworkParams<f32>, input: &Tensor<f32>, p: Primitive, k: usize, row: usize, col: usize) -> Result<f32, QError> {
    let Some((rr, rc)) = rotated_pixel(input.rows, k, row, col) else {
        return Ok(0.0);
    };
    let trace = forward(params, &rotate_tensor(input, k, false), Heads::Only(p))?;
    Ok(trace.q(p).expect("requested head").at(0, rr, rc))
}
