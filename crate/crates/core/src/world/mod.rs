//! Deterministic tabletop world: random placement, quasi-static straight
//! pushes, and top-down antipodal grasps with finger clearance checks.

pub mod geometry;
mod physics;
mod scene;
pub mod shapes;
mod spawn;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::Vec2;
pub use physics::{apply_grasp, apply_push, scatter_metric};
pub use scene::{ObjectSpec, Pose, Scene, Workspace};
pub use spawn::{spawn_random, spawn_random_with, SpawnConfig};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("object ids differ between scenes")]
    IdMismatch,
    #[error("duplicate object id {0}")]
    DuplicateId(u32),
    #[error("object {0} is not a convex counter-clockwise polygon")]
    InvalidShape(u32),
    #[error("object {0} lies outside the workspace")]
    OutOfBounds(u32),
    #[error("objects {a} and {b} interpenetrate by {depth} m")]
    Interpenetration { a: u32, b: u32, depth: f64 },
    #[error("scene parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Physical constants of the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Side of the square workspace (m).
    pub workspace_size: f64,
    pub object_height: f64,
    pub push_radius: f64,
    pub push_substeps: usize,
    pub max_resolve_passes: usize,
    pub overlap_tol: f64,
    pub move_tol: f64,
    pub push_length: f64,
    /// Distance from the grasp point to each finger center along the closing axis.
    pub gripper_half_width: f64,
    /// Finger extent along the jaw direction.
    pub finger_length: f64,
    /// Finger extent along the closing axis.
    pub finger_width: f64,
    pub max_spawn_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            workspace_size: 0.448,
            object_height: 0.03,
            push_radius: 0.01,
            push_substeps: 20,
            max_resolve_passes: 8,
            overlap_tol: 1e-4,
            move_tol: 1e-3,
            push_length: 0.1,
            gripper_half_width: 0.03,
            finger_length: 0.02,
            finger_width: 0.01,
            max_spawn_attempts: 5000,
        }
    }
}

impl WorldConfig {
    pub fn workspace(&self) -> Workspace {
        Workspace::square(self.workspace_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Grasp,
    Push,
}

impl Primitive {
    pub fn index(self) -> usize {
        match self {
            Primitive::Grasp => 0,
            Primitive::Push => 1,
        }
    }
}

/// Result of executing one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub primitive: Primitive,
    pub success: bool,
    pub grasped_id: Option<u32>,
    pub moved_ids: BTreeSet<u32>,
    pub scene_after: Scene,
}
