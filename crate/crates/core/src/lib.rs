//! Push-grasp synergy laboratory: a deterministic 2D tabletop, heightmap
//! perception, a compact bifunctional fully-convolutional Q network trained
//! from scratch, hierarchical goal-mask action selection, two-stage training,
//! and an evaluation harness.

pub mod world;
pub mod percept;
pub mod qfunc;
pub mod agent;
pub mod curriculum;
pub mod bench;
