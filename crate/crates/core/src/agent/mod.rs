//! Hierarchical action selection over masked Q maps, ε-greedy exploration,
//! Double DQN targets, prioritized replay and the learning step.

mod learn;
pub mod log;
pub mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use learn::{learn_step, LearnStats, Learner};
pub use replay::{ReplayBuffer, ReplayConfig, Sample, Transition};

use crate::percept::{dilate, Heightmap, Mask, PerceptError, NUM_ROTATIONS};
use crate::qfunc::{AdamConfig, QError, QMaps};
use crate::world::{Primitive, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("no selectable pixel")]
    EmptyMask,
    #[error("replay holds {have} transitions, need {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error(transparent)]
    Q(#[from] QError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Agnostic,
    Oriented,
}

/// Linear ε decay from `initial` to `final` over `decay_steps` (0: the stage length).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { initial: 0.5, final_: 0.1, decay_steps: 0 }
    }
}

impl EpsilonSchedule {
    pub fn resolved(&self, stage_steps: u64) -> EpsilonSchedule {
        let decay_steps = if self.decay_steps == 0 { stage_steps } else { self.decay_steps };
        EpsilonSchedule { decay_steps, ..*self }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.final_;
        }
        let t = step as f64 / self.decay_steps as f64;
        self.initial + (self.final_ - self.initial) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    /// Minimum border-occupancy decrease for a rewarded push.
    pub tau_eta: f64,
    /// In oriented mode, push when the best goal grasp is below this.
    pub q_push_threshold: f64,
    pub forced_push: bool,
    pub replay: ReplayConfig,
    pub target_sync_period: u64,
    pub huber_kappa: f64,
    pub adam: AdamConfig,
    /// Grasp height below the local surface (m).
    pub grasp_depth: f64,
    /// Push height above the table (m).
    pub push_height: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.5,
            epsilon: EpsilonSchedule::default(),
            tau_eta: 0.1,
            q_push_threshold: 0.5,
            forced_push: true,
            replay: ReplayConfig::default(),
            target_sync_period: 100,
            huber_kappa: 1.0,
            adam: AdamConfig::default(),
            grasp_depth: 0.01,
            push_height: 0.005,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma {} outside [0, 1)", self.gamma));
        }
        for e in [self.epsilon.initial, self.epsilon.final_] {
            if !(0.0..=1.0).contains(&e) {
                return Err(format!("epsilon {e} outside [0, 1]"));
            }
        }
        if self.replay.capacity <= self.replay.batch {
            return Err("replay capacity must exceed the batch size".into());
        }
        if !(self.huber_kappa > 0.0) {
            return Err("huber kappa must be positive".into());
        }
        Ok(())
    }
}

/// Action in map coordinates: rotation `k` and unrotated pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelAction {
    pub primitive: Primitive,
    pub k: usize,
    pub row: usize,
    pub col: usize,
}

/// Executable action with its world pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    #[serde(flatten)]
    pub pixel: PixelAction,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl ActionSpec {
    pub fn new(pixel: PixelAction, hm: &Heightmap, cfg: &AgentConfig) -> ActionSpec {
        let p = hm.pixel_to_world(pixel.row, pixel.col);
        let z = match pixel.primitive {
            Primitive::Grasp => (f64::from(hm.height.get(pixel.row, pixel.col)) - cfg.grasp_depth).max(0.0),
            Primitive::Push => cfg.push_height,
        };
        ActionSpec { pixel, x: p.x, y: p.y, z, theta: crate::percept::rotation_angle(pixel.k) }
    }

    pub fn point(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Valid pixels per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionMasks {
    pub grasp: Mask,
    pub push: Mask,
}

impl ActionMasks {
    /// Grasps on the goal (or any object), pushes on its dilation.
    pub fn new(object_mask: &Mask, goal: Option<&Mask>, push_dilate_radius: usize) -> ActionMasks {
        let base = goal.unwrap_or(object_mask).clone();
        let push = dilate(&base, push_dilate_radius);
        ActionMasks { grasp: base, push }
    }

    pub fn get(&self, p: Primitive) -> &Mask {
        match p {
            Primitive::Grasp => &self.grasp,
            Primitive::Push => &self.push,
        }
    }
}

/// Masked-out pixels hold this value.
pub const MASKED: f32 = f32::NEG_INFINITY;

pub fn masked_qmaps(q: &QMaps, masks: &ActionMasks) -> Result<QMaps, AgentError> {
    if masks.grasp.is_empty() {
        return Err(AgentError::EmptyMask);
    }
    let plane = q.rows * q.cols;
    let mut out = q.clone();
    for p in [Primitive::Grasp, Primitive::Push] {
        let m = masks.get(p);
        if m.shape() != (q.rows, q.cols) {
            return Err(PerceptError::ShapeMismatch(m.shape(), (q.rows, q.cols)).into());
        }
        let data = &mut out.maps[p.index()];
        if data.is_empty() {
            continue;
        }
        for (i, &keep) in m.0.data().iter().enumerate() {
            if !keep {
                for k in 0..NUM_ROTATIONS {
                    data[k * plane + i] = MASKED;
                }
            }
        }
    }
    Ok(out)
}

/// First maximum in `(k, row, col)` order over one primitive's maps.
pub fn argmax_primitive(q: &QMaps, p: Primitive) -> Option<(PixelAction, f32)> {
    let data = &q.maps[p.index()];
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in data.iter().enumerate() {
        if v == MASKED || v.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, v)| {
        let plane = q.rows * q.cols;
        let (k, rem) = (i / plane, i % plane);
        (PixelAction { primitive: p, k, row: rem / q.cols, col: rem % q.cols }, v)
    })
}

/// Global argmax, ties to the lowest `(primitive, k, row, col)`.
pub fn argmax(q: &QMaps) -> Option<(PixelAction, f32)> {
    let g = argmax_primitive(q, Primitive::Grasp);
    let p = argmax_primitive(q, Primitive::Push);
    match (g, p) {
        (Some(g), Some(p)) => Some(if p.1 > g.1 { p } else { g }),
        (g, p) => g.or(p),
    }
}

/// Greedy choice on masked maps, with the oriented-mode forced push.
pub fn greedy_action(masked: &QMaps, mode: Mode, cfg: &AgentConfig) -> Result<PixelAction, AgentError> {
    if mode == Mode::Oriented && cfg.forced_push && masked.has(Primitive::Push) {
        if let Some((_, gmax)) = argmax_primitive(masked, Primitive::Grasp) {
            if f64::from(gmax) < cfg.q_push_threshold {
                if let Some((a, _)) = argmax_primitive(masked, Primitive::Push) {
                    return Ok(a);
                }
            }
        }
    }
    argmax(masked).map(|(a, _)| a).ok_or(AgentError::EmptyMask)
}

/// Uniform primitive, rotation and valid pixel.
pub fn explore_action<R: Rng + ?Sized>(masks: &ActionMasks, with_push: bool, rng: &mut R) -> Result<PixelAction, AgentError> {
    let mut prims = vec![Primitive::Grasp];
    if with_push && !masks.push.is_empty() {
        prims.push(Primitive::Push);
    }
    if masks.grasp.is_empty() {
        return Err(AgentError::EmptyMask);
    }
    let primitive = prims[rng.gen_range(0..prims.len())];
    let k = rng.gen_range(0..NUM_ROTATIONS);
    let pixels = masks.get(primitive).pixels();
    let (row, col) = pixels[rng.gen_range(0..pixels.len())];
    Ok(PixelAction { primitive, k, row, col })
}

/// How an action was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Greedy,
    Explore,
}

/// ε-greedy selection: ε is drawn first, then either branch.
pub fn select_action<R: Rng + ?Sized>(
    masked: &QMaps,
    masks: &ActionMasks,
    mode: Mode,
    cfg: &AgentConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<(PixelAction, Choice), AgentError> {
    if rng.gen::<f64>() < epsilon {
        return Ok((explore_action(masks, masked.has(Primitive::Push), rng)?, Choice::Explore));
    }
    Ok((greedy_action(masked, mode, cfg)?, Choice::Greedy))
}

/// Double DQN target given the online argmax and a target-net evaluator.
pub fn td_target_with(
    reward: f64,
    online_argmax: Option<PixelAction>,
    target_value: impl FnOnce(PixelAction) -> f64,
    terminal: bool,
    gamma: f64,
) -> f64 {
    if terminal || gamma == 0.0 {
        return reward;
    }
    match online_argmax {
        Some(a) => reward + gamma * target_value(a),
        None => reward,
    }
}

/// `reward + γ·target[argmax online]`; both maps masked for the next state.
pub fn td_target(reward: f64, next_online: &QMaps, next_target: &QMaps, terminal: bool, gamma: f64) -> f64 {
    let a = argmax(next_online).map(|(a, _)| a);
    td_target_with(reward, a, |a| f64::from(next_target.get(a.primitive, a.k, a.row, a.col)), terminal, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maps(n: usize) -> QMaps {
        QMaps::filled(n, n, 0.0, true)
    }

    fn mask_of(n: usize, pixels: &[(usize, usize)]) -> Mask {
        let mut g = Grid::new(n, n);
        for &(r, c) in pixels {
            g.set(r, c, true);
        }
        Mask(g)
    }

    #[test]
    fn full_mask_keeps_values() {
        let mut q = maps(4);
        q.set(Primitive::Push, 3, 1, 2, -0.7);
        let m = Mask::full(4, 4);
        let masks = ActionMasks::new(&m, None, 1);
        assert_eq!(masked_qmaps(&q, &masks).unwrap(), q);
    }

    #[test]
    fn single_goal_pixel_pins_grasp() {
        let mut q = maps(6);
        q.set(Primitive::Grasp, 0, 0, 0, 5.0);
        q.set(Primitive::Grasp, 9, 2, 3, -1.0);
        let goal = mask_of(6, &[(2, 3)]);
        let masks = ActionMasks::new(&Mask::full(6, 6), Some(&goal), 0);
        let m = masked_qmaps(&q, &masks).unwrap();
        let (a, _) = argmax_primitive(&m, Primitive::Grasp).unwrap();
        assert_eq!((a.row, a.col), (2, 3));
        assert_eq!(a.k, 0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let masks = ActionMasks::new(&Mask::empty(4, 4), None, 2);
        assert_eq!(masked_qmaps(&maps(4), &masks), Err(AgentError::EmptyMask));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(explore_action(&masks, true, &mut rng), Err(AgentError::EmptyMask));
    }

    #[test]
    fn dominant_grasp_and_forced_push() {
        let cfg = AgentConfig::default();
        let mut q = QMaps::filled(4, 4, MASKED, true);
        q.set(Primitive::Grasp, 2, 1, 1, 0.9);
        q.set(Primitive::Push, 5, 2, 2, 0.3);
        let a = greedy_action(&q, Mode::Agnostic, &cfg).unwrap();
        assert_eq!((a.primitive, a.k, a.row, a.col), (Primitive::Grasp, 2, 1, 1));
        q.set(Primitive::Grasp, 2, 1, 1, 0.2);
        let a = greedy_action(&q, Mode::Oriented, &cfg).unwrap();
        assert_eq!((a.primitive, a.k), (Primitive::Push, 5));
        // agnostic mode has no forced push
        let a = greedy_action(&q, Mode::Agnostic, &cfg).unwrap();
        assert_eq!(a.primitive, Primitive::Push);
        q.set(Primitive::Push, 5, 2, 2, 0.1);
        assert_eq!(greedy_action(&q, Mode::Agnostic, &cfg).unwrap().primitive, Primitive::Grasp);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut q = QMaps::filled(4, 4, MASKED, true);
        q.set(Primitive::Push, 0, 0, 0, 1.0);
        q.set(Primitive::Grasp, 7, 3, 3, 1.0);
        q.set(Primitive::Grasp, 7, 3, 2, 1.0);
        let a = argmax(&q).unwrap().0;
        assert_eq!((a.primitive, a.k, a.row, a.col), (Primitive::Grasp, 7, 3, 2));
    }

    #[test]
    fn explore_single_pixel_and_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = mask_of(5, &[(1, 4)]);
        let masks = ActionMasks::new(&Mask::full(5, 5), Some(&one), 0);
        for _ in 0..50 {
            let a = explore_action(&masks, true, &mut rng).unwrap();
            assert_eq!((a.row, a.col), (1, 4));
        }
        let two = mask_of(5, &[(0, 0), (4, 4)]);
        let masks = ActionMasks { grasp: two.clone(), push: two };
        let n = 10_000;
        let hits = (0..n).filter(|_| explore_action(&masks, true, &mut rng).unwrap().row == 0).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits as f64 - n as f64 / 2.0).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn double_dqn_reads_target_at_online_argmax() {
        let mut online = QMaps::filled(3, 3, MASKED, true);
        let mut target = QMaps::filled(3, 3, 0.0, true);
        online.set(Primitive::Grasp, 1, 0, 2, 2.0);
        online.set(Primitive::Push, 4, 1, 1, 1.0);
        target.set(Primitive::Grasp, 1, 0, 2, 0.8);
        target.set(Primitive::Push, 4, 1, 1, 10.0);
        assert!((td_target(0.5, &online, &target, false, 0.5) - 0.9).abs() < 1e-7);
        target.set(Primitive::Grasp, 1, 0, 2, 0.75);
        assert_eq!(td_target(0.5, &online, &target, false, 0.5), 0.875);
        assert_eq!(td_target(1.0, &online, &target, true, 0.5), 1.0);
        assert_eq!(td_target(0.25, &online, &target, false, 0.0), 0.25);
    }

    #[test]
    fn epsilon_is_linear_then_flat() {
        let e = EpsilonSchedule { initial: 0.5, final_: 0.1, decay_steps: 100 };
        assert_eq!(e.value(0), 0.5);
        assert!((e.value(50) - 0.3).abs() < 1e-12);
        assert_eq!(e.value(100), 0.1);
        assert_eq!(e.value(10_000), 0.1);
    }
}
