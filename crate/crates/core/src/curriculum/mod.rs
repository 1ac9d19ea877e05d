//! Two-stage training: goal-agnostic grasping first, then goal-oriented
//! push-grasp synergy, with the stage rewards and environment resets.

pub mod checkpoint;
mod profile;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use profile::{NetConfig, Profile, StageConfig};

use crate::agent::log::{ActionRecord, LogRecord};
use crate::agent::{
    argmax, learn_step, masked_qmaps, select_action, ActionMasks, ActionSpec, AgentError, Learner, Mode, PixelAction,
    ReplayBuffer, Transition,
};
use crate::percept::{goal_border_stats, goal_mask, object_mask, render_config, Mask, PerceptError, SegMap};
use crate::qfunc::{encode_input, forward_all_rotations, init_params, Heads, NetworkParams, QError, QMaps};
use crate::world::{apply_grasp, apply_push, scatter_metric, spawn_random_with, Primitive, Scene, StepOutcome, WorldError};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Q(#[from] QError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("parameters became non-finite at step {0}")]
    Diverged(u64),
}

/// Named random streams split from one master seed.
pub mod streams {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const WORLD: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const INIT: u64 = 4;

    pub fn stream(master: u64, id: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(master);
        r.set_stream(id);
        r
    }
}

/// Stage-1 reward: any successful grasp, or a push that scatters enough.
pub fn reward_stage1(outcome: &StepOutcome, scatter: f64, scatter_threshold: f64, cfg: &StageConfig) -> f64 {
    match outcome.primitive {
        Primitive::Grasp if outcome.success => cfg.grasp_reward,
        Primitive::Push if scatter > scatter_threshold => cfg.push_reward,
        _ => 0.0,
    }
}

/// Stage-2 reward: grasping the goal, or a push that frees its border by more than `tau`.
pub fn reward_stage2(outcome: &StepOutcome, goal_id: u32, eta: f64, tau: f64, cfg: &StageConfig) -> f64 {
    match outcome.primitive {
        Primitive::Grasp if outcome.success && outcome.grasped_id == Some(goal_id) => cfg.grasp_reward,
        Primitive::Push if eta > tau => cfg.push_reward,
        _ => 0.0,
    }
}

/// Mutable state of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub stage: u8,
    pub step: u64,
    pub scene: Scene,
    pub goal_id: Option<u32>,
    pub learner: Learner,
    pub replay: ReplayBuffer,
    pub world_rng: ChaCha8Rng,
    pub agent_rng: ChaCha8Rng,
    /// Consecutive actions that changed nothing.
    pub stall: u32,
    /// Last transition, waiting for its next-state argmax.
    pub pending: Option<Transition>,
    /// Outcome of every grasp attempt (task success).
    pub grasp_history: Vec<bool>,
}

impl TrainState {
    /// Fresh state; `params` carries over weights (stage 2 after stage 1).
    pub fn new(profile: &Profile, stage: u8, seed: u64, params: Option<NetworkParams<f32>>) -> Result<TrainState, CurriculumError> {
        profile.validate().map_err(CurriculumError::Config)?;
        let stage_cfg = stage_config(profile, stage)?;
        let params = match params {
            Some(p) => {
                if p.arch != profile.net.arch {
                    return Err(CurriculumError::Config("checkpoint architecture differs from the profile".into()));
                }
                p
            }
            None => init_params(streams::stream(seed, streams::INIT).next_u64(), &profile.net.arch)?,
        };
        let mut world_rng = streams::stream(seed, streams::WORLD);
        let scene = spawn_stage_scene(profile, stage_cfg, &mut world_rng)?;
        let goal_id = pick_goal(stage, &scene, &mut world_rng);
        Ok(TrainState {
            stage,
            step: 0,
            scene,
            goal_id,
            learner: Learner::new(params),
            replay: ReplayBuffer::new(profile.agent.replay.capacity),
            world_rng,
            agent_rng: streams::stream(seed, streams::AGENT),
            stall: 0,
            pending: None,
            grasp_history: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        if self.stage == 1 {
            Mode::Agnostic
        } else {
            Mode::Oriented
        }
    }

    /// Fraction of successes among the last `window` grasp attempts.
    pub fn trailing_grasp_success(&self, window: usize) -> Option<f64> {
        let h = &self.grasp_history;
        if h.is_empty() {
            return None;
        }
        let tail = &h[h.len().saturating_sub(window)..];
        Some(tail.iter().filter(|&&s| s).count() as f64 / tail.len() as f64)
    }
}

pub fn stage_config(profile: &Profile, stage: u8) -> Result<&StageConfig, CurriculumError> {
    match stage {
        1 => Ok(&profile.stage1),
        2 => Ok(&profile.stage2),
        s => Err(CurriculumError::Config(format!("unknown stage {s}"))),
    }
}

fn spawn_stage_scene(profile: &Profile, cfg: &StageConfig, rng: &mut ChaCha8Rng) -> Result<Scene, CurriculumError> {
    Ok(spawn_random_with(rng, cfg.n_goal_candidates, cfg.n_obstacles, &profile.world, &cfg.spawn)?)
}

/// Uniform choice among the goal candidates still present.
fn pick_goal(stage: u8, scene: &Scene, rng: &mut ChaCha8Rng) -> Option<u32> {
    if stage != 2 {
        return None;
    }
    let c = scene.goal_candidates();
    if c.is_empty() {
        None
    } else {
        Some(c[rng.gen_range(0..c.len())])
    }
}

/// Masks for acting in `scene` under `goal`.
pub fn action_masks(seg: &SegMap, goal: Option<u32>, radius: usize) -> Result<ActionMasks, CurriculumError> {
    let objects = object_mask(seg);
    let g: Option<Mask> = goal.map(|id| goal_mask(seg, id)).transpose()?;
    Ok(ActionMasks::new(&objects, g.as_ref(), radius))
}

/// Q maps of a scene, masked for its mode and goal.
pub fn masked_scene_maps(
    params: &NetworkParams<f32>,
    profile: &Profile,
    scene: &Scene,
    goal: Option<u32>,
) -> Result<(QMaps, ActionMasks), CurriculumError> {
    let (hm, seg) = render_config(scene, &profile.percept);
    let masks = action_masks(&seg, goal, profile.percept.push_dilate_radius)?;
    let q = forward_all_rotations(params, &encode_input(&hm, &profile.net.norm), Heads::Both, profile.net.parallel)?;
    Ok((masked_qmaps(&q, &masks)?, masks))
}

/// Executes a pixel action in the world.
pub fn execute(scene: &Scene, spec: &ActionSpec, profile: &Profile) -> StepOutcome {
    match spec.pixel.primitive {
        Primitive::Grasp => apply_grasp(scene, spec.point(), spec.theta, &profile.world),
        Primitive::Push => apply_push(scene, spec.point(), spec.theta, profile.world.push_length, &profile.world),
    }
}

/// What one training step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub record: ActionRecord,
    pub reset: Option<Scene>,
}

/// One environment step followed by one learning step.
pub fn train_step(profile: &Profile, state: &mut TrainState) -> Result<StepReport, CurriculumError> {
    let stage_cfg = stage_config(profile, state.stage)?.clone();
    let agent = &profile.agent;
    let mode = state.mode();
    let (hm, seg) = render_config(&state.scene, &profile.percept);
    let masks = action_masks(&seg, state.goal_id, profile.percept.push_dilate_radius)?;
    let input = encode_input(&hm, &profile.net.norm);
    let q = forward_all_rotations(&state.learner.online, &input, Heads::Both, profile.net.parallel)?;
    let masked = masked_qmaps(&q, &masks)?;

    // the previous transition's next state is usually the current one
    if let Some(mut t) = state.pending.take() {
        if !t.terminal {
            t.next_argmax = if t.next_scene == state.scene && t.goal_id == state.goal_id {
                argmax(&masked).map(|(a, _)| a)
            } else {
                let (m, _) = masked_scene_maps(&state.learner.online, profile, &t.next_scene, t.goal_id)?;
                argmax(&m).map(|(a, _)| a)
            };
        }
        state.replay.insert(t);
    }

    let eps = agent.epsilon.resolved(stage_cfg.steps).value(state.step);
    let (pixel, choice) = select_action(&masked, &masks, mode, agent, eps, &mut state.agent_rng)?;
    let spec = ActionSpec::new(pixel, &hm, agent);
    let outcome = execute(&state.scene, &spec, profile);
    let after = outcome.scene_after.clone();

    let (mut eta, mut m_r_before, mut m_r_after) = (None, None, None);
    let reward = match (state.stage, state.goal_id) {
        (2, Some(goal)) => {
            let e = if pixel.primitive == Primitive::Push {
                let before = goal_border_stats(&hm, &seg, goal, &profile.percept)?;
                let (hm2, seg2) = render_config(&after, &profile.percept);
                let aft = goal_border_stats(&hm2, &seg2, goal, &profile.percept)?;
                m_r_before = Some(before.m_r);
                m_r_after = Some(aft.m_r);
                crate::percept::eta(&before, &aft)
            } else {
                0.0
            };
            if pixel.primitive == Primitive::Push {
                eta = Some(e);
            }
            reward_stage2(&outcome, goal, e, agent.tau_eta, &stage_cfg)
        }
        _ => {
            let scatter = if pixel.primitive == Primitive::Push {
                scatter_metric(&state.scene, &after, profile.world.move_tol)?
            } else {
                0.0
            };
            reward_stage1(&outcome, scatter, stage_cfg.scatter_threshold, &stage_cfg)
        }
    };
    let goal_grasped = state.goal_id.is_some() && outcome.grasped_id == state.goal_id;
    let terminal = goal_grasped || after.is_empty();
    state.pending = Some(Transition {
        scene: state.scene.clone(),
        goal_id: state.goal_id,
        mode,
        action: pixel,
        reward,
        next_scene: after.clone(),
        terminal,
        next_argmax: None,
    });

    let loss = if state.replay.is_empty() {
        None
    } else {
        let r = &agent.replay;
        let frac = if stage_cfg.steps == 0 { 1.0 } else { (state.step as f64 / stage_cfg.steps as f64).min(1.0) };
        let beta = r.beta_start + (r.beta_end - r.beta_start) * frac;
        let stats = learn_step(
            &mut state.learner,
            &mut state.replay,
            agent,
            beta,
            &profile.percept,
            &profile.net.norm,
            &mut state.agent_rng,
        )?;
        if !stats.loss.is_finite() || !state.learner.online.is_finite() {
            return Err(CurriculumError::Diverged(state.step));
        }
        Some(stats.loss)
    };

    if pixel.primitive == Primitive::Grasp {
        let ok = match state.goal_id {
            Some(g) => outcome.grasped_id == Some(g),
            None => outcome.success,
        };
        state.grasp_history.push(ok);
    }
    let changed = outcome.success || !outcome.moved_ids.is_empty();
    state.stall = if changed { 0 } else { state.stall + 1 };

    let record = ActionRecord {
        step: state.step,
        mode,
        goal_id: state.goal_id,
        action: spec,
        choice,
        reward,
        success: outcome.success,
        grasped_id: outcome.grasped_id,
        eta,
        m_r_before,
        m_r_after,
        loss,
        outcome_hash: after.hash_hex(),
    };

    state.scene = after;
    let mut reset = None;
    let stalled = state.stall >= stage_cfg.stall_limit;
    let redrop = match state.stage {
        1 => state.scene.len() < stage_cfg.min_objects || stalled,
        _ => {
            if goal_grasped && !stalled {
                state.goal_id = pick_goal(2, &state.scene, &mut state.world_rng);
            }
            state.goal_id.is_none() || stalled
        }
    };
    if redrop {
        state.scene = spawn_stage_scene(profile, &stage_cfg, &mut state.world_rng)?;
        state.goal_id = pick_goal(state.stage, &state.scene, &mut state.world_rng);
        state.stall = 0;
        reset = Some(state.scene.clone());
    }
    state.step += 1;
    Ok(StepReport { record, reset })
}

/// Runs until `steps` total steps or until `stop` returns true, feeding every
/// log record to `sink`.
pub fn run_stage(
    profile: &Profile,
    state: &mut TrainState,
    steps: u64,
    sink: &mut dyn FnMut(&LogRecord) -> std::io::Result<()>,
    stop: &mut dyn FnMut(&TrainState) -> bool,
) -> Result<(), CurriculumError> {
    let io = |e: std::io::Error| CurriculumError::Checkpoint(CheckpointError::Io(e.to_string()));
    sink(&LogRecord::Reset { step: state.step, scene: state.scene.to_text(), hash: state.scene.hash_hex() }).map_err(io)?;
    while state.step < steps {
        let report = train_step(profile, state)?;
        sink(&LogRecord::Action(report.record)).map_err(io)?;
        if let Some(s) = report.reset {
            sink(&LogRecord::Reset { step: state.step, scene: s.to_text(), hash: s.hash_hex() }).map_err(io)?;
        }
        if stop(state) {
            break;
        }
    }
    Ok(())
}

/// Pixel action of a logged record.
pub fn logged_pixel(r: &ActionRecord) -> PixelAction {
    r.action.pixel
}
