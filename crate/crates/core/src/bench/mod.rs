//! Evaluation: random and authored challenge arrangements, episode rollouts
//! under a fixed policy, and the aggregate metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{masked_qmaps, select_action, ActionMasks, ActionSpec, AgentError, Choice, Mode};
use crate::curriculum::{execute, reward_stage1, reward_stage2, Profile};
use crate::percept::{goal_border_stats, goal_mask, object_mask, render_config, PerceptError};
use crate::qfunc::{encode_input, forward_all_rotations, Heads, NetworkParams, QError};
use crate::world::{scatter_metric, spawn_random, Primitive, Scene, SpawnConfig, Vec2, WorldConfig, WorldError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown challenge case {0} (valid: 1..=10)")]
    UnknownId(u32),
    #[error("no episode records")]
    EmptyInput,
    #[error("need at least one object")]
    NoObjects,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Q(#[from] QError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub runs: usize,
    pub motion_cap: usize,
    pub max_consecutive_failures: u32,
    /// Grasping a non-goal object counts as a failed attempt in oriented mode.
    pub non_goal_grasp_fails: bool,
    /// Challenge scenes are shifted by a uniform offset in `[-jitter, jitter]²` per run.
    pub jitter: f64,
    /// Object count of random arrangements.
    pub random_objects: usize,
    pub epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs: 30,
            motion_cap: 30,
            max_consecutive_failures: 10,
            non_goal_grasp_fails: true,
            jitter: 0.02,
            random_objects: 8,
            epsilon: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arrangement {
    Random { n_objects: usize, seed: u64 },
    Challenge { id: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeKind {
    SideBySide,
    Surrounded,
}

pub const CHALLENGE_IDS: std::ops::RangeInclusive<u32> = 1..=10;

const CHALLENGE_SCENES: [&str; 10] = [
    include_str!("scenarios/case01.scene"),
    include_str!("scenarios/case02.scene"),
    include_str!("scenarios/case03.scene"),
    include_str!("scenarios/case04.scene"),
    include_str!("scenarios/case05.scene"),
    include_str!("scenarios/case06.scene"),
    include_str!("scenarios/case07.scene"),
    include_str!("scenarios/case08.scene"),
    include_str!("scenarios/case09.scene"),
    include_str!("scenarios/case10.scene"),
];

pub fn challenge_kind(id: u32) -> Result<ChallengeKind, BenchError> {
    match id {
        1..=5 => Ok(ChallengeKind::SideBySide),
        6..=10 => Ok(ChallengeKind::Surrounded),
        _ => Err(BenchError::UnknownId(id)),
    }
}

/// Authored scene text of a challenge case.
pub fn challenge_text(id: u32) -> Result<&'static str, BenchError> {
    challenge_kind(id)?;
    Ok(CHALLENGE_SCENES[id as usize - 1])
}

/// Authored adversarial scene and its goal.
pub fn challenge_case(id: u32) -> Result<(Scene, u32), BenchError> {
    let scene = Scene::from_text(challenge_text(id)?)?;
    let goal = scene.goal_candidates()[0];
    Ok((scene, goal))
}

/// Random drop of `n_objects`; in oriented mode object 1 is the goal.
pub fn gen_random_arrangement(
    n_objects: usize,
    seed: u64,
    mode: Mode,
    world: &WorldConfig,
) -> Result<(Scene, Option<u32>), BenchError> {
    if n_objects == 0 {
        return Err(BenchError::NoObjects);
    }
    let spawn = SpawnConfig::default();
    Ok(match mode {
        Mode::Oriented => (spawn_random(1, n_objects - 1, seed, world, &spawn)?, Some(1)),
        Mode::Agnostic => (spawn_random(0, n_objects, seed, world, &spawn)?, None),
    })
}

/// Picks an action for the current scene.
pub trait Policy {
    fn act(&mut self, scene: &Scene, goal: Option<u32>, mode: Mode) -> Result<(ActionSpec, Choice), BenchError>;
}

/// ε-greedy over the masked Q maps of a trained network. With `grasp_only`
/// the push head is never evaluated.
pub struct GreedyPolicy<'a> {
    pub params: &'a NetworkParams<f32>,
    pub profile: &'a Profile,
    pub grasp_only: bool,
    pub epsilon: f64,
    pub rng: ChaCha8Rng,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, scene: &Scene, goal: Option<u32>, mode: Mode) -> Result<(ActionSpec, Choice), BenchError> {
        let p = self.profile;
        let (hm, seg) = render_config(scene, &p.percept);
        let g = goal.map(|id| goal_mask(&seg, id)).transpose()?;
        let masks = ActionMasks::new(&object_mask(&seg), g.as_ref(), p.percept.push_dilate_radius);
        let heads = if self.grasp_only || !self.params.arch.push_head { Heads::Only(Primitive::Grasp) } else { Heads::Both };
        let q = forward_all_rotations(self.params, &encode_input(&hm, &p.net.norm), heads, p.net.parallel)?;
        let masked = masked_qmaps(&q, &masks)?;
        let (pixel, choice) = select_action(&masked, &masks, mode, &p.agent, self.epsilon, &mut self.rng)?;
        Ok((ActionSpec::new(pixel, &hm, &p.agent), choice))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub action: ActionSpec,
    pub choice: Choice,
    pub success: bool,
    pub grasped_id: Option<u32>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub arrangement: Arrangement,
    pub run: usize,
    pub mode: Mode,
    pub goal_id: Option<u32>,
    pub initial_hash: String,
    pub steps: Vec<EpisodeStep>,
    pub completed: bool,
    pub motions: usize,
    pub pushes: usize,
    pub grasp_attempts: usize,
    /// Grasps that served the task: goal grasps when oriented (any grasp if
    /// non-goal grasps are not failures), every grasp when agnostic.
    pub grasp_successes: usize,
    pub objects_grasped: usize,
}

impl EpisodeRecord {
    pub fn new(arrangement: Arrangement, run: usize, mode: Mode, goal_id: Option<u32>, scene: &Scene) -> Self {
        EpisodeRecord {
            arrangement,
            run,
            mode,
            goal_id,
            initial_hash: scene.hash_hex(),
            steps: Vec::new(),
            completed: false,
            motions: 0,
            pushes: 0,
            grasp_attempts: 0,
            grasp_successes: 0,
            objects_grasped: 0,
        }
    }
}

/// Rolls out `policy` until the task is done, the failure rule fires, or the
/// motion cap is reached.
pub fn run_episode(
    policy: &mut dyn Policy,
    scene: &Scene,
    mode: Mode,
    goal_id: Option<u32>,
    profile: &Profile,
    cfg: &EvalConfig,
    mut record: EpisodeRecord,
) -> Result<EpisodeRecord, BenchError> {
    let mut scene = scene.clone();
    let mut failures = 0u32;
    while record.motions < cfg.motion_cap && failures < cfg.max_consecutive_failures {
        if scene.is_empty() || goal_id.is_some_and(|g| scene.get(g).is_none()) {
            break;
        }
        let (spec, choice) = match policy.act(&scene, goal_id, mode) {
            Ok(a) => a,
            // the goal left the rendered workspace
            Err(BenchError::Agent(AgentError::EmptyMask)) | Err(BenchError::Percept(PerceptError::MissingGoal(_))) => break,
            Err(e) => return Err(e),
        };
        let outcome = execute(&scene, &spec, profile);
        let after = &outcome.scene_after;
        let reward = match (mode, goal_id) {
            (Mode::Oriented, Some(g)) => {
                let eta = if spec.pixel.primitive == Primitive::Push && after.get(g).is_some() {
                    let (h0, s0) = render_config(&scene, &profile.percept);
                    let (h1, s1) = render_config(after, &profile.percept);
                    match (goal_border_stats(&h0, &s0, g, &profile.percept), goal_border_stats(&h1, &s1, g, &profile.percept)) {
                        (Ok(a), Ok(b)) => crate::percept::eta(&a, &b),
                        _ => 0.0,
                    }
                } else {
                    0.0
                };
                reward_stage2(&outcome, g, eta, profile.agent.tau_eta, &profile.stage2)
            }
            _ => {
                let scatter = if spec.pixel.primitive == Primitive::Push {
                    scatter_metric(&scene, after, profile.world.move_tol)?
                } else {
                    0.0
                };
                reward_stage1(&outcome, scatter, profile.stage1.scatter_threshold, &profile.stage1)
            }
        };
        record.motions += 1;
        match spec.pixel.primitive {
            Primitive::Push => record.pushes += 1,
            Primitive::Grasp => {
                record.grasp_attempts += 1;
                let counts = match (outcome.grasped_id, goal_id) {
                    (None, _) => false,
                    (Some(id), Some(g)) => id == g || !cfg.non_goal_grasp_fails,
                    (Some(_), None) => true,
                };
                if outcome.grasped_id.is_some() {
                    record.objects_grasped += 1;
                }
                if counts {
                    record.grasp_successes += 1;
                    failures = 0;
                } else {
                    failures += 1;
                }
            }
        }
        record.steps.push(EpisodeStep {
            action: spec,
            choice,
            success: outcome.success,
            grasped_id: outcome.grasped_id,
            reward,
        });
        let done = match goal_id {
            Some(g) => outcome.grasped_id == Some(g),
            None => after.is_empty(),
        };
        scene = outcome.scene_after;
        if done {
            record.completed = true;
            break;
        }
    }
    Ok(record)
}

/// Aggregates over episodes. Fields undefined without completed episodes are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub completion: f64,
    pub grasp_success: Option<f64>,
    pub motion_number: Option<f64>,
    pub action_efficiency: Option<f64>,
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<Metrics, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let done: Vec<&EpisodeRecord> = records.iter().filter(|r| r.completed).collect();
    let mean = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) };
    let grasp_success =
        mean(done.iter().filter(|r| r.grasp_attempts > 0).map(|r| r.grasp_successes as f64 / r.grasp_attempts as f64).collect());
    let motion_number = mean(done.iter().map(|r| r.motions as f64).collect());
    let agnostic: Vec<&&EpisodeRecord> = done.iter().filter(|r| r.mode == Mode::Agnostic).collect();
    let motions: usize = agnostic.iter().map(|r| r.motions).sum();
    let action_efficiency =
        if motions == 0 { None } else { Some(agnostic.iter().map(|r| r.objects_grasped).sum::<usize>() as f64 / motions as f64) };
    Ok(Metrics {
        episodes: records.len(),
        completion: done.len() as f64 / records.len() as f64,
        grasp_success,
        motion_number,
        action_efficiency,
    })
}

/// Scene, goal and mode of one evaluation run.
pub fn arrangement_scene(
    arrangement: Arrangement,
    mode: Mode,
    cfg: &EvalConfig,
    world: &WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Scene, Option<u32>), BenchError> {
    match arrangement {
        Arrangement::Random { n_objects, seed } => gen_random_arrangement(n_objects, seed, mode, world),
        Arrangement::Challenge { id } => {
            let (scene, goal) = challenge_case(id)?;
            let j = cfg.jitter;
            let scene = if j > 0.0 {
                let shifted = scene.translated(Vec2::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j)));
                if shifted.validate(world.overlap_tol).is_ok() { shifted } else { scene }
            } else {
                scene
            };
            Ok((scene, if mode == Mode::Oriented { Some(goal) } else { None }))
        }
    }
}

/// Independent rng for run `run` of an evaluation seeded with `seed`.
pub fn episode_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((crate::curriculum::streams::EVAL << 32) | run as u64);
    r
}

/// `runs` episodes of one arrangement, fanned out across the thread pool and
/// returned in run order. Random arrangements use `seed + run` as scene seed.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &NetworkParams<f32>,
    profile: &Profile,
    arrangement: Arrangement,
    mode: Mode,
    runs: usize,
    seed: u64,
    grasp_only: bool,
) -> Result<Vec<EpisodeRecord>, BenchError> {
    let cfg = &profile.eval;
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = episode_rng(seed, run);
            let arr = match arrangement {
                Arrangement::Random { n_objects, seed: s } => Arrangement::Random { n_objects, seed: s.wrapping_add(run as u64) },
                a => a,
            };
            let (scene, goal) = arrangement_scene(arr, mode, cfg, &profile.world, &mut rng)?;
            let record = EpisodeRecord::new(arr, run, mode, goal, &scene);
            let mut policy = GreedyPolicy { params, profile, grasp_only, epsilon: cfg.epsilon, rng };
            run_episode(&mut policy, &scene, mode, goal, profile, cfg, record)
        })
        .collect()
}
