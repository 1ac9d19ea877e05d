use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::bench::EvalConfig;
use crate::percept::PerceptConfig;
use crate::qfunc::{ArchConfig, InputNorm};
use crate::world::{SpawnConfig, WorldConfig};

/// Network shape and input scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub arch: ArchConfig,
    pub norm: InputNorm,
    /// Evaluate the 16 rotations on the rayon pool.
    pub parallel: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { arch: ArchConfig::default(), norm: InputNorm::default(), parallel: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub n_goal_candidates: usize,
    pub n_obstacles: usize,
    pub steps: u64,
    pub grasp_reward: f64,
    pub push_reward: f64,
    /// Summed displacement a stage-1 push needs for its reward (m).
    pub scatter_threshold: f64,
    /// Consecutive actions without any change before the scene is redropped.
    pub stall_limit: u32,
    /// Stage 1 redrops when fewer objects remain.
    pub min_objects: usize,
    pub spawn: SpawnConfig,
}

impl StageConfig {
    pub fn stage1() -> Self {
        StageConfig {
            n_goal_candidates: 0,
            n_obstacles: 3,
            steps: 800,
            grasp_reward: 1.0,
            push_reward: 0.5,
            scatter_threshold: 0.03,
            stall_limit: 10,
            min_objects: 2,
            spawn: SpawnConfig::default(),
        }
    }

    pub fn stage2() -> Self {
        StageConfig {
            n_goal_candidates: 2,
            n_obstacles: 6,
            steps: 1500,
            spawn: SpawnConfig { cluster_radius: Some(0.06), ..SpawnConfig::default() },
            ..StageConfig::stage1()
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::stage1()
    }
}

/// Everything a run needs besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profile {
    pub world: WorldConfig,
    pub percept: PerceptConfig,
    pub net: NetConfig,
    pub agent: AgentConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub eval: EvalConfig,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            world: WorldConfig::default(),
            percept: PerceptConfig::default(),
            net: NetConfig::default(),
            agent: AgentConfig::default(),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            eval: EvalConfig::default(),
        }
    }
}

impl Profile {
    /// Single-core scale: 64×64 maps, few objects, short stages.
    pub fn desk() -> Self {
        Profile::default()
    }

    /// Object counts, stage lengths and map resolution at the original scale.
    pub fn paper() -> Self {
        let mut p = Profile::default();
        p.percept.map_size = 224;
        p.percept.border_radius = 14;
        p.percept.push_dilate_radius = 10;
        p.stage1.n_obstacles = 10;
        p.stage1.steps = 3000;
        p.stage2.n_goal_candidates = 7;
        p.stage2.n_obstacles = 23;
        p.stage2.steps = 5000;
        p.eval.random_objects = 30;
        p
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Profile::desk()),
            "paper" => Some(Profile::paper()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let p: Profile = toml::from_str(text).map_err(|e| e.to_string())?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.agent.validate()?;
        self.net.arch.validate().map_err(|e| e.to_string())?;
        let m = self.net.arch.size_multiple();
        if self.percept.map_size == 0 || self.percept.map_size % m != 0 {
            return Err(format!("map_size {} must be a positive multiple of {m}", self.percept.map_size));
        }
        if self.net.arch.input_channels != 4 {
            return Err("the network reads 4 input channels (RGB + height)".into());
        }
        if self.stage2.n_goal_candidates == 0 {
            return Err("stage 2 needs at least one goal candidate".into());
        }
        if self.stage1.n_goal_candidates + self.stage1.n_obstacles == 0 {
            return Err("stage 1 needs objects".into());
        }
        Ok(())
    }
}
