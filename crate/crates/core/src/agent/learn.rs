use rand::Rng;

use super::replay::ReplayBuffer;
use super::{td_target_with, AgentConfig, AgentError};
use crate::percept::{render_config, PerceptConfig};
use crate::qfunc::{
    adam_step, backward_into, encode_input, forward, huber, q_at, rotate_tensor, rotated_pixel, AdamState, Heads,
    InputNorm, NetworkParams, Tensor,
};
use crate::world::Scene;

/// Online and target networks with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub online: NetworkParams<f32>,
    pub target: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    pub updates: u64,
}

impl Learner {
    pub fn new(params: NetworkParams<f32>) -> Learner {
        let adam = AdamState::new(params.len());
        Learner { target: params.clone(), online: params, adam, updates: 0 }
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnStats {
    /// Importance-weighted mean Huber loss.
    pub loss: f64,
    pub indices: Vec<usize>,
    pub priorities: Vec<f64>,
}

pub fn state_input(scene: &Scene, pcfg: &PerceptConfig, norm: &InputNorm) -> Tensor<f32> {
    encode_input(&render_config(scene, pcfg).0, norm)
}

/// Samples a batch, regresses executed-pixel Q values onto Double DQN
/// targets, takes one Adam step, refreshes priorities, and syncs the target
/// network every `target_sync_period` updates.
pub fn learn_step<R: Rng + ?Sized>(
    learner: &mut Learner,
    buffer: &mut ReplayBuffer,
    cfg: &AgentConfig,
    beta: f64,
    pcfg: &PerceptConfig,
    norm: &InputNorm,
    rng: &mut R,
) -> Result<LearnStats, AgentError> {
    let batch = cfg.replay.batch.min(buffer.len()).max(1);
    let sample = buffer.sample(batch, cfg.replay.alpha, beta, rng)?;
    let mut grads = vec![0.0f32; learner.online.len()];
    let mut loss = 0.0;
    let mut priorities = Vec::with_capacity(batch);
    let scale = 1.0 / batch as f64;
    for (&slot, &w) in sample.indices.iter().zip(&sample.weights) {
        let t = buffer.get(slot);
        let a = t.action;
        let input = state_input(&t.scene, pcfg, norm);
        let trace = forward(&learner.online, &rotate_tensor(&input, a.k, false), Heads::Only(a.primitive))?;
        let pix = rotated_pixel(input.rows, a.k, a.row, a.col);
        let q = pix.map_or(0.0, |(r, c)| f64::from(trace.q(a.primitive).expect("head").at(0, r, c)));
        let mut err = None;
        let y = td_target_with(
            t.reward,
            t.next_argmax,
            |na| {
                let next = state_input(&t.next_scene, pcfg, norm);
                match q_at(&learner.target, &next, na.primitive, na.k, na.row, na.col) {
                    Ok(v) => f64::from(v),
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            t.terminal,
            cfg.gamma,
        );
        if let Some(e) = err {
            return Err(e.into());
        }
        let delta = q - y;
        let (l, dl) = huber(delta, cfg.huber_kappa);
        loss += w * l * scale;
        if let Some((r, c)) = pix {
            backward_into(&learner.online, &trace, a.primitive, r, c, (w * dl * scale) as f32, &mut grads)?;
        }
        priorities.push(delta.abs() + cfg.replay.priority_eps);
    }
    let modules = learner.online.layout.module_ranges();
    adam_step(learner.online.data_mut(), &grads, &mut learner.adam, &cfg.adam, &modules)?;
    buffer.update(&sample.indices, &priorities);
    learner.updates += 1;
    if cfg.target_sync_period > 0 && learner.updates % cfg.target_sync_period == 0 {
        learner.sync_target();
    }
    Ok(LearnStats { loss, indices: sample.indices, priorities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Mode, PixelAction, Transition};
    use crate::qfunc::{init_params, ArchConfig};
    use crate::world::{spawn_random, Primitive, SpawnConfig, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (PerceptConfig, ArchConfig) {
        (PerceptConfig { map_size: 32, ..PerceptConfig::default() }, ArchConfig::tiny())
    }

    fn transition(reward: f64) -> Transition {
        let scene = spawn_random(0, 3, 5, &WorldConfig::default(), &SpawnConfig::default()).unwrap();
        Transition {
            scene: scene.clone(),
            goal_id: None,
            mode: Mode::Agnostic,
            action: PixelAction { primitive: Primitive::Grasp, k: 3, row: 14, col: 17 },
            reward,
            next_scene: scene,
            terminal: true,
            next_argmax: None,
        }
    }

    #[test]
    fn zero_td_error_leaves_params() {
        let (pcfg, arch) = small();
        // zero network predicts 0 everywhere; a terminal zero reward matches it
        let p = crate::qfunc::NetworkParams::zeros(&arch).unwrap();
        let mut l = Learner::new(p.clone());
        let mut b = ReplayBuffer::new(10);
        b.insert(transition(0.0));
        let cfg = AgentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = learn_step(&mut l, &mut b, &cfg, 0.4, &pcfg, &InputNorm::default(), &mut rng).unwrap();
        assert_eq!(s.loss, 0.0);
        assert_eq!(l.online, p);
        assert_eq!(s.indices, vec![0]);
        assert_eq!(b.priority(0), cfg.replay.priority_eps);
    }

    #[test]
    fn loss_falls_on_a_frozen_transition() {
        let (pcfg, arch) = small();
        let mut l = Learner::new(init_params(3, &arch).unwrap());
        let mut b = ReplayBuffer::new(10);
        b.insert(transition(1.0));
        let cfg = AgentConfig { adam: crate::qfunc::AdamConfig { lr: 1e-3, ..Default::default() }, ..AgentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let losses: Vec<f64> = (0..50)
            .map(|_| learn_step(&mut l, &mut b, &cfg, 0.4, &pcfg, &InputNorm::default(), &mut rng).unwrap().loss)
            .collect();
        assert!(losses[49] < losses[0] * 0.1, "{} -> {}", losses[0], losses[49]);
    }

    #[test]
    fn target_stays_frozen_between_syncs() {
        let (pcfg, arch) = small();
        let mut l = Learner::new(init_params(3, &arch).unwrap());
        let before = l.target.clone();
        let mut b = ReplayBuffer::new(10);
        b.insert(transition(1.0));
        let cfg = AgentConfig { target_sync_period: 3, ..AgentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2 {
            learn_step(&mut l, &mut b, &cfg, 0.4, &pcfg, &InputNorm::default(), &mut rng).unwrap();
            assert_eq!(l.target, before);
        }
        learn_step(&mut l, &mut b, &cfg, 0.4, &pcfg, &InputNorm::default(), &mut rng).unwrap();
        assert_eq!(l.target, l.online);
    }
}
