use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, Mode, PixelAction};
use crate::world::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    /// β is annealed linearly from `beta_start` to `beta_end` over the stage.
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_eps: f64,
    pub batch: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { capacity: 4000, alpha: 0.6, beta_start: 0.4, beta_end: 1.0, priority_eps: 1e-3, batch: 4 }
    }
}

/// One executed action. States are kept as scenes and re-rendered on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub scene: Scene,
    pub goal_id: Option<u32>,
    pub mode: Mode,
    pub action: PixelAction,
    pub reward: f64,
    pub next_scene: Scene,
    pub terminal: bool,
    /// Online argmax over the masked next-state maps, recorded when the next
    /// state was evaluated for acting.
    pub next_argmax: Option<PixelAction>,
}

/// Proportional prioritized replay with oldest-first eviction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    // slot that the next insert overwrites once full
    next: usize,
}

/// Drawn slots and their normalized importance weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::new(), priorities: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.items[slot]
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.priorities[slot]
    }

    pub fn max_priority(&self) -> f64 {
        self.priorities.iter().copied().fold(1.0, f64::max)
    }

    /// Slots from oldest to newest.
    pub fn order(&self) -> Vec<usize> {
        let n = self.items.len();
        if n < self.capacity {
            (0..n).collect()
        } else {
            (0..n).map(|i| (self.next + i) % n).collect()
        }
    }

    pub fn insert(&mut self, t: Transition) -> usize {
        self.insert_with_priority(t, self.max_priority())
    }

    pub fn insert_with_priority(&mut self, t: Transition, priority: f64) -> usize {
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.priorities.push(priority);
            self.items.len() - 1
        } else {
            let slot = self.next;
            self.items[slot] = t;
            self.priorities[slot] = priority;
            self.next = (slot + 1) % self.capacity;
            slot
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, alpha: f64, beta: f64, rng: &mut R) -> Result<Sample, AgentError> {
        let n = self.items.len();
        if n < batch || n == 0 {
            return Err(AgentError::InsufficientSamples { have: n, need: batch.max(1) });
        }
        let scaled: Vec<f64> = self.priorities.iter().map(|p| p.powf(alpha)).collect();
        let total: f64 = scaled.iter().sum();
        let dist = WeightedIndex::new(&scaled).map_err(|_| AgentError::InsufficientSamples { have: n, need: batch })?;
        let min_p = scaled.iter().copied().fold(f64::INFINITY, f64::min) / total;
        let max_w = (n as f64 * min_p).powf(-beta);
        let indices: Vec<usize> = (0..batch).map(|_| dist.sample(rng)).collect();
        let weights = indices.iter().map(|&i| (n as f64 * scaled[i] / total).powf(-beta) / max_w).collect();
        Ok(Sample { indices, weights })
    }

    pub fn update(&mut self, indices: &[usize], priorities: &[f64]) {
        for (&i, &p) in indices.iter().zip(priorities) {
            self.priorities[i] = p;
        }
    }

    /// Raw parts for checkpointing: items and priorities in slot order, and the eviction cursor.
    pub fn parts(&self) -> (&[Transition], &[f64], usize) {
        (&self.items, &self.priorities, self.next)
    }

    pub fn from_parts(capacity: usize, items: Vec<Transition>, priorities: Vec<f64>, next: usize) -> Option<Self> {
        if items.len() != priorities.len() || items.len() > capacity || capacity == 0 || next >= capacity.max(1) {
            return None;
        }
        Some(ReplayBuffer { capacity, items, priorities, next })
    }
}
