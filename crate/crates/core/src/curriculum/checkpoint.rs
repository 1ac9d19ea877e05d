//! Versioned binary checkpoint of a [`TrainState`].
//!
//! Layout: 8-byte magic, u32 version, body, then the SHA-256 of everything
//! before it. All numbers little-endian; network weights and Adam moments as
//! f32.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TrainState;
use crate::agent::{Learner, Mode, PixelAction, ReplayBuffer, Transition};
use crate::qfunc::codec::{CodecError, Reader, Writer};
use crate::qfunc::NetworkParams;
use crate::world::{Primitive, Scene};

pub const MAGIC: &[u8; 8] = b"PGSYNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<CodecError> for CheckpointError {
    fn from(e: CodecError) -> Self {
        CheckpointError::Corrupt(e.to_string())
    }
}

fn put_rng(w: &mut Writer, r: &ChaCha8Rng) {
    w.bytes(&r.get_seed());
    w.u64(r.get_stream());
    let pos = r.get_word_pos();
    w.u64(pos as u64);
    w.u64((pos >> 64) as u64);
}

fn get_rng(r: &mut Reader) -> Result<ChaCha8Rng, CheckpointError> {
    use rand::SeedableRng;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    rng.set_word_pos(lo | (hi << 64));
    Ok(rng)
}

fn put_opt_u32(w: &mut Writer, v: Option<u32>) {
    match v {
        Some(x) => {
            w.u8(1);
            w.u32(x);
        }
        None => w.u8(0),
    }
}

fn get_opt_u32(r: &mut Reader) -> Result<Option<u32>, CheckpointError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(r.u32()?)),
        v => Err(CheckpointError::Corrupt(format!("option tag {v}"))),
    }
}

fn put_pixel(w: &mut Writer, a: &PixelAction) {
    w.u8(a.primitive.index() as u8);
    w.u32(a.k as u32);
    w.u32(a.row as u32);
    w.u32(a.col as u32);
}

fn get_pixel(r: &mut Reader) -> Result<PixelAction, CheckpointError> {
    let primitive = match r.u8()? {
        0 => Primitive::Grasp,
        1 => Primitive::Push,
        v => return Err(CheckpointError::Corrupt(format!("primitive tag {v}"))),
    };
    Ok(PixelAction { primitive, k: r.u32()? as usize, row: r.u32()? as usize, col: r.u32()? as usize })
}

fn get_scene(r: &mut Reader) -> Result<Scene, CheckpointError> {
    Scene::from_text(&r.str()?).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

fn put_transition(w: &mut Writer, t: &Transition) {
    w.str(&t.scene.to_text());
    put_opt_u32(w, t.goal_id);
    w.u8(match t.mode {
        Mode::Agnostic => 0,
        Mode::Oriented => 1,
    });
    put_pixel(w, &t.action);
    w.f64(t.reward);
    w.str(&t.next_scene.to_text());
    w.u8(t.terminal as u8);
    match &t.next_argmax {
        Some(a) => {
            w.u8(1);
            put_pixel(w, a);
        }
        None => w.u8(0),
    }
}

fn get_transition(r: &mut Reader) -> Result<Transition, CheckpointError> {
    let scene = get_scene(r)?;
    let goal_id = get_opt_u32(r)?;
    let mode = match r.u8()? {
        0 => Mode::Agnostic,
        1 => Mode::Oriented,
        v => return Err(CheckpointError::Corrupt(format!("mode tag {v}"))),
    };
    let action = get_pixel(r)?;
    let reward = r.f64()?;
    let next_scene = get_scene(r)?;
    let terminal = r.u8()? != 0;
    let next_argmax = match r.u8()? {
        0 => None,
        1 => Some(get_pixel(r)?),
        v => return Err(CheckpointError::Corrupt(format!("option tag {v}"))),
    };
    Ok(Transition { scene, goal_id, mode, action, reward, next_scene, terminal, next_argmax })
}

/// Serializes a training state; the replay buffer is stored only when asked.
pub fn write_checkpoint(state: &TrainState, with_replay: bool) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(state.stage);
    w.u64(state.step);
    w.params(&state.learner.online);
    w.f32s(state.learner.target.data());
    w.adam(&state.learner.adam);
    w.u64(state.learner.updates);
    put_rng(&mut w, &state.world_rng);
    put_rng(&mut w, &state.agent_rng);
    w.str(&state.scene.to_text());
    put_opt_u32(&mut w, state.goal_id);
    w.u32(state.stall);
    let hist: Vec<u8> = state.grasp_history.iter().map(|&b| b as u8).collect();
    w.len_prefixed(&hist);
    match &state.pending {
        Some(t) => {
            w.u8(1);
            put_transition(&mut w, t);
        }
        None => w.u8(0),
    }
    w.u64(state.replay.capacity() as u64);
    w.u8(with_replay as u8);
    if with_replay {
        let (items, prios, next) = state.replay.parts();
        w.u64(next as u64);
        w.u64(items.len() as u64);
        for (t, &p) in items.iter().zip(prios) {
            put_transition(&mut w, t);
            w.f64(p);
        }
    }
    let digest = Sha256::digest(&w.buf);
    w.bytes(&digest);
    w.buf
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TrainState, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(CheckpointError::Corrupt("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != VERSION {
        return Err(CheckpointError::VersionMismatch { found, expected: VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader::new(&body[12..]);
    let stage = r.u8()?;
    let step = r.u64()?;
    let online = r.params()?;
    let target_data = r.f32s()?;
    let target = NetworkParams::from_data(&online.arch, target_data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let adam = r.adam()?;
    if adam.m.len() != online.len() || adam.v.len() != online.len() {
        return Err(CheckpointError::Corrupt("optimizer state size".into()));
    }
    let updates = r.u64()?;
    let world_rng = get_rng(&mut r)?;
    let agent_rng = get_rng(&mut r)?;
    let scene = get_scene(&mut r)?;
    let goal_id = get_opt_u32(&mut r)?;
    let stall = r.u32()?;
    let grasp_history = r.len_prefixed()?.iter().map(|&b| b != 0).collect();
    let pending = match r.u8()? {
        0 => None,
        1 => Some(get_transition(&mut r)?),
        v => return Err(CheckpointError::Corrupt(format!("option tag {v}"))),
    };
    let capacity = r.u64()? as usize;
    let replay = if r.u8()? == 1 {
        let next = r.u64()? as usize;
        let n = r.u64()? as usize;
        let mut items = Vec::with_capacity(n.min(capacity));
        let mut prios = Vec::with_capacity(n.min(capacity));
        for _ in 0..n {
            items.push(get_transition(&mut r)?);
            prios.push(r.f64()?);
        }
        ReplayBuffer::from_parts(capacity, items, prios, next).ok_or_else(|| CheckpointError::Corrupt("replay layout".into()))?
    } else {
        if capacity == 0 {
            return Err(CheckpointError::Corrupt("replay capacity".into()));
        }
        ReplayBuffer::new(capacity)
    };
    if !r.is_done() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(TrainState {
        stage,
        step,
        scene,
        goal_id,
        learner: Learner { online, target, adam, updates },
        replay,
        world_rng,
        agent_rng,
        stall,
        pending,
        grasp_history,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path, with_replay: bool) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(state, with_replay)).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(&bytes)
}
