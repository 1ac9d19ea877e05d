use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{ArchConfig, ConvSlot, HeadLayout, Layout};
use super::real::Real;
use super::tensor::{
    add_assign, concat, conv_backward, conv_forward, leaky_relu, leaky_relu_backward, split, upsample2x,
    upsample2x_backward, Tensor,
};
use super::QError;
use crate::world::Primitive;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// All weights in one flat vector, addressed through [`Layout`].
#[derive(Debug)]
pub struct NetworkParams<S = f32> {
    pub arch: ArchConfig,
    pub layout: Layout,
    data: Vec<S>,
    // changes on every mutation so traces can detect staleness
    id: u64,
}

impl<S: Clone> Clone for NetworkParams<S> {
    fn clone(&self) -> Self {
        NetworkParams { arch: self.arch.clone(), layout: self.layout.clone(), data: self.data.clone(), id: self.id }
    }
}

impl<S: PartialEq> PartialEq for NetworkParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.data == other.data
    }
}

impl<S: Real> NetworkParams<S> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self, QError> {
        let layout = Layout::new(arch)?;
        Ok(NetworkParams { arch: arch.clone(), data: vec![S::zero(); layout.total], layout, id: fresh_id() })
    }

    pub fn from_data(arch: &ArchConfig, data: Vec<S>) -> Result<Self, QError> {
        let layout = Layout::new(arch)?;
        if data.len() != layout.total {
            return Err(QError::ShapeMismatch(format!("{} parameters for a {}-parameter arch", data.len(), layout.total)));
        }
        Ok(NetworkParams { arch: arch.clone(), data, layout, id: fresh_id() })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access; invalidates outstanding traces.
    pub fn data_mut(&mut self) -> &mut [S] {
        self.id = fresh_id();
        &mut self.data
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn cast<T: Real>(&self) -> NetworkParams<T> {
        NetworkParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect(),
            id: fresh_id(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
pub fn init_params<S: Real>(seed: u64, arch: &ArchConfig) -> Result<NetworkParams<S>, QError> {
    let mut p = NetworkParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (slot, _) in p.layout.slots() {
        let std = (2.0 / slot.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = slot.shape.out_ch * slot.shape.patch();
        for w in &mut p.data[slot.w_off..slot.w_off + n] {
            *w = S::from_f64_lossy(normal.sample(&mut rng));
        }
    }
    Ok(p)
}

#[derive(Clone, Debug)]
struct HeadTrace<S> {
    bottleneck: Option<Tensor<S>>,
    stage_in: Vec<Tensor<S>>,
    stage_out: Vec<Tensor<S>>,
    q: Tensor<S>,
}

/// Cached activations of one forward pass on one (rotated) input.
#[derive(Clone, Debug)]
pub struct ForwardTrace<S> {
    params_id: u64,
    input: Tensor<S>,
    enc: Vec<Tensor<S>>,
    heads: [Option<HeadTrace<S>>; 2],
}

impl<S: Real> ForwardTrace<S> {
    /// Q grid of a head computed in this pass.
    pub fn q(&self, p: Primitive) -> Option<&Tensor<S>> {
        self.heads[p.index()].as_ref().map(|h| &h.q)
    }
}

/// Which heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    Both,
    Only(Primitive),
}

impl Heads {
    fn wants(self, p: Primitive) -> bool {
        match self {
            Heads::Both => true,
            Heads::Only(q) => q == p,
        }
    }
}

fn slope<S: Real>(arch: &ArchConfig) -> S {
    S::from_f64_lossy(arch.leaky_slope)
}

fn conv<S: Real>(slot: &ConvSlot, data: &[S], x: &Tensor<S>) -> Tensor<S> {
    conv_forward(&slot.shape, slot.weights(data), slot.bias(data), x)
}

fn head_forward<S: Real>(h: &HeadLayout, arch: &ArchConfig, data: &[S], input: &Tensor<S>, enc: &[Tensor<S>]) -> HeadTrace<S> {
    let a = slope::<S>(arch);
    let depth = enc.len();
    let deepest = &enc[depth - 1];
    let bottleneck = h.bottleneck.as_ref().map(|b| leaky_relu(conv(b, data, deepest), a));
    let mut x = bottleneck.clone().unwrap_or_else(|| deepest.clone());
    let mut stage_in = Vec::with_capacity(depth);
    let mut stage_out = Vec::with_capacity(depth);
    for (j, slot) in h.stages.iter().enumerate() {
        let skip = if j + 1 < depth { &enc[depth - 2 - j] } else { input };
        let cat = concat(&upsample2x(&x), skip);
        let out = leaky_relu(conv(slot, data, &cat), a);
        stage_in.push(cat);
        x = out.clone();
        stage_out.push(out);
    }
    let q = conv(&h.output, data, &x);
    HeadTrace { bottleneck, stage_in, stage_out, q }
}

/// Runs the network on an already rotated input of shape `(C, H, W)`.
pub fn forward<S: Real>(params: &NetworkParams<S>, input: &Tensor<S>, heads: Heads) -> Result<ForwardTrace<S>, QError> {
    let arch = &params.arch;
    let m = arch.size_multiple();
    if input.channels != arch.input_channels || input.rows == 0 || input.rows % m != 0 || input.cols % m != 0 {
        return Err(QError::ShapeMismatch(format!(
            "input {}x{}x{} (need {} channels, sides divisible by {m})",
            input.channels, input.rows, input.cols, arch.input_channels
        )));
    }
    let a = slope::<S>(arch);
    let data = params.data();
    let mut enc: Vec<Tensor<S>> = Vec::with_capacity(arch.depth());
    for slot in &params.layout.encoder {
        let x = enc.last().unwrap_or(input);
        enc.push(leaky_relu(conv(slot, data, x), a));
    }
    let mut trace_heads = [None, None];
    for p in [Primitive::Grasp, Primitive::Push] {
        if let Some(h) = params.layout.head(p) {
            if heads.wants(p) {
                trace_heads[p.index()] = Some(head_forward(h, arch, data, input, &enc));
            }
        }
    }
    if let Heads::Only(p) = heads {
        if trace_heads[p.index()].is_none() {
            return Err(QError::MissingHead(p));
        }
    }
    Ok(ForwardTrace { params_id: params.id(), input: input.clone(), enc, heads: trace_heads })
}

fn conv_grad<S: Real>(
    slot: &ConvSlot,
    data: &[S],
    grads: &mut [S],
    x: &Tensor<S>,
    dy: &Tensor<S>,
    need_dx: bool,
) -> Option<Tensor<S>> {
    let nw = slot.shape.out_ch * slot.shape.patch();
    let (lo, hi) = grads.split_at_mut(slot.b_off);
    let dw = &mut lo[slot.w_off..slot.w_off + nw];
    let db = &mut hi[..slot.shape.out_ch];
    conv_backward(&slot.shape, slot.weights(data), x, dy, dw, db, need_dx)
}

/// Accumulates into `grads` the gradient of `d_loss_d_q · Q_p(row, col)`, with
/// `(row, col)` in the frame of the traced (rotated) input.
pub fn backward_into<S: Real>(
    params: &NetworkParams<S>,
    trace: &ForwardTrace<S>,
    primitive: Primitive,
    row: usize,
    col: usize,
    d_loss_d_q: S,
    grads: &mut [S],
) -> Result<(), QError> {
    if trace.params_id != params.id() {
        return Err(QError::StaleTrace);
    }
    if grads.len() != params.len() {
        return Err(QError::ShapeMismatch(format!("gradient buffer {} vs {} params", grads.len(), params.len())));
    }
    let ht = trace.heads[primitive.index()].as_ref().ok_or(QError::MissingHead(primitive))?;
    let h = params.layout.head(primitive).ok_or(QError::MissingHead(primitive))?;
    if row >= ht.q.rows || col >= ht.q.cols {
        return Err(QError::ShapeMismatch(format!("pixel ({row}, {col}) outside {}x{}", ht.q.rows, ht.q.cols)));
    }
    if d_loss_d_q == S::zero() {
        return Ok(());
    }
    let arch = &params.arch;
    let a = slope::<S>(arch);
    let data = params.data();
    let depth = trace.enc.len();

    let mut dq = Tensor::zeros(1, ht.q.rows, ht.q.cols);
    dq.data[row * ht.q.cols + col] = d_loss_d_q;
    let last = ht.stage_out.last().expect("at least one stage");
    let mut dx = conv_grad(&h.output, data, grads, last, &dq, true).expect("dx");

    // encoder gradients collected from skips, then from the deepest path
    let mut d_enc: Vec<Option<Tensor<S>>> = vec![None; depth];
    for j in (0..depth).rev() {
        let dz = leaky_relu_backward(&ht.stage_out[j], dx, a);
        let dcat = conv_grad(&h.stages[j], data, grads, &ht.stage_in[j], &dz, true).expect("dx");
        let up_ch = ht.stage_in[j].channels - if j + 1 < depth { trace.enc[depth - 2 - j].channels } else { trace.input.channels };
        let (dup, dskip) = split(dcat, up_ch);
        if j + 1 < depth {
            accumulate(&mut d_enc[depth - 2 - j], dskip);
        }
        dx = upsample2x_backward(&dup);
    }
    let d_deepest = match (&h.bottleneck, &ht.bottleneck) {
        (Some(slot), Some(out)) => {
            let dz = leaky_relu_backward(out, dx, a);
            conv_grad(slot, data, grads, &trace.enc[depth - 1], &dz, true).expect("dx")
        }
        _ => dx,
    };
    accumulate(&mut d_enc[depth - 1], d_deepest);

    for i in (0..depth).rev() {
        let Some(d) = d_enc[i].take() else { continue };
        let dz = leaky_relu_backward(&trace.enc[i], d, a);
        let x = if i == 0 { &trace.input } else { &trace.enc[i - 1] };
        if let Some(dprev) = conv_grad(&params.layout.encoder[i], data, grads, x, &dz, i > 0) {
            accumulate(&mut d_enc[i - 1], dprev);
        }
    }
    Ok(())
}

fn accumulate<S: Real>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        Some(acc) => add_assign(acc, &g),
        None => *slot = Some(g),
    }
}

/// Fresh gradient vector for a single pixel loss.
pub fn backward<S: Real>(
    params: &NetworkParams<S>,
    trace: &ForwardTrace<S>,
    primitive: Primitive,
    row: usize,
    col: usize,
    d_loss_d_q: S,
) -> Result<Vec<S>, QError> {
    let mut g = vec![S::zero(); params.len()];
    backward_into(params, trace, primitive, row, col, d_loss_d_q, &mut g)?;
    Ok(g)
}
