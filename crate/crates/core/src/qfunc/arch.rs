use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tensor::ConvShape;
use super::QError;
use crate::world::Primitive;

/// Network shape: a strided encoder shared by a grasp head and (optionally) a
/// push head. Each head optionally squeezes the deepest encoder features with a
/// 1×1 conv, then per decoder stage upsamples 2×, concatenates the encoder
/// features at that resolution (the raw input at full resolution), and applies
/// a 3×3 conv. A final 1×1 conv yields one Q channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub encoder_channels: Vec<usize>,
    /// 0 disables the squeeze conv.
    pub bottleneck_channels: usize,
    /// One entry per encoder stage, deepest first.
    pub decoder_channels: Vec<usize>,
    pub leaky_slope: f64,
    /// `false` builds the grasping-only ablation.
    pub push_head: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_channels: 4,
            encoder_channels: vec![16, 32, 64],
            bottleneck_channels: 16,
            decoder_channels: vec![16, 8, 4],
            leaky_slope: 0.01,
            push_head: true,
        }
    }
}

impl ArchConfig {
    /// A net of a couple thousand parameters for finite-difference checks.
    pub fn tiny() -> Self {
        ArchConfig {
            input_channels: 4,
            encoder_channels: vec![4, 8],
            bottleneck_channels: 4,
            decoder_channels: vec![8, 4],
            leaky_slope: 0.1,
            push_head: true,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<(), QError> {
        let bad = |m: &str| Err(QError::InvalidArch(m.to_string()));
        if self.encoder_channels.is_empty() {
            return bad("encoder needs at least one layer");
        }
        if self.decoder_channels.len() != self.encoder_channels.len() {
            return bad("decoder needs one stage per encoder stage");
        }
        if self.input_channels == 0 || self.encoder_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return bad("channel counts must be positive");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope <= 1.0) {
            return bad("leaky slope must lie in [0, 1]");
        }
        Ok(())
    }

    /// Input side lengths must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSlot {
    pub shape: ConvShape,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvSlot {
    pub fn weights<'a, S>(&self, data: &'a [S]) -> &'a [S] {
        &data[self.w_off..self.w_off + self.shape.out_ch * self.shape.patch()]
    }

    pub fn bias<'a, S>(&self, data: &'a [S]) -> &'a [S] {
        &data[self.b_off..self.b_off + self.shape.out_ch]
    }

    pub fn fan_in(&self) -> usize {
        self.shape.patch()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadLayout {
    pub bottleneck: Option<ConvSlot>,
    pub stages: Vec<ConvSlot>,
    pub output: ConvSlot,
    pub range: Range<usize>,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub encoder: Vec<ConvSlot>,
    pub encoder_range: Range<usize>,
    pub grasp: HeadLayout,
    pub push: Option<HeadLayout>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Result<Layout, QError> {
        arch.validate()?;
        let mut off = 0usize;
        let mut slot = |in_ch: usize, out_ch: usize, kernel: usize, stride: usize| {
            let shape = ConvShape { in_ch, out_ch, kernel, stride, pad: kernel / 2 };
            let s = ConvSlot { shape, w_off: off, b_off: off + out_ch * shape.patch() };
            off = s.b_off + out_ch;
            s
        };
        let mut encoder = Vec::new();
        let mut ch = arch.input_channels;
        for &c in &arch.encoder_channels {
            encoder.push(slot(ch, c, 3, 2));
            ch = c;
        }
        let encoder_range = 0..encoder.last().map(|s| s.b_off + s.shape.out_ch).unwrap_or(0);

        let head = |slot: &mut dyn FnMut(usize, usize, usize, usize) -> ConvSlot| {
            let depth = arch.depth();
            let deepest = *arch.encoder_channels.last().unwrap();
            let bottleneck = (arch.bottleneck_channels > 0).then(|| slot(deepest, arch.bottleneck_channels, 1, 1));
            let mut ch = if arch.bottleneck_channels > 0 { arch.bottleneck_channels } else { deepest };
            let mut stages = Vec::new();
            for (j, &out) in arch.decoder_channels.iter().enumerate() {
                let skip = if j + 1 < depth { arch.encoder_channels[depth - 2 - j] } else { arch.input_channels };
                stages.push(slot(ch + skip, out, 3, 1));
                ch = out;
            }
            let output = slot(ch, 1, 1, 1);
            let start = bottleneck.map(|b| b.w_off).unwrap_or(stages[0].w_off);
            let end = output.b_off + 1;
            HeadLayout { bottleneck, stages, output, range: start..end }
        };
        let grasp = head(&mut slot);
        let push = if arch.push_head { Some(head(&mut slot)) } else { None };
        Ok(Layout { encoder, encoder_range, grasp, push, total: off })
    }

    pub fn head(&self, p: Primitive) -> Option<&HeadLayout> {
        match p {
            Primitive::Grasp => Some(&self.grasp),
            Primitive::Push => self.push.as_ref(),
        }
    }

    /// Parameter ranges treated as independent modules by the optimizer.
    pub fn module_ranges(&self) -> Vec<Range<usize>> {
        let mut v = vec![self.encoder_range.clone(), self.grasp.range.clone()];
        if let Some(p) = &self.push {
            v.push(p.range.clone());
        }
        v
    }

    /// All conv slots in layout order.
    pub fn slots(&self) -> Vec<(ConvSlot, bool)> {
        let mut out: Vec<(ConvSlot, bool)> = self.encoder.iter().map(|s| (*s, false)).collect();
        for h in std::iter::once(&self.grasp).chain(self.push.as_ref()) {
            out.extend(h.bottleneck.iter().map(|s| (*s, false)));
            out.extend(h.stages.iter().map(|s| (*s, false)));
            out.push((h.output, true));
        }
        out
    }
}

/// Inclusive per-axis interval of input pixels that can influence output pixel
/// `pos` of a map of side `size`, computed by walking the layer graph backwards.
pub fn receptive_interval(arch: &ArchConfig, size: usize, pos: usize) -> (usize, usize) {
    // interval at a given level, expressed in that level's pixel coordinates
    fn conv_back(lo: isize, hi: isize, kernel: isize, stride: isize, in_size: isize) -> (isize, isize) {
        let pad = kernel / 2;
        ((lo * stride - pad).max(0), (hi * stride - pad + kernel - 1).min(in_size - 1))
    }
    fn encoder_back(arch: &ArchConfig, size: usize, level: usize, lo: isize, hi: isize) -> (isize, isize) {
        // from encoder output `level` (1-based, size / 2^level) down to the input
        let (mut lo, mut hi) = (lo, hi);
        for l in (1..=level).rev() {
            let in_size = (size >> (l - 1)) as isize;
            (lo, hi) = conv_back(lo, hi, 3, 2, in_size);
        }
        let _ = arch;
        (lo, hi)
    }
    let depth = arch.depth();
    let mut lo_all = isize::MAX;
    let mut hi_all = isize::MIN;
    let mut merge = |(lo, hi): (isize, isize)| {
        lo_all = lo_all.min(lo);
        hi_all = hi_all.max(hi);
    };
    // output 1×1, then decoder stages from the top (full resolution) down
    let (mut lo, mut hi) = (pos as isize, pos as isize);
    for j in (0..depth).rev() {
        let level_size = (size >> (depth - 1 - j)) as isize;
        (lo, hi) = conv_back(lo, hi, 3, 1, level_size);
        // skip branch
        if j + 1 < depth {
            merge(encoder_back(arch, size, depth - 1 - j, lo, hi));
        } else {
            merge((lo, hi));
        }
        // upsample branch: nearest 2×
        (lo, hi) = (lo / 2, hi / 2);
    }
    // (bottleneck is 1×1) deepest encoder output
    merge(encoder_back(arch, size, depth, lo, hi));
    (lo_all as usize, hi_all as usize)
}
