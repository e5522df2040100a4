//! Backbone + head networks shared by the generator, the guidance network and
//! the AR-diffusion initialization model.
//!
//! Parameters live in one flat vector; [`Layout`] maps named blocks to ranges
//! of it, so optimizers, EMA and finite-difference checks work on plain slices.
//!
//! The backbone reads `(start, x_1, .., x_{n-1})`: feature `f_i` sees the learned
//! start vector and the inputs strictly before position `i`. The head maps a
//! noisy token, a timestep encoding and `f_i` to a velocity.

mod backbone;
mod dense;
mod head;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::EmbedSeq;
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng;

pub use backbone::BackboneTrace;
pub use head::{time_features, HeadTrace, TIME_FEATURES};

/// Causal prefix encoder flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Sum of per-position input encodings followed by `depth` tanh layers.
    PrefixSum,
    /// `depth` residual blocks of causally masked single-head attention.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    /// Sequence length `n`.
    pub positions: usize,
    /// Token embedding dimension `C`.
    pub dim: usize,
    /// Backbone depth `D`.
    pub depth: usize,
    /// Backbone width `W` (feature dimension).
    pub width: usize,
    /// Hidden width of the two head layers.
    pub head_hidden: usize,
    pub backbone: BackboneKind,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.positions == 0 || self.dim == 0 || self.width == 0 || self.head_hidden == 0 {
            return Err(Error::param("network sizes must be positive"));
        }
        if self.depth == 0 {
            return Err(Error::param("backbone depth must be at least 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(*self)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionBlock {
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum BackboneLayout {
    PrefixSum {
        /// One encoder per backbone input slot (slot 0 is the start vector).
        enc_w: Vec<Range<usize>>,
        enc_b: Vec<Range<usize>>,
        layers_w: Vec<Range<usize>>,
        layers_b: Vec<Range<usize>>,
    },
    Attention {
        emb_w: Range<usize>,
        emb_b: Range<usize>,
        blocks: Vec<AttentionBlock>,
    },
}

/// Offsets of every parameter block.
#[derive(Debug, Clone)]
pub struct Layout {
    pub shape: NetShape,
    pub(crate) start: Range<usize>,
    pub(crate) pos: Range<usize>,
    pub(crate) backbone: BackboneLayout,
    pub(crate) h1_w: Range<usize>,
    pub(crate) h1_b: Range<usize>,
    pub(crate) h2_w: Range<usize>,
    pub(crate) h2_b: Range<usize>,
    pub(crate) out_w: Range<usize>,
    pub(crate) out_b: Range<usize>,
    /// Parameters before this offset belong to the backbone.
    pub(crate) head_offset: usize,
    pub(crate) total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, len: usize) -> Range<usize> {
        let r = self.0..self.0 + len;
        self.0 += len;
        r
    }
}

impl Layout {
    fn new(shape: NetShape) -> Self {
        let NetShape { positions: n, dim: c, depth: d, width: w, head_hidden: h, backbone } = shape;
        let mut a = Alloc(0);
        let start = a.take(c);
        let pos = a.take(n * w);
        let backbone = match backbone {
            BackboneKind::PrefixSum => {
                let mut enc_w = Vec::new();
                let mut enc_b = Vec::new();
                for _ in 0..n {
                    enc_w.push(a.take(w * c));
                    enc_b.push(a.take(w));
                }
                let mut layers_w = Vec::new();
                let mut layers_b = Vec::new();
                for _ in 0..d {
                    layers_w.push(a.take(w * w));
                    layers_b.push(a.take(w));
                }
                BackboneLayout::PrefixSum { enc_w, enc_b, layers_w, layers_b }
            }
            BackboneKind::Attention => {
                let emb_w = a.take(w * c);
                let emb_b = a.take(w);
                let blocks = (0..d)
                    .map(|_| AttentionBlock {
                        wq: a.take(w * w),
                        wk: a.take(w * w),
                        wv: a.take(w * w),
                        wo: a.take(w * w),
                        bo: a.take(w),
                    })
                    .collect();
                BackboneLayout::Attention { emb_w, emb_b, blocks }
            }
        };
        let head_offset = a.0;
        let h1_w = a.take(h * head_input_dim(&shape));
        let h1_b = a.take(h);
        let h2_w = a.take(h * h);
        let h2_b = a.take(h);
        let out_w = a.take(c * h);
        let out_b = a.take(c);
        Layout {
            shape,
            start,
            pos,
            backbone,
            h1_w,
            h1_b,
            h2_w,
            h2_b,
            out_w,
            out_b,
            head_offset,
            total: a.0,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Range of parameters owned by the head.
    pub fn head_range(&self) -> Range<usize> {
        self.head_offset..self.total
    }

    /// Range of the head's final (velocity) layer.
    pub fn final_layer_range(&self) -> Range<usize> {
        self.out_w.start..self.out_b.end
    }

    /// `(range, fan_in)` for every block, used for initialization.
    fn blocks(&self) -> Vec<(Range<usize>, usize)> {
        let s = &self.shape;
        let mut v = vec![(self.start.clone(), 1), (self.pos.clone(), 1)];
        match &self.backbone {
            BackboneLayout::PrefixSum { enc_w, enc_b, layers_w, layers_b } => {
                for (w, b) in enc_w.iter().zip(enc_b) {
                    v.push((w.clone(), s.dim));
                    v.push((b.clone(), s.dim));
                }
                for (w, b) in layers_w.iter().zip(layers_b) {
                    v.push((w.clone(), s.width));
                    v.push((b.clone(), s.width));
                }
            }
            BackboneLayout::Attention { emb_w, emb_b, blocks } => {
                v.push((emb_w.clone(), s.dim));
                v.push((emb_b.clone(), s.dim));
                for b in blocks {
                    for r in [&b.wq, &b.wk, &b.wv, &b.wo, &b.bo] {
                        v.push((r.clone(), s.width));
                    }
                }
            }
        }
        let hin = head_input_dim(s);
        v.push((self.h1_w.clone(), hin));
        v.push((self.h1_b.clone(), hin));
        v.push((self.h2_w.clone(), s.head_hidden));
        v.push((self.h2_b.clone(), s.head_hidden));
        v.push((self.out_w.clone(), s.head_hidden));
        v.push((self.out_b.clone(), s.head_hidden));
        v
    }
}

pub(crate) fn head_input_dim(s: &NetShape) -> usize {
    s.dim + TIME_FEATURES + s.width
}

/// Parameters of one backbone + head network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetParamsRepr", into = "NetParamsRepr")]
pub struct NetParams {
    shape: NetShape,
    values: Vec<f64>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct NetParamsRepr {
    shape: NetShape,
    values: Vec<f64>,
}

impl TryFrom<NetParamsRepr> for NetParams {
    type Error = Error;
    fn try_from(r: NetParamsRepr) -> Result<Self> {
        NetParams::from_values(r.shape, r.values)
    }
}

impl From<NetParams> for NetParamsRepr {
    fn from(p: NetParams) -> Self {
        NetParamsRepr { shape: p.shape, values: p.values }
    }
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

impl NetParams {
    /// Uniform `+-1/sqrt(fan_in)` initialization; `zero_final_head` zeroes the
    /// velocity layer so the fresh network predicts zero velocity.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R, zero_final_head: bool) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        let mut values = vec![0.0; layout.len()];
        for (range, fan_in) in layout.blocks() {
            let bound = 1.0 / sqrt(fan_in as f64);
            for v in &mut values[range] {
                *v = rng::uniform(rng, -bound, bound);
            }
        }
        if zero_final_head {
            values[layout.final_layer_range()].fill(0.0);
        }
        Ok(NetParams { shape, values, layout })
    }

    pub fn from_values(shape: NetShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        if values.len() != layout.len() {
            return Err(Error::Shape { expected: layout.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(NetParams { shape, values, layout })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Causal features `f_1..f_n` for an input sequence of length `n`.
    pub fn backbone_features(&self, inputs: &EmbedSeq) -> Result<Vec<Vec<f64>>> {
        self.check_seq(inputs)?;
        let trace = self.backbone_forward(inputs.as_slice());
        Ok(trace.features().chunks(self.shape.width).map(|c| c.to_vec()).collect())
    }

    /// Velocity predicted by the head.
    pub fn head_velocity(&self, x_t: &[f64], t: f64, f: &[f64]) -> Vec<f64> {
        self.head_forward(x_t, t, f).velocity().to_vec()
    }

    /// One-step generation `x_i = eps_i - v(eps_i, t = 1, f_i)` where the
    /// backbone consumes `(start, eps_1, .., eps_{n-1})`.
    pub fn generator_forward(&self, noise: &EmbedSeq) -> Result<EmbedSeq> {
        self.check_seq(noise)?;
        Ok(self.generator_trace(noise).output)
    }

    pub(crate) fn check_seq(&self, x: &EmbedSeq) -> Result<()> {
        if x.len() != self.shape.positions {
            return Err(Error::Length { expected: self.shape.positions, got: x.len() });
        }
        if x.dim() != self.shape.dim {
            return Err(Error::Dimension { expected: self.shape.dim, got: x.dim() });
        }
        Ok(())
    }

    pub(crate) fn generator_trace(&self, noise: &EmbedSeq) -> GeneratorTrace {
        let n = self.shape.positions;
        let c = self.shape.dim;
        let w = self.shape.width;
        let backbone = self.backbone_forward(noise.as_slice());
        let mut heads = Vec::with_capacity(n);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let eps = noise.position(i);
            let h = self.head_forward(eps, 1.0, &backbone.features()[i * w..(i + 1) * w]);
            for ((o, e), v) in out[i * c..(i + 1) * c].iter_mut().zip(eps).zip(h.velocity()) {
                *o = e - v;
            }
            heads.push(h);
        }
        GeneratorTrace { backbone, heads, output: EmbedSeq::from_raw(c, out) }
    }

    /// Accumulates parameter gradients given `d loss / d output`.
    pub(crate) fn generator_backward(&self, trace: &GeneratorTrace, d_out: &[f64], grad: &mut [f64]) {
        let n = self.shape.positions;
        let c = self.shape.dim;
        let w = self.shape.width;
        let mut d_feat = vec![0.0; n * w];
        let mut dv = vec![0.0; c];
        for i in 0..n {
            for (d, g) in dv.iter_mut().zip(&d_out[i * c..(i + 1) * c]) {
                *d = -g;
            }
            self.head_backward(&trace.heads[i], &dv, Some(grad), None, Some(&mut d_feat[i * w..(i + 1) * w]));
        }
        self.backbone_backward(&trace.backbone, &d_feat, grad, None);
    }
}

/// Forward record of one generator pass.
pub(crate) struct GeneratorTrace {
    pub backbone: BackboneTrace,
    pub heads: Vec<HeadTrace>,
    pub output: EmbedSeq,
}

#[cfg(test)]
mod tests;
