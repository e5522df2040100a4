use alloc::vec;
use alloc::vec::Vec;

use super::dense::{accumulate_input_grad, accumulate_weight_grad, affine, matvec};
use super::{BackboneLayout, NetParams};
use crate::math::{exp, sqrt, tanh};

/// Cached activations of one backbone pass.
pub struct BackboneTrace {
    /// Backbone input slots: `(start, x_1, .., x_{n-1})`, `n x C`.
    slots: Vec<f64>,
    /// Hidden states per layer, `(depth + 1) x n x W`.
    hidden: Vec<Vec<f64>>,
    kind: TraceKind,
}

enum TraceKind {
    PrefixSum {
        /// Slot encodings `tanh(E_k y_k + e_k)`, `n x W`.
        enc: Vec<f64>,
    },
    Attention {
        blocks: Vec<AttnCache>,
    },
}

struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Row `i` holds weights over slots `0..=i`, stored `n x n`.
    attn: Vec<f64>,
    o: Vec<f64>,
    /// `tanh(W_o o + b_o)`.
    act: Vec<f64>,
}

impl BackboneTrace {
    /// Final features, `n x W`.
    pub fn features(&self) -> &[f64] {
        self.hidden.last().map(|h| h.as_slice()).unwrap_or(&[])
    }
}

impl NetParams {
    /// Runs the backbone on `n x C` inputs; slot 0 is the start vector and
    /// input `n` is never read.
    pub(crate) fn backbone_forward(&self, inputs: &[f64]) -> BackboneTrace {
        let l = &self.layout;
        let p = &self.values;
        let s = &self.shape;
        let (n, c, w) = (s.positions, s.dim, s.width);
        let mut slots = vec![0.0; n * c];
        slots[..c].copy_from_slice(&p[l.start.clone()]);
        slots[c..].copy_from_slice(&inputs[..(n - 1) * c]);
        let pos = &p[l.pos.clone()];

        match &l.backbone {
            BackboneLayout::PrefixSum { enc_w, enc_b, layers_w, layers_b } => {
                let mut enc = vec![0.0; n * w];
                for k in 0..n {
                    let out = &mut enc[k * w..(k + 1) * w];
                    affine(&p[enc_w[k].clone()], &p[enc_b[k].clone()], &slots[k * c..(k + 1) * c], out);
                    out.iter_mut().for_each(|v| *v = tanh(*v));
                }
                let mut h0 = vec![0.0; n * w];
                let mut running = vec![0.0; w];
                for i in 0..n {
                    for (r, e) in running.iter_mut().zip(&enc[i * w..(i + 1) * w]) {
                        *r += e;
                    }
                    for ((h, r), q) in h0[i * w..(i + 1) * w].iter_mut().zip(&running).zip(&pos[i * w..(i + 1) * w]) {
                        *h = r + q;
                    }
                }
                let mut hidden = vec![h0];
                for (lw, lb) in layers_w.iter().zip(layers_b) {
                    let prev = hidden.last().expect("hidden");
                    let mut next = vec![0.0; n * w];
                    for i in 0..n {
                        let out = &mut next[i * w..(i + 1) * w];
                        affine(&p[lw.clone()], &p[lb.clone()], &prev[i * w..(i + 1) * w], out);
                        out.iter_mut().for_each(|v| *v = tanh(*v));
                    }
                    hidden.push(next);
                }
                BackboneTrace { slots, hidden, kind: TraceKind::PrefixSum { enc } }
            }
            BackboneLayout::Attention { emb_w, emb_b, blocks } => {
                let mut h0 = vec![0.0; n * w];
                for i in 0..n {
                    let out = &mut h0[i * w..(i + 1) * w];
                    affine(&p[emb_w.clone()], &p[emb_b.clone()], &slots[i * c..(i + 1) * c], out);
                    for (h, q) in out.iter_mut().zip(&pos[i * w..(i + 1) * w]) {
                        *h += q;
                    }
                }
                let scale = 1.0 / sqrt(w as f64);
                let mut hidden = vec![h0];
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let h = hidden.last().expect("hidden");
                    let mut q = vec![0.0; n * w];
                    let mut k = vec![0.0; n * w];
                    let mut v = vec![0.0; n * w];
                    for i in 0..n {
                        let hi = &h[i * w..(i + 1) * w];
                        matvec(&p[b.wq.clone()], hi, &mut q[i * w..(i + 1) * w]);
                        matvec(&p[b.wk.clone()], hi, &mut k[i * w..(i + 1) * w]);
                        matvec(&p[b.wv.clone()], hi, &mut v[i * w..(i + 1) * w]);
                    }
                    let mut attn = vec![0.0; n * n];
                    let mut o = vec![0.0; n * w];
                    for i in 0..n {
                        let qi = &q[i * w..(i + 1) * w];
                        let row = &mut attn[i * n..i * n + i + 1];
                        for (j, a) in row.iter_mut().enumerate() {
                            *a = scale * qi.iter().zip(&k[j * w..(j + 1) * w]).map(|(x, y)| x * y).sum::<f64>();
                        }
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut total = 0.0;
                        for a in row.iter_mut() {
                            *a = exp(*a - max);
                            total += *a;
                        }
                        for a in row.iter_mut() {
                            *a /= total;
                        }
                        let oi = &mut o[i * w..(i + 1) * w];
                        for (j, &a) in row.iter().enumerate() {
                            for (ov, vv) in oi.iter_mut().zip(&v[j * w..(j + 1) * w]) {
                                *ov += a * vv;
                            }
                        }
                    }
                    let mut act = vec![0.0; n * w];
                    let mut next = h.clone();
                    for i in 0..n {
                        let ai = &mut act[i * w..(i + 1) * w];
                        affine(&p[b.wo.clone()], &p[b.bo.clone()], &o[i * w..(i + 1) * w], ai);
                        for (a, nx) in ai.iter_mut().zip(&mut next[i * w..(i + 1) * w]) {
                            *a = tanh(*a);
                            *nx += *a;
                        }
                    }
                    hidden.push(next);
                    caches.push(AttnCache { q, k, v, attn, o, act });
                }
                BackboneTrace { slots, hidden, kind: TraceKind::Attention { blocks: caches } }
            }
        }
    }

    /// Backpropagates `d loss / d features` into `grad` and, if requested,
    /// into the inputs (`n x C`; the last position always receives zero).
    pub(crate) fn backbone_backward(
        &self,
        trace: &BackboneTrace,
        d_features: &[f64],
        grad: &mut [f64],
        mut d_inputs: Option<&mut [f64]>,
    ) {
        let l = &self.layout;
        let p = &self.values;
        let s = &self.shape;
        let (n, c, w) = (s.positions, s.dim, s.width);
        let mut d_slots = vec![0.0; n * c];

        match (&l.backbone, &trace.kind) {
            (BackboneLayout::PrefixSum { enc_w, enc_b, layers_w, layers_b }, TraceKind::PrefixSum { enc }) => {
                let mut dh = d_features.to_vec();
                for li in (0..layers_w.len()).rev() {
                    let out = &trace.hidden[li + 1];
                    let inp = &trace.hidden[li];
                    let mut d_prev = vec![0.0; n * w];
                    for i in 0..n {
                        let dpre: Vec<f64> = dh[i * w..(i + 1) * w]
                            .iter()
                            .zip(&out[i * w..(i + 1) * w])
                            .map(|(d, a)| d * (1.0 - a * a))
                            .collect();
                        let (gw, gb) = split_pair(grad, &layers_w[li], &layers_b[li]);
                        accumulate_weight_grad(gw, Some(gb), &inp[i * w..(i + 1) * w], &dpre);
                        accumulate_input_grad(&p[layers_w[li].clone()], &dpre, &mut d_prev[i * w..(i + 1) * w]);
                    }
                    dh = d_prev;
                }
                for (g, d) in grad[l.pos.clone()].iter_mut().zip(&dh) {
                    *g += d;
                }
                // slot k contributes to every position i >= k
                let mut suffix = vec![0.0; w];
                for k in (0..n).rev() {
                    for (sx, d) in suffix.iter_mut().zip(&dh[k * w..(k + 1) * w]) {
                        *sx += d;
                    }
                    let dpre: Vec<f64> = suffix
                        .iter()
                        .zip(&enc[k * w..(k + 1) * w])
                        .map(|(d, a)| d * (1.0 - a * a))
                        .collect();
                    let (gw, gb) = split_pair(grad, &enc_w[k], &enc_b[k]);
                    accumulate_weight_grad(gw, Some(gb), &trace.slots[k * c..(k + 1) * c], &dpre);
                    accumulate_input_grad(&p[enc_w[k].clone()], &dpre, &mut d_slots[k * c..(k + 1) * c]);
                }
            }
            (BackboneLayout::Attention { emb_w, emb_b, blocks }, TraceKind::Attention { blocks: caches }) => {
                let scale = 1.0 / sqrt(w as f64);
                let mut dh = d_features.to_vec();
                for bi in (0..blocks.len()).rev() {
                    let b = &blocks[bi];
                    let cache = &caches[bi];
                    let h = &trace.hidden[bi];
                    // residual path
                    let mut d_in = dh.clone();
                    let mut d_o = vec![0.0; n * w];
                    for i in 0..n {
                        let dz: Vec<f64> = dh[i * w..(i + 1) * w]
                            .iter()
                            .zip(&cache.act[i * w..(i + 1) * w])
                            .map(|(d, a)| d * (1.0 - a * a))
                            .collect();
                        let (gw, gb) = split_pair(grad, &b.wo, &b.bo);
                        accumulate_weight_grad(gw, Some(gb), &cache.o[i * w..(i + 1) * w], &dz);
                        accumulate_input_grad(&p[b.wo.clone()], &dz, &mut d_o[i * w..(i + 1) * w]);
                    }
                    let mut dq = vec![0.0; n * w];
                    let mut dk = vec![0.0; n * w];
                    let mut dv = vec![0.0; n * w];
                    for i in 0..n {
                        let doi = &d_o[i * w..(i + 1) * w];
                        let row = &cache.attn[i * n..i * n + i + 1];
                        let da: Vec<f64> = (0..=i)
                            .map(|j| doi.iter().zip(&cache.v[j * w..(j + 1) * w]).map(|(x, y)| x * y).sum())
                            .collect();
                        for (j, &a) in row.iter().enumerate() {
                            for (g, d) in dv[j * w..(j + 1) * w].iter_mut().zip(doi) {
                                *g += a * d;
                            }
                        }
                        let mean: f64 = row.iter().zip(&da).map(|(a, d)| a * d).sum();
                        for j in 0..=i {
                            let ds = row[j] * (da[j] - mean) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for x in 0..w {
                                dq[i * w + x] += ds * cache.k[j * w + x];
                                dk[j * w + x] += ds * cache.q[i * w + x];
                            }
                        }
                    }
                    for i in 0..n {
                        let hi = &h[i * w..(i + 1) * w];
                        for (range, d) in [(&b.wq, &dq), (&b.wk, &dk), (&b.wv, &dv)] {
                            let di = &d[i * w..(i + 1) * w];
                            accumulate_weight_grad(&mut grad[range.clone()], None, hi, di);
                            accumulate_input_grad(&p[range.clone()], di, &mut d_in[i * w..(i + 1) * w]);
                        }
                    }
                    dh = d_in;
                }
                for (g, d) in grad[l.pos.clone()].iter_mut().zip(&dh) {
                    *g += d;
                }
                for i in 0..n {
                    let di = &dh[i * w..(i + 1) * w];
                    let (gw, gb) = split_pair(grad, emb_w, emb_b);
                    accumulate_weight_grad(gw, Some(gb), &trace.slots[i * c..(i + 1) * c], di);
                    accumulate_input_grad(&p[emb_w.clone()], di, &mut d_slots[i * c..(i + 1) * c]);
                }
            }
            _ => unreachable!("trace does not match the network layout"),
        }

        for (g, d) in grad[l.start.clone()].iter_mut().zip(&d_slots[..c]) {
            *g += d;
        }
        if let Some(dx) = d_inputs.as_deref_mut() {
            for (g, d) in dx[..(n - 1) * c].iter_mut().zip(&d_slots[c..]) {
                *g += d;
            }
        }
    }
}

/// Disjoint mutable borrows of a weight block and the bias block after it.
fn split_pair<'a>(
    grad: &'a mut [f64],
    w: &core::ops::Range<usize>,
    b: &core::ops::Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(w.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[w.clone()], &mut hi[..b.len()])
}
