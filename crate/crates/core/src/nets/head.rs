use alloc::vec;
use alloc::vec::Vec;

use super::dense::{accumulate_input_grad, accumulate_weight_grad, affine};
use super::NetParams;
use crate::math::{cos, sin, tanh};

/// Timestep encoding width: `t`, `sin 2 pi t`, `cos 2 pi t`.
pub const TIME_FEATURES: usize = 3;

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let a = 2.0 * core::f64::consts::PI * t;
    [t, sin(a), cos(a)]
}

/// Cached activations of one head evaluation.
pub struct HeadTrace {
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    v: Vec<f64>,
}

impl HeadTrace {
    pub fn velocity(&self) -> &[f64] {
        &self.v
    }
}

impl NetParams {
    pub(crate) fn head_forward(&self, x_t: &[f64], t: f64, f: &[f64]) -> HeadTrace {
        let l = &self.layout;
        let p = &self.values;
        let hdim = self.shape.head_hidden;
        let mut input = Vec::with_capacity(x_t.len() + TIME_FEATURES + f.len());
        input.extend_from_slice(x_t);
        input.extend_from_slice(&time_features(t));
        input.extend_from_slice(f);
        let mut a1 = vec![0.0; hdim];
        affine(&p[l.h1_w.clone()], &p[l.h1_b.clone()], &input, &mut a1);
        a1.iter_mut().for_each(|v| *v = tanh(*v));
        let mut a2 = vec![0.0; hdim];
        affine(&p[l.h2_w.clone()], &p[l.h2_b.clone()], &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = tanh(*v));
        let mut v = vec![0.0; self.shape.dim];
        affine(&p[l.out_w.clone()], &p[l.out_b.clone()], &a2, &mut v);
        HeadTrace { input, a1, a2, v }
    }

    /// Backpropagates `d loss / d velocity`. Each destination is optional:
    /// parameter gradients, the noisy-token input and the feature input.
    pub(crate) fn head_backward(
        &self,
        trace: &HeadTrace,
        dv: &[f64],
        grad: Option<&mut [f64]>,
        d_x: Option<&mut [f64]>,
        d_f: Option<&mut [f64]>,
    ) {
        let l = &self.layout;
        let p = &self.values;
        let hdim = self.shape.head_hidden;
        let c = self.shape.dim;

        let mut da2 = vec![0.0; hdim];
        accumulate_input_grad(&p[l.out_w.clone()], dv, &mut da2);
        let dpre2: Vec<f64> = da2.iter().zip(&trace.a2).map(|(d, a)| d * (1.0 - a * a)).collect();
        let mut da1 = vec![0.0; hdim];
        accumulate_input_grad(&p[l.h2_w.clone()], &dpre2, &mut da1);
        let dpre1: Vec<f64> = da1.iter().zip(&trace.a1).map(|(d, a)| d * (1.0 - a * a)).collect();

        if let Some(grad) = grad {
            let (lo, hi) = grad.split_at_mut(l.out_b.start);
            accumulate_weight_grad(&mut lo[l.out_w.clone()], Some(&mut hi[..c]), &trace.a2, dv);
            let (lo, hi) = grad.split_at_mut(l.h2_b.start);
            accumulate_weight_grad(&mut lo[l.h2_w.clone()], Some(&mut hi[..hdim]), &trace.a1, &dpre2);
            let (lo, hi) = grad.split_at_mut(l.h1_b.start);
            accumulate_weight_grad(&mut lo[l.h1_w.clone()], Some(&mut hi[..hdim]), &trace.input, &dpre1);
        }
        if d_x.is_some() || d_f.is_some() {
            let mut d_in = vec![0.0; trace.input.len()];
            accumulate_input_grad(&p[l.h1_w.clone()], &dpre1, &mut d_in);
            if let Some(dx) = d_x {
                for (g, d) in dx.iter_mut().zip(&d_in[..c]) {
                    *g += d;
                }
            }
            if let Some(df) = d_f {
                for (g, d) in df.iter_mut().zip(&d_in[c + TIME_FEATURES..]) {
                    *g += d;
                }
            }
        }
    }
}
