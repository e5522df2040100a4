//! Affine layers over flat row-major weight slices.

/// `out = W x + b`, with `W` of shape `out.len() x x.len()`.
#[inline]
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// `out = W x` without a bias.
#[inline]
pub fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Accumulates `gw += dout x^T` and, if given, `gb += dout`.
#[inline]
pub fn accumulate_weight_grad(gw: &mut [f64], gb: Option<&mut [f64]>, x: &[f64], dout: &[f64]) {
    let cols = x.len();
    for (r, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, xi) in row.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    if let Some(gb) = gb {
        for (g, d) in gb.iter_mut().zip(dout) {
            *g += d;
        }
    }
}

/// Accumulates `dx += W^T dout`.
#[inline]
pub fn accumulate_input_grad(w: &[f64], dout: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (g, wi) in dx.iter_mut().zip(row) {
            *g += d * wi;
        }
    }
}
