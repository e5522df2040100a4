//! Finite-difference oracles shared by unit tests.

use alloc::vec::Vec;

use rand::Rng;

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let up = f(&y);
    y[i] = x[i] - h;
    let down = f(&y);
    (up - down) / (2.0 * h)
}

/// Relative error with a small absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Checks `grad` against central differences on `count` random coordinates
/// and returns the worst relative error.
pub fn worst_fd_error<R: Rng>(
    rng: &mut R,
    x: &[f64],
    grad: &[f64],
    count: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let coords: Vec<usize> = (0..count).map(|_| rng.random_range(0..x.len())).collect();
    coords
        .into_iter()
        .map(|i| rel_err(central_difference(x, i, h, &mut f), grad[i]))
        .fold(0.0, f64::max)
}
