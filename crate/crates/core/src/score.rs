//! Closed-form scores of a corrupted Dirac mixture.
//!
//! For a next-token distribution `p` over codes `c_j`, the corrupted token
//! `x_t = (1 - t) c + t eps` has density `sum_j p_j N(x_t; (1 - t) c_j, t^2 I)`.
//! Its score is `-(x_t - (1 - t) m) / t^2` where `m` is the posterior mean code.

use alloc::vec;
use alloc::vec::Vec;

use crate::codebook::{Codebook, ProbVector};
use crate::error::{Error, Result};
use crate::math::{exp, ln, log_sum_exp, sq_dist};
use crate::schedule::Schedule;

/// Log-weights further than this below the maximum are dropped.
pub const LOG_WEIGHT_CUTOFF: f64 = 700.0;

/// The ODE evaluates velocity at `1 - T1_OFFSET` in place of `t = 1`.
pub const T1_OFFSET: f64 = 1e-6;

/// Closest approach to `t = 1` accepted by [`score_to_velocity`].
pub const VELOCITY_T_TOLERANCE: f64 = 1e-9;

fn check_dims(cb: &Codebook, x: &[f64]) -> Result<()> {
    if x.len() != cb.dim() {
        return Err(Error::Dimension { expected: cb.dim(), got: x.len() });
    }
    Ok(())
}

/// Posterior over codes given a corrupted point.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// `(code index, normalized weight)`; codes with zero mass are absent.
    pub weights: Vec<(usize, f64)>,
    pub mean: Vec<f64>,
    /// Log of the normalizer, excluding the Gaussian constant.
    log_norm: f64,
    t: f64,
}

impl Posterior {
    pub fn new(p: &ProbVector, cb: &Codebook, x_t: &[f64], t: f64, sched: &Schedule) -> Result<Self> {
        sched.check(t)?;
        check_dims(cb, x_t)?;
        if p.len() != cb.vocab() {
            return Err(Error::Dimension { expected: cb.vocab(), got: p.len() });
        }
        let a = 1.0 - t;
        let inv = 1.0 / (2.0 * t * t);
        let mut logw: Vec<(usize, f64)> = Vec::with_capacity(cb.vocab());
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                let d: f64 = cb.entry(j).iter().zip(x_t).map(|(c, x)| (x - a * c) * (x - a * c)).sum();
                logw.push((j, ln(pj) - d * inv));
            }
        }
        if logw.is_empty() {
            return Err(Error::Degenerate);
        }
        let max = logw.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
        logw.retain(|w| w.1 >= max - LOG_WEIGHT_CUTOFF);
        let mut total = 0.0;
        for w in &mut logw {
            w.1 = exp(w.1 - max);
            total += w.1;
        }
        let mut mean = vec![0.0; cb.dim()];
        for w in &mut logw {
            w.1 /= total;
            for (m, c) in mean.iter_mut().zip(cb.entry(w.0)) {
                *m += w.1 * c;
            }
        }
        Ok(Posterior { weights: logw, mean, log_norm: max + ln(total), t })
    }

    /// `-(x_t - (1 - t) m) / t^2`.
    pub fn score(&self, x_t: &[f64]) -> Vec<f64> {
        let a = 1.0 - self.t;
        let t2 = self.t * self.t;
        x_t.iter().zip(&self.mean).map(|(x, m)| -(x - a * m) / t2).collect()
    }

    /// Posterior-mean velocity `(x_t - m) / t`, finite at `t = 1`.
    pub fn velocity(&self, x_t: &[f64]) -> Vec<f64> {
        x_t.iter().zip(&self.mean).map(|(x, m)| (x - m) / self.t).collect()
    }

    /// `J^T g` for the score Jacobian `J = -(I - (1-t)^2 Cov / t^2) / t^2`,
    /// where `Cov` is the posterior covariance of the code.
    pub fn score_vjp(&self, cb: &Codebook, g: &[f64]) -> Vec<f64> {
        let a = 1.0 - self.t;
        let t2 = self.t * self.t;
        let mut cov_g = vec![0.0; g.len()];
        for &(j, w) in &self.weights {
            let c = cb.entry(j);
            let proj: f64 = c.iter().zip(&self.mean).zip(g).map(|((c, m), g)| (c - m) * g).sum();
            for ((out, c), m) in cov_g.iter_mut().zip(c).zip(&self.mean) {
                *out += w * (c - m) * proj;
            }
        }
        g.iter()
            .zip(&cov_g)
            .map(|(g, cg)| -(g - a * a / t2 * cg) / t2)
            .collect()
    }
}

/// Closed-form conditional score of the corrupted mixture defined by `p`.
pub fn teacher_cond_score(
    p: &ProbVector,
    cb: &Codebook,
    x_t: &[f64],
    t: f64,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    Ok(Posterior::new(p, cb, x_t, t, sched)?.score(x_t))
}

/// `log sum_j p_j N(x_t; (1 - t) c_j, t^2 I)`.
pub fn mixture_logdensity(
    p: &ProbVector,
    cb: &Codebook,
    x_t: &[f64],
    t: f64,
    sched: &Schedule,
) -> Result<f64> {
    sched.check(t)?;
    check_dims(cb, x_t)?;
    let a = 1.0 - t;
    let terms: Vec<f64> = p
        .iter()
        .enumerate()
        .filter(|(_, &pj)| pj > 0.0)
        .map(|(j, &pj)| {
            let centre: Vec<f64> = cb.entry(j).iter().map(|c| a * c).collect();
            ln(pj) - sq_dist(x_t, &centre) / (2.0 * t * t)
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::Degenerate);
    }
    let c = cb.dim() as f64;
    Ok(log_sum_exp(&terms) - c * ln(t) - 0.5 * c * ln(2.0 * core::f64::consts::PI))
}

impl Posterior {
    /// Same value as [`mixture_logdensity`], reusing the normalizer.
    pub fn log_density(&self, dim: usize) -> f64 {
        let c = dim as f64;
        self.log_norm - c * ln(self.t) - 0.5 * c * ln(2.0 * core::f64::consts::PI)
    }
}

/// Score of `x_t` given its clean token: `-eps / t`.
pub fn gaussian_corruption_score(eps: &[f64], t: f64, sched: &Schedule) -> Result<Vec<f64>> {
    if t < sched.t_min {
        return Err(Error::Schedule { t, t_min: sched.t_min });
    }
    Ok(eps.iter().map(|e| -e / t).collect())
}

/// `v = -(t s + x_t) / (1 - t)`.
pub fn score_to_velocity(s: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    if t >= 1.0 - VELOCITY_T_TOLERANCE {
        return Err(Error::Boundary { t });
    }
    if s.len() != x_t.len() {
        return Err(Error::Dimension { expected: x_t.len(), got: s.len() });
    }
    Ok(s.iter().zip(x_t).map(|(s, x)| -(t * s + x) / (1.0 - t)).collect())
}

/// `s = -((1 - t) v + x_t) / t`.
pub fn velocity_to_score(v: &[f64], x_t: &[f64], t: f64, sched: &Schedule) -> Result<Vec<f64>> {
    if t < sched.t_min {
        return Err(Error::Schedule { t, t_min: sched.t_min });
    }
    if v.len() != x_t.len() {
        return Err(Error::Dimension { expected: x_t.len(), got: v.len() });
    }
    Ok(v.iter().zip(x_t).map(|(v, x)| -((1.0 - t) * v + x) / t).collect())
}

/// Integrates `dx/dt = v(x, t)` from `t = 1` down to `t_min` with uniform
/// Euler steps, using the teacher velocity of the mixture `p`.
pub fn euler_token_sample(
    p: &ProbVector,
    cb: &Codebook,
    x1: &[f64],
    steps: usize,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::param("Euler sampler needs at least one step"));
    }
    check_dims(cb, x1)?;
    if x1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Euler start point".into()));
    }
    let h = (1.0 - sched.t_min) / steps as f64;
    let mut x = x1.to_vec();
    for k in 0..steps {
        let t = 1.0 - k as f64 * h;
        let t_eval = t.min(1.0 - T1_OFFSET);
        let s = teacher_cond_score(p, cb, &x, t_eval, sched)?;
        let v = score_to_velocity(&s, &x, t_eval)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= h * vi;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::quantize_point;
    use crate::rng;
    use alloc::vec;

    fn line(entries: &[f64]) -> Codebook {
        Codebook::new(1, entries.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    const S: Schedule = Schedule { t_min: 1e-3 };

    #[test]
    fn single_code_is_gaussian_score() {
        let s = teacher_cond_score(&pv(&[1.0]), &line(&[0.0]), &[0.3], 0.5, &S).unwrap();
        assert!((s[0] + 1.2).abs() < 1e-15);
    }

    #[test]
    fn t_one_gives_standard_gaussian_score() {
        let s = teacher_cond_score(&pv(&[0.2, 0.8]), &line(&[-3.0, 2.0]), &[0.7], 1.0, &S).unwrap();
        assert_eq!(s, vec![-0.7]);
    }

    #[test]
    fn symmetric_mixture_cancels() {
        let s = teacher_cond_score(&pv(&[0.5, 0.5]), &line(&[-1.0, 1.0]), &[0.0], 0.5, &S).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn score_matches_logdensity_derivative() {
        let (p, cb) = (pv(&[0.5, 0.5]), line(&[-1.0, 1.0]));
        let s = teacher_cond_score(&p, &cb, &[0.2], 0.5, &S).unwrap()[0];
        let h = 1e-5 * 1.2;
        let fd = (mixture_logdensity(&p, &cb, &[0.2 + h], 0.5, &S).unwrap()
            - mixture_logdensity(&p, &cb, &[0.2 - h], 0.5, &S).unwrap())
            / (2.0 * h);
        assert!(((s - fd) / s).abs() < 1e-5, "{s} vs {fd}");
    }

    #[test]
    fn extreme_exponents_do_not_overflow() {
        let cb = line(&[-50.0, 50.0]);
        let s = teacher_cond_score(&pv(&[0.5, 0.5]), &cb, &[3.0], 1e-3, &S).unwrap();
        assert!(s[0].is_finite());
        let l = mixture_logdensity(&pv(&[0.5, 0.5]), &cb, &[3.0], 1e-3, &S).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn errors() {
        let cb = line(&[0.0, 1.0]);
        assert!(matches!(
            teacher_cond_score(&pv(&[0.5, 0.5]), &cb, &[0.0], 1e-4, &S),
            Err(Error::Schedule { .. })
        ));
        assert!(score_to_velocity(&[0.0], &[0.0], 1.0).is_err());
        assert!(velocity_to_score(&[0.0], &[0.0], 1e-4, &S).is_err());
        assert!(gaussian_corruption_score(&[0.0], 1e-4, &S).is_err());
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let l = mixture_logdensity(&pv(&[1.0]), &line(&[0.0]), &[0.0], 1.0, &S).unwrap();
        assert!((l - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let (p, cb) = (pv(&[0.3, 0.7]), line(&[-1.0, 1.5]));
        for t in [0.05, 0.3, 1.0] {
            let h = 1e-3;
            let total: f64 = (-12_000..=12_000)
                .map(|k| exp(mixture_logdensity(&p, &cb, &[k as f64 * h], t, &S).unwrap()) * h)
                .sum();
            assert!((total - 1.0).abs() < 1e-3, "t={t}: {total}");
        }
    }

    #[test]
    fn corruption_score_examples() {
        assert_eq!(gaussian_corruption_score(&[0.4], 0.5, &S).unwrap(), vec![-0.8]);
        assert_eq!(gaussian_corruption_score(&[0.0], 0.7, &S).unwrap(), vec![-0.0]);
        assert_eq!(gaussian_corruption_score(&[1.0], 1.0, &S).unwrap(), vec![-1.0]);
    }

    #[test]
    fn velocity_conversions() {
        let v = score_to_velocity(&[-1.2], &[0.3], 0.5).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        let s = velocity_to_score(&[0.6], &[0.3], 0.5, &S).unwrap();
        assert!((s[0] + 1.2).abs() < 1e-15);
        assert_eq!(score_to_velocity(&[0.0], &[0.0], 0.3).unwrap(), vec![0.0]);
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            let t = rng::uniform(&mut r, 1e-3, 0.999);
            let s = [rng::normal(&mut r), rng::normal(&mut r)];
            let x = [rng::normal(&mut r), rng::normal(&mut r)];
            let back = velocity_to_score(&score_to_velocity(&s, &x, t).unwrap(), &x, t, &S).unwrap();
            for (a, b) in s.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()) / t);
            }
        }
    }

    #[test]
    fn euler_collapses_single_code() {
        let cb = line(&[0.7]);
        for steps in [1, 3, 10, 64] {
            for x1 in [-2.0, 0.0, 3.5] {
                let x = euler_token_sample(&pv(&[1.0]), &cb, &[x1], steps, &S).unwrap();
                assert!((x[0] - 0.7).abs() <= 1e-3 * (x1 - 0.7f64).abs() + 1e-9, "{steps} {x1} {x:?}");
            }
        }
    }

    #[test]
    fn euler_one_hot_converges() {
        let cb = Codebook::new(2, vec![vec![-1.0, 0.5], vec![1.0, -0.5]]).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let x1 = [rng::normal(&mut r), rng::normal(&mut r)];
            let x = euler_token_sample(&pv(&[1.0, 0.0]), &cb, &x1, 64, &S).unwrap();
            assert!(crate::math::norm(&[x[0] + 1.0, x[1] - 0.5]) < 1e-2);
        }
    }

    #[test]
    fn euler_reproduces_probabilities() {
        let cb = Codebook::scattered(4, 2, 3).unwrap();
        let p = pv(&[0.1, 0.2, 0.3, 0.4]);
        let mut r = rng::seeded(9);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let x1 = [rng::normal(&mut r), rng::normal(&mut r)];
            let x = euler_token_sample(&p, &cb, &x1, 32, &S).unwrap();
            counts[quantize_point(&x, &cb)] += 1;
        }
        let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
        assert!(p.tv(&emp) < 0.05, "{emp:?}");
    }
}
