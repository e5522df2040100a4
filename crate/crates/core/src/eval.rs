//! One-step and multi-step sampling, and distribution-level metrics over the
//! finite sequence space.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{quantize, quantize_point, Codebook, EmbedSeq, ProbVector, TokenSeq};
use crate::error::{Error, Result};
use crate::math;
use crate::nets::NetParams;
use crate::rng;
use crate::schedule::Schedule;
use crate::score::Posterior;
use crate::teacher::{SeqDist, TabularTeacher};

/// Minimum continuations a prefix needs before its conditional is scored.
pub const PREFIX_FLOOR: usize = 50;

pub fn one_step_generate<R: Rng + ?Sized>(
    theta: &NetParams,
    cb: &Codebook,
    count: usize,
    rng: &mut R,
) -> Result<Vec<TokenSeq>> {
    let s = theta.shape();
    (0..count)
        .map(|_| {
            let z = EmbedSeq::gaussian(rng, s.positions, s.dim);
            Ok(quantize(&theta.generator_forward(&z)?, cb))
        })
        .collect()
}

/// One generator pass, then the teacher redraws the last `k - 1` positions in
/// order. `k = 1` is plain one-step sampling; `k = n + 1` redraws everything.
pub fn refine_with_teacher<R: Rng + ?Sized>(
    theta: &NetParams,
    teacher: &TabularTeacher,
    cb: &Codebook,
    k: usize,
    rng: &mut R,
) -> Result<TokenSeq> {
    let n = teacher.len();
    if k == 0 || k > n + 1 {
        return Err(Error::StepsOutOfRange { k, max: n + 1 });
    }
    let s = theta.shape();
    let z = EmbedSeq::gaussian(rng, s.positions, s.dim);
    let mut ids = quantize(&theta.generator_forward(&z)?, cb).0;
    for i in (n + 1 - k)..n {
        let p = teacher.cond_prob(&ids[..i])?;
        ids[i] = rng::categorical(rng, p);
    }
    Ok(TokenSeq(ids))
}

/// Samples the AR-diffusion model token by token: each token is integrated
/// with `steps` Euler steps of the head velocity from `t = 1` to `t_min`,
/// snapped to the nearest code, and appended to the prefix.
pub fn ar_diffusion_sample<R: Rng + ?Sized>(
    net: &NetParams,
    cb: &Codebook,
    steps: usize,
    sched: &Schedule,
    rng: &mut R,
) -> Result<TokenSeq> {
    if steps == 0 {
        return Err(Error::param("at least one Euler step is required"));
    }
    let s = net.shape();
    let (n, c) = (s.positions, s.dim);
    let mut prefix = EmbedSeq::new(c, vec![0.0; n * c])?;
    let mut ids = Vec::with_capacity(n);
    let h = (1.0 - sched.t_min) / steps as f64;
    let mut x = vec![0.0; c];
    for i in 0..n {
        let feats = net.backbone_features(&prefix)?;
        rng::fill_normal(rng, &mut x);
        for step in 0..steps {
            let t = 1.0 - step as f64 * h;
            let v = net.head_velocity(&x, t, &feats[i]);
            for (xv, vv) in x.iter_mut().zip(&v) {
                *xv -= h * vv;
            }
        }
        if !math::all_finite(&x) {
            return Err(Error::NonFinite("AR-diffusion sample".into()));
        }
        let j = quantize_point(&x, cb);
        prefix.position_mut(i).copy_from_slice(cb.entry(j));
        ids.push(j);
    }
    Ok(TokenSeq(ids))
}

pub fn empirical_distribution(samples: &[TokenSeq]) -> Result<SeqDist> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list".into()));
    }
    let mut counts: BTreeMap<TokenSeq, usize> = BTreeMap::new();
    for z in samples {
        *counts.entry(z.clone()).or_default() += 1;
    }
    let total = samples.len() as f64;
    Ok(SeqDist(counts.into_iter().map(|(z, k)| (z, k as f64 / total)).collect()))
}

/// Half the L1 distance over the union of supports.
pub fn tv_distance(p: &SeqDist, q: &SeqDist) -> f64 {
    let mut sum = 0.0;
    for (z, a) in p.iter() {
        sum += (a - q.get(z)).abs();
    }
    for (z, b) in q.iter() {
        if p.0.get(z).is_none() {
            sum += b.abs();
        }
    }
    0.5 * sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTv {
    /// 0-based position.
    pub position: usize,
    /// Sample-weighted mean TV over scored prefixes.
    pub mean_tv: f64,
    pub scored_prefixes: usize,
    pub skipped_prefixes: usize,
    /// Fraction of samples whose prefix was scored.
    pub coverage: f64,
}

/// Empirical next-token conditionals against the teacher, per position.
/// Prefixes seen fewer than `floor` times are skipped.
pub fn per_position_conditional_tv(
    teacher: &TabularTeacher,
    samples: &[TokenSeq],
    floor: usize,
) -> Result<Vec<PositionTv>> {
    if samples.len() < floor.max(1) {
        return Err(Error::InsufficientSamples(alloc::format!(
            "{} samples, at least {} needed",
            samples.len(),
            floor.max(1)
        )));
    }
    let n = teacher.len();
    let v = teacher.vocab();
    for z in samples {
        if z.len() != n {
            return Err(Error::Length { expected: n, got: z.len() });
        }
        if let Some(&id) = z.ids().iter().find(|&&id| id >= v) {
            return Err(Error::InvalidToken { id, vocab: v });
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut counts: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
        for z in samples {
            counts.entry(&z.ids()[..i]).or_insert_with(|| vec![0; v])[z.ids()[i]] += 1;
        }
        let (mut weighted, mut covered, mut scored, mut skipped) = (0.0, 0usize, 0, 0);
        for (prefix, c) in &counts {
            let total: usize = c.iter().sum();
            if total < floor {
                skipped += 1;
                continue;
            }
            let emp: Vec<f64> = c.iter().map(|&k| k as f64 / total as f64).collect();
            weighted += total as f64 * teacher.cond_prob(prefix)?.tv(&emp);
            covered += total;
            scored += 1;
        }
        let mean_tv = if covered == 0 { 0.0 } else { weighted / covered as f64 };
        out.push(PositionTv {
            position: i,
            mean_tv,
            scored_prefixes: scored,
            skipped_prefixes: skipped,
            coverage: covered as f64 / samples.len() as f64,
        });
    }
    Ok(out)
}

/// Worst relative error `|s_psi - s| / (1 + |s|)` of the guidance score at
/// `position` of `context` against the closed-form score of the Dirac mixture
/// `p`. Grid points farther than `5 t` from every shrunk code `(1 - t) c_j`
/// lie outside the data bulk and are ignored. Returns `None` if no point
/// qualifies.
pub fn guidance_score_error(
    psi: &NetParams,
    context: &EmbedSeq,
    position: usize,
    p: &ProbVector,
    cb: &Codebook,
    grid: &[(Vec<f64>, f64)],
    sched: &Schedule,
) -> Result<Option<f64>> {
    let feats = psi.backbone_features(context)?;
    let f = feats.get(position).ok_or(Error::Position { len: position, n: feats.len() })?;
    let mut worst: Option<f64> = None;
    for (x, t) in grid {
        let t = *t;
        let in_bulk = (0..cb.vocab()).filter(|&j| p[j] > 0.0).any(|j| {
            let shrunk: Vec<f64> = cb.entry(j).iter().map(|c| (1.0 - t) * c).collect();
            math::sqrt(math::sq_dist(x, &shrunk)) <= 5.0 * t
        });
        if !in_bulk {
            continue;
        }
        let truth = Posterior::new(p, cb, x, t, sched)?.score(x);
        let v = psi.head_velocity(x, t, f);
        let s: Vec<f64> = v.iter().zip(x).map(|(v, x)| -((1.0 - t) * v + x) / t).collect();
        let diff: Vec<f64> = s.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let e = math::norm(&diff) / (1.0 + math::norm(&truth));
        worst = Some(worst.map_or(e, |w: f64| w.max(e)));
    }
    Ok(worst)
}
