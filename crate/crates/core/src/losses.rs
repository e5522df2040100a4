//! Score-distillation losses and their parameter gradients.
//!
//! Noise is drawn up front into [`Draws`] so that each loss is a deterministic
//! function of `(parameters, batch, draws)`; finite-difference checks and
//! matched-stream comparisons reuse the same draws.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{embed, quantize, Codebook, EmbedSeq, ProbVector, TokenSeq};
use crate::error::{Error, Result};
use crate::nets::{BackboneTrace, NetParams};
use crate::rng;
use crate::schedule::Schedule;
use crate::score::Posterior;
use crate::teacher::TabularTeacher;

/// Weight `omega(t)` in front of the SiD integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum TimeWeight {
    Constant(f64),
}

impl TimeWeight {
    pub fn at(&self, _t: f64) -> f64 {
        match *self {
            TimeWeight::Constant(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SidConfig {
    /// Mixing coefficient of the SiD integrand (not the schedule's `alpha_t`).
    pub alpha: f64,
    pub omega: TimeWeight,
}

impl Default for SidConfig {
    fn default() -> Self {
        SidConfig { alpha: 1.0, omega: TimeWeight::Constant(1.0) }
    }
}

impl SidConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::param("SiD alpha must be finite"));
        }
        let TimeWeight::Constant(w) = self.omega;
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::param("SiD weight must be positive"));
        }
        Ok(())
    }
}

/// Which factors of the SiD integrand pass gradient to the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsdGradient {
    /// Differentiate the integrand through the noisy token into both scores.
    #[default]
    ThroughScores,
    /// Treat `(s_true - s_fake)` as a constant.
    StopGradFirstFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsdConfig {
    pub sid: SidConfig,
    pub gradient: CsdGradient,
    /// Timesteps are drawn from `[t_min, 1 - t_guard]`.
    pub t_guard: f64,
}

impl Default for CsdConfig {
    fn default() -> Self {
        CsdConfig { sid: SidConfig::default(), gradient: CsdGradient::default(), t_guard: 1e-3 }
    }
}

/// Space in which the guidance and AR-diffusion regressions are measured.
///
/// Both share the same minimizer; they differ by the per-timestep weight
/// `(1 - t)^2 / t^2` that a score residual carries relative to a velocity one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionSpace {
    Score,
    #[default]
    Velocity,
}

impl RegressionSpace {
    fn weight(self, t: f64) -> f64 {
        match self {
            RegressionSpace::Score => {
                let r = (1.0 - t) / t;
                r * r
            }
            RegressionSpace::Velocity => 1.0,
        }
    }
}

/// A loss value with its gradient with respect to one network's parameters.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn sid_scale(t: f64, cfg: &SidConfig) -> Result<f64> {
    let a = 1.0 - t;
    if a <= 0.0 {
        return Err(Error::Boundary { t });
    }
    Ok(cfg.omega.at(t) * t * t * t * t / (a * a))
}

/// `omega(t) sigma^4 / alpha_t^2 (s_true - s_fake)^T (s_true + eps / sigma - alpha (s_true - s_fake))`.
pub fn sid_d(s_true: &[f64], s_fake: &[f64], eps: &[f64], t: f64, cfg: &SidConfig) -> Result<f64> {
    if s_true.len() != s_fake.len() || s_true.len() != eps.len() {
        return Err(Error::Dimension { expected: s_true.len(), got: s_fake.len().min(eps.len()) });
    }
    let k = sid_scale(t, cfg)?;
    Ok(k * s_true
        .iter()
        .zip(s_fake)
        .zip(eps)
        .map(|((st, sf), e)| {
            let delta = st - sf;
            delta * (st + e / t - cfg.alpha * delta)
        })
        .sum::<f64>())
}

/// Value and partials of [`sid_d`] with respect to both scores.
pub fn sid_d_partials(
    s_true: &[f64],
    s_fake: &[f64],
    eps: &[f64],
    t: f64,
    cfg: &SidConfig,
    mode: CsdGradient,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = sid_scale(t, cfg)?;
    let alpha = cfg.alpha;
    let c = s_true.len();
    let mut d = 0.0;
    let mut g_true = vec![0.0; c];
    let mut g_fake = vec![0.0; c];
    for x in 0..c {
        let delta = s_true[x] - s_fake[x];
        let r = s_true[x] + eps[x] / t - alpha * delta;
        d += delta * r;
        match mode {
            CsdGradient::ThroughScores => {
                g_true[x] = k * (r + delta * (1.0 - alpha));
                g_fake[x] = k * (-r + alpha * delta);
            }
            CsdGradient::StopGradFirstFactor => {
                g_true[x] = k * delta * (1.0 - alpha);
                g_fake[x] = k * alpha * delta;
            }
        }
    }
    Ok((k * d, g_true, g_fake))
}

/// Timesteps and corruption noise for `samples x batch x positions` slots,
/// laid out sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub samples: usize,
    pub batch: usize,
    pub positions: usize,
    pub dim: usize,
    pub t: Vec<f64>,
    pub eps: Vec<f64>,
}

impl Draws {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        samples: usize,
        batch: usize,
        positions: usize,
        dim: usize,
        t_range: (f64, f64),
    ) -> Self {
        let slots = samples * batch * positions;
        let mut t = Vec::with_capacity(slots);
        let mut eps = vec![0.0; slots * dim];
        for s in 0..slots {
            t.push(rng::uniform(rng, t_range.0, t_range.1));
            rng::fill_normal(rng, &mut eps[s * dim..(s + 1) * dim]);
        }
        Draws { samples, batch, positions, dim, t, eps }
    }

    #[inline]
    fn slot(&self, sample: usize, b: usize, i: usize) -> usize {
        (sample * self.batch + b) * self.positions + i
    }

    #[inline]
    pub fn get(&self, sample: usize, b: usize, i: usize) -> (f64, &[f64]) {
        let s = self.slot(sample, b, i);
        (self.t[s], &self.eps[s * self.dim..(s + 1) * self.dim])
    }

    fn check(&self, samples: usize, batch: usize, positions: usize, dim: usize) -> Result<()> {
        if (self.samples, self.batch, self.positions, self.dim) != (samples, batch, positions, dim) {
            return Err(Error::param("noise draws do not match the batch"));
        }
        Ok(())
    }
}

fn corrupt_into(x0: &[f64], t: f64, eps: &[f64], out: &mut [f64]) {
    for ((o, a), e) in out.iter_mut().zip(x0).zip(eps) {
        *o = (1.0 - t) * a + t * e;
    }
}

fn finite(v: f64, what: impl FnOnce() -> alloc::string::String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Stop-gradient conditioning for the CSD loss: the teacher conditionals of the
/// quantized prefixes and the guidance features of the generated sequences.
pub struct CsdContext {
    /// `batch x positions` teacher conditionals.
    probs: Vec<ProbVector>,
    /// Guidance backbone features, one `n x W` block per sequence.
    features: Vec<Vec<f64>>,
}

impl CsdContext {
    pub fn build(
        psi: &NetParams,
        teacher: &TabularTeacher,
        cb: &Codebook,
        generated: &[EmbedSeq],
    ) -> Result<Self> {
        let n = teacher.len();
        let mut probs = Vec::with_capacity(generated.len() * n);
        let mut features = Vec::with_capacity(generated.len());
        for x in generated {
            psi.check_seq(x)?;
            let ids = quantize(x, cb);
            for i in 0..n {
                probs.push(teacher.cond_prob(&ids.ids()[..i])?.clone());
            }
            features.push(psi.backbone_forward(x.as_slice()).features().to_vec());
        }
        Ok(CsdContext { probs, features })
    }
}

/// CSD loss with explicit latents and draws. With `ctx = None` the
/// conditioning is rebuilt from the current generator outputs.
#[allow(clippy::too_many_arguments)]
pub fn csd_loss_with(
    theta: &NetParams,
    psi: &NetParams,
    teacher: &TabularTeacher,
    cb: &Codebook,
    latents: &[EmbedSeq],
    draws: &Draws,
    ctx: Option<&CsdContext>,
    sched: &Schedule,
    cfg: &CsdConfig,
) -> Result<LossGrad> {
    if latents.is_empty() {
        return Err(Error::Empty("CSD batch".into()));
    }
    let n = theta.shape().positions;
    let c = theta.shape().dim;
    let w = psi.shape().width;
    draws.check(1, latents.len(), n, c)?;
    let traces: Vec<_> = latents
        .iter()
        .map(|z| theta.check_seq(z).map(|_| theta.generator_trace(z)))
        .collect::<Result<_>>()?;
    let built;
    let ctx = match ctx {
        Some(ctx) => ctx,
        None => {
            let outs: Vec<EmbedSeq> = traces.iter().map(|tr| tr.output.clone()).collect();
            built = CsdContext::build(psi, teacher, cb, &outs)?;
            &built
        }
    };
    let scale = 1.0 / latents.len() as f64;
    let mut loss = 0.0;
    let mut grad = theta.zeros_like();
    let mut y = vec![0.0; c];
    let mut d_out = vec![0.0; n * c];
    for (b, trace) in traces.iter().enumerate() {
        d_out.fill(0.0);
        for i in 0..n {
            let (t, eps) = draws.get(0, b, i);
            sched.check(t)?;
            corrupt_into(trace.output.position(i), t, eps, &mut y);
            let post = Posterior::new(&ctx.probs[b * n + i], cb, &y, t, sched)?;
            let s_true = post.score(&y);
            let head = psi.head_forward(&y, t, &ctx.features[b][i * w..(i + 1) * w]);
            let s_fake: Vec<f64> =
                head.velocity().iter().zip(&y).map(|(v, x)| -((1.0 - t) * v + x) / t).collect();
            let (d, g_true, g_fake) = sid_d_partials(&s_true, &s_fake, eps, t, &cfg.sid, cfg.gradient)?;
            loss += finite(d, || format!("CSD term (sequence {b}, position {i}, t={t})"))?;
            // d s_fake / d y = -((1 - t) J_v + I) / t
            let mut jv = vec![0.0; c];
            psi.head_backward(&head, &g_fake, None, Some(&mut jv), None);
            let dy_true = post.score_vjp(cb, &g_true);
            let dx = &mut d_out[i * c..(i + 1) * c];
            for x in 0..c {
                let dy = dy_true[x] - ((1.0 - t) * jv[x] + g_fake[x]) / t;
                dx[x] = scale * (1.0 - t) * dy;
            }
        }
        theta.generator_backward(trace, &d_out, &mut grad);
    }
    let loss = finite(loss * scale, || "CSD loss".into())?;
    Ok(LossGrad { loss, grad })
}

/// Draws a latent batch and timesteps in `[t_min, 1 - t_guard]`, then
/// evaluates [`csd_loss_with`].
#[allow(clippy::too_many_arguments)]
pub fn csd_loss<R: Rng + ?Sized>(
    theta: &NetParams,
    psi: &NetParams,
    teacher: &TabularTeacher,
    cb: &Codebook,
    batch: usize,
    sched: &Schedule,
    cfg: &CsdConfig,
    rng: &mut R,
) -> Result<LossGrad> {
    let s = theta.shape();
    let latents: Vec<EmbedSeq> = (0..batch).map(|_| EmbedSeq::gaussian(rng, s.positions, s.dim)).collect();
    let draws = Draws::sample(rng, 1, batch, s.positions, s.dim, (sched.t_min, 1.0 - cfg.t_guard));
    csd_loss_with(theta, psi, teacher, cb, &latents, &draws, None, sched, cfg)
}

/// Squared regression error summed over positions, averaged over samples and
/// batch. `target(b, i, t, eps, y)` gives the target velocity; in score space
/// the residual is rescaled by `(1 - t) / t`.
fn score_regression(
    psi: &NetParams,
    clean: &[EmbedSeq],
    draws: &Draws,
    sched: &Schedule,
    space: RegressionSpace,
    mut target: impl FnMut(usize, usize, f64, &[f64], &[f64]) -> Result<Vec<f64>>,
) -> Result<LossGrad> {
    if clean.is_empty() {
        return Err(Error::Empty("score regression batch".into()));
    }
    let n = psi.shape().positions;
    let c = psi.shape().dim;
    let w = psi.shape().width;
    draws.check(draws.samples, clean.len(), n, c)?;
    if draws.samples == 0 {
        return Err(Error::param("multi-sample count must be at least 1"));
    }
    let traces: Vec<BackboneTrace> = clean
        .iter()
        .map(|q| psi.check_seq(q).map(|_| psi.backbone_forward(q.as_slice())))
        .collect::<Result<_>>()?;
    let mut d_feats: Vec<Vec<f64>> = vec![vec![0.0; n * w]; clean.len()];
    let scale = 1.0 / (clean.len() * draws.samples) as f64;
    let mut loss = 0.0;
    let mut grad = psi.zeros_like();
    let mut y = vec![0.0; c];
    let mut dv = vec![0.0; c];
    for j in 0..draws.samples {
        for (b, q) in clean.iter().enumerate() {
            let feats = traces[b].features();
            for i in 0..n {
                let (t, eps) = draws.get(j, b, i);
                sched.check(t)?;
                corrupt_into(q.position(i), t, eps, &mut y);
                let goal = target(b, i, t, eps, &y)?;
                let head = psi.head_forward(&y, t, &feats[i * w..(i + 1) * w]);
                let lambda = space.weight(t);
                let mut term = 0.0;
                for x in 0..c {
                    let r = head.velocity()[x] - goal[x];
                    term += lambda * r * r;
                    dv[x] = scale * 2.0 * lambda * r;
                }
                loss += finite(term, || format!("score regression term (sequence {b}, position {i}, t={t})"))?;
                psi.head_backward(&head, &dv, Some(&mut grad), None, Some(&mut d_feats[b][i * w..(i + 1) * w]));
            }
        }
    }
    for (trace, df) in traces.iter().zip(&d_feats) {
        psi.backbone_backward(trace, df, &mut grad, None);
    }
    let loss = finite(loss * scale, || "score regression loss".into())?;
    Ok(LossGrad { loss, grad })
}

/// Guidance loss against the Monte Carlo target `-eps / t` (velocity
/// `eps - x_0`); the generated sequences are constants.
pub fn fcs_loss_with(
    psi: &NetParams,
    generated: &[EmbedSeq],
    draws: &Draws,
    sched: &Schedule,
    space: RegressionSpace,
) -> Result<LossGrad> {
    score_regression(psi, generated, draws, sched, space, |b, i, _, eps, _| {
        Ok(eps.iter().zip(generated[b].position(i)).map(|(e, x0)| e - x0).collect())
    })
}

/// Draws `m` noisy versions of every generated sequence, `t` in `[t_min, 1]`.
pub fn fcs_loss<R: Rng + ?Sized>(
    psi: &NetParams,
    generated: &[EmbedSeq],
    m: usize,
    sched: &Schedule,
    space: RegressionSpace,
    rng: &mut R,
) -> Result<LossGrad> {
    if m < 1 {
        return Err(Error::param("multi-sample count must be at least 1"));
    }
    let s = psi.shape();
    let draws = Draws::sample(rng, m, generated.len(), s.positions, s.dim, (sched.t_min, 1.0));
    fcs_loss_with(psi, generated, &draws, sched, space)
}

/// Regression onto the teacher's closed-form conditional score.
pub fn gts_loss_with(
    psi: &NetParams,
    teacher: &TabularTeacher,
    cb: &Codebook,
    batch: &[TokenSeq],
    draws: &Draws,
    sched: &Schedule,
    space: RegressionSpace,
) -> Result<LossGrad> {
    let clean: Vec<EmbedSeq> = batch.iter().map(|z| embed(z, cb)).collect::<Result<_>>()?;
    score_regression(psi, &clean, draws, sched, space, |b, i, t, _, y| {
        let p = teacher.cond_prob(&batch[b].ids()[..i])?;
        Ok(Posterior::new(p, cb, y, t, sched)?.velocity(y))
    })
}

#[allow(clippy::too_many_arguments)]
pub fn gts_loss<R: Rng + ?Sized>(
    psi: &NetParams,
    teacher: &TabularTeacher,
    cb: &Codebook,
    batch: &[TokenSeq],
    m: usize,
    sched: &Schedule,
    space: RegressionSpace,
    rng: &mut R,
) -> Result<LossGrad> {
    if m < 1 {
        return Err(Error::param("multi-sample count must be at least 1"));
    }
    let s = psi.shape();
    let draws = Draws::sample(rng, m, batch.len(), s.positions, s.dim, (sched.t_min, 1.0));
    gts_loss_with(psi, teacher, cb, batch, &draws, sched, space)
}
