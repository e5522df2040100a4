//! `report.json`: distribution-level evaluation of a run.

use csd_core::eval::{
    ar_diffusion_sample, empirical_distribution, one_step_generate, per_position_conditional_tv, refine_with_teacher,
    tv_distance, PositionTv,
};
use csd_core::nets::NetParams;
use csd_core::rng;
use csd_core::training::{set_prediction_tv, tags, RunConfig};
use csd_core::{Codebook, SeqDist, TabularTeacher, TokenSeq};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{tail_mean, Row};

pub const SCHEMA_VERSION: u32 = 1;

/// Rows averaged for the per-phase loss summary.
pub const LOSS_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_hash: String,
    pub samples: usize,
    pub teacher: TeacherSummary,
    pub losses: PhaseLosses,
    /// Token-by-token Euler sampling of the tuned AR-diffusion model.
    pub ar_diffusion_tv: Option<f64>,
    /// One-step TV of the EMA generator.
    pub one_step_tv: f64,
    /// One-step TV of the raw generator weights.
    pub one_step_tv_raw: f64,
    pub per_position: Vec<PositionTv>,
    pub baselines: Baselines,
    pub k_sweep: Vec<KPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub positions: usize,
    pub vocab: usize,
    pub dim: usize,
    pub sequences: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseLosses {
    pub init: Option<f64>,
    pub main_generator: Option<f64>,
    pub main_guidance: Option<f64>,
    pub align: Option<f64>,
    pub dd1: Option<f64>,
}

impl PhaseLosses {
    pub fn from_rows(rows: &[Row]) -> Self {
        PhaseLosses {
            init: tail_mean(rows, "init", LOSS_WINDOW, |r| Some(r.loss)),
            main_generator: tail_mean(rows, "main", LOSS_WINDOW, |r| Some(r.loss)),
            main_guidance: tail_mean(rows, "main", LOSS_WINDOW, |r| r.guidance_loss),
            align: tail_mean(rows, "align", LOSS_WINDOW, |r| Some(r.loss)),
            dd1: tail_mean(rows, "dd1", LOSS_WINDOW, |r| Some(r.loss)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub set_prediction_tv: f64,
    pub dd1_tv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub tv: f64,
}

/// Trained networks available for evaluation.
pub struct Networks<'a> {
    pub init: Option<&'a NetParams>,
    pub theta: &'a NetParams,
    pub theta_ema: &'a NetParams,
    pub dd1: Option<&'a NetParams>,
}

fn sample_tv(exact: &SeqDist, samples: &[TokenSeq]) -> Result<f64> {
    Ok(tv_distance(&empirical_distribution(samples)?, exact))
}

/// Stream for evaluation `which`; fixed per run so reports are reproducible.
pub fn eval_stream(cfg: &RunConfig, which: u64) -> rng::LabRng {
    rng::stream(cfg.seed, &[tags::EVAL, which])
}

/// One-step TV of `theta` against `exact` from `count` samples.
pub fn one_step_tv(
    theta: &NetParams,
    cb: &Codebook,
    exact: &SeqDist,
    count: usize,
    r: &mut rng::LabRng,
) -> Result<f64> {
    sample_tv(exact, &one_step_generate(theta, cb, count, r)?)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &RunConfig,
    config_hash: &str,
    teacher: &TabularTeacher,
    cb: &Codebook,
    nets: &Networks<'_>,
    rows: &[Row],
    samples: usize,
    k_sweep: &[usize],
) -> Result<Report> {
    let exact = teacher.enumerate_distribution()?;
    let n = samples.max(1);
    let sched = cfg.schedule();
    let ema_samples = one_step_generate(nets.theta_ema, cb, n, &mut eval_stream(cfg, 0))?;
    let ema_tv = sample_tv(&exact, &ema_samples)?;
    let per_position = per_position_conditional_tv(teacher, &ema_samples, cfg.eval.prefix_floor)?;
    let one_step_tv_raw = one_step_tv(nets.theta, cb, &exact, n, &mut eval_stream(cfg, 1))?;
    let ar_diffusion_tv = match nets.init {
        Some(net) => {
            let mut r = eval_stream(cfg, 2);
            let z: Vec<TokenSeq> = (0..n)
                .map(|_| ar_diffusion_sample(net, cb, cfg.eval.euler_steps, &sched, &mut r))
                .collect::<csd_core::Result<_>>()?;
            Some(sample_tv(&exact, &z)?)
        }
        None => None,
    };
    let dd1_tv = match nets.dd1 {
        Some(net) => Some(one_step_tv(net, cb, &exact, n, &mut eval_stream(cfg, 3))?),
        None => None,
    };
    let mut sweep = Vec::with_capacity(k_sweep.len());
    for &k in k_sweep {
        let mut r = eval_stream(cfg, 16 + k as u64);
        let z: Vec<TokenSeq> = (0..n)
            .map(|_| refine_with_teacher(nets.theta_ema, teacher, cb, k, &mut r))
            .collect::<csd_core::Result<_>>()?;
        sweep.push(KPoint { k, tv: sample_tv(&exact, &z)? });
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        samples: n,
        teacher: TeacherSummary {
            positions: teacher.len(),
            vocab: teacher.vocab(),
            dim: cb.dim(),
            sequences: exact.len() as u64,
        },
        losses: PhaseLosses::from_rows(rows),
        ar_diffusion_tv,
        one_step_tv: ema_tv,
        one_step_tv_raw,
        per_position,
        baselines: Baselines { set_prediction_tv: set_prediction_tv(teacher)?, dd1_tv },
        k_sweep: sweep,
    })
}

/// TV-versus-steps chart of the refinement sweep.
pub fn k_sweep_svg(report: &Report) -> String {
    let pts: Vec<(f64, f64)> = report.k_sweep.iter().map(|p| (p.k as f64, p.tv)).collect();
    crate::svg::line_chart("TV to teacher vs. sampling steps", "steps k", "TV", &pts)
}
