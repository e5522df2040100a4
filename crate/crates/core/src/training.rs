//! Run configuration and the training phases: AR-diffusion tuning with the
//! ground-truth score, CSD distillation with guidance updates and EMA,
//! performance alignment, and the two baselines.
//!
//! Every phase is a resumable state machine whose randomness comes from
//! `rng::stream(seed, [phase, iteration, ..])`, so a state restored from a
//! checkpoint continues bit-identically.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codebook::{embed, Codebook, EmbedSeq, ProbVector, TokenSeq};
use crate::error::{Error, Result};
use crate::eval::PREFIX_FLOOR;
use crate::losses::{csd_loss, fcs_loss, gts_loss, CsdConfig, RegressionSpace};
use crate::nets::{BackboneKind, NetParams, NetShape};
use crate::optim::{Adam, AdamConfig, EmaState};
use crate::rng::{self, LabRng};
use crate::schedule::Schedule;
use crate::score::euler_token_sample;
use crate::teacher::{SeqDist, TabularTeacher};

pub const SCHEMA_VERSION: u32 = 1;

/// Stream tags separating the phases' random streams.
pub mod tags {
    pub const INIT_PARAMS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const MAIN: u64 = 3;
    pub const ALIGN: u64 = 4;
    pub const DD1_DATA: u64 = 5;
    pub const DD1: u64 = 6;
    pub const ABLATION: u64 = 7;
    pub const EVAL: u64 = 8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TeacherSpec {
    Pair {
        #[serde(default = "one")]
        dim: usize,
    },
    Dirichlet {
        n: usize,
        vocab: usize,
        dim: usize,
        #[serde(default = "one_f")]
        concentration: f64,
        seed: u64,
    },
    /// Paths to `teacher.json` and `codebook.json`, resolved by the caller.
    Custom { teacher: String, codebook: String },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl TeacherSpec {
    /// Builds the built-in families; `Custom` must be loaded by the caller.
    pub fn build(&self) -> Result<(TabularTeacher, Codebook)> {
        match *self {
            TeacherSpec::Pair { dim } => Ok((TabularTeacher::pair(), Codebook::pair(dim)?)),
            TeacherSpec::Dirichlet { n, vocab, dim, concentration, seed } => Ok((
                TabularTeacher::dirichlet(n, vocab, concentration, seed)?,
                Codebook::scattered(vocab, dim, seed)?,
            )),
            TeacherSpec::Custom { .. } => Err(Error::param("custom teachers are loaded from files")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub backbone: BackboneKind,
    pub depth: usize,
    pub width: usize,
    pub head_hidden: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch { backbone: BackboneKind::PrefixSum, depth: 2, width: 32, head_hidden: 64 }
    }
}

impl NetArch {
    pub fn shape(&self, positions: usize, dim: usize) -> NetShape {
        NetShape {
            positions,
            dim,
            depth: self.depth,
            width: self.width,
            head_hidden: self.head_hidden,
            backbone: self.backbone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitPhase {
    pub iterations: u64,
    /// Noise draws per sequence.
    pub samples: usize,
    pub opt: AdamConfig,
}

impl Default for InitPhase {
    fn default() -> Self {
        InitPhase { iterations: 2000, samples: 4, opt: AdamConfig { lr: 1e-3, warmup: 100, ..AdamConfig::default() } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MainPhase {
    pub iterations: u64,
    /// Guidance updates per generator update.
    pub guidance_updates: usize,
    /// Noise draws per sequence in the guidance loss.
    pub samples: usize,
    pub generator_opt: AdamConfig,
    pub guidance_opt: AdamConfig,
    /// Iteration at which the EMA leaves `ema_early_rate` for the dynamic rate.
    pub ema_switch: u64,
    pub ema_early_rate: f64,
    pub csd: CsdConfig,
}

impl Default for MainPhase {
    fn default() -> Self {
        MainPhase {
            iterations: 20_000,
            guidance_updates: 5,
            samples: 4,
            generator_opt: AdamConfig { lr: 1e-4, warmup: 100, ..AdamConfig::default() },
            guidance_opt: AdamConfig { lr: 1e-4, warmup: 100, ..AdamConfig::default() },
            ema_switch: 1000,
            ema_early_rate: 0.5,
            csd: CsdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignPhase {
    pub enabled: bool,
    /// Main-phase iteration after which alignment runs.
    pub at_iteration: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dd1Config {
    /// Size of the fixed noise-to-sequence dataset.
    pub pairs: usize,
    pub euler_steps: usize,
    pub iterations: u64,
    pub opt: AdamConfig,
}

impl Default for Dd1Config {
    fn default() -> Self {
        Dd1Config {
            pairs: 20_000,
            euler_steps: 10,
            iterations: 5000,
            opt: AdamConfig { lr: 1e-3, warmup: 100, ..AdamConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub euler_steps: usize,
    pub k_sweep: Vec<usize>,
    pub prefix_floor: usize,
    /// Also train and score the regression baseline.
    pub dd1: bool,
    /// Main-phase iterations between tracked one-step TVs; 0 disables.
    pub track_every: u64,
    pub track_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 100_000,
            euler_steps: 10,
            k_sweep: vec![1, 2, 3],
            prefix_floor: PREFIX_FLOOR,
            dd1: false,
            track_every: 0,
            track_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub random_generator_init: bool,
    pub random_guidance_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub teacher: TeacherSpec,
    #[serde(default)]
    pub net: NetArch,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub regression: RegressionSpace,
    #[serde(default)]
    pub init: InitPhase,
    #[serde(default)]
    pub main: MainPhase,
    #[serde(default)]
    pub align: AlignPhase,
    #[serde(default)]
    pub dd1: Dd1Config,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 keeps only phase-end checkpoints.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_t_min() -> f64 {
    Schedule::default().t_min
}

fn default_batch() -> usize {
    256
}

fn default_checkpoint_every() -> u64 {
    500
}

impl RunConfig {
    pub fn new(teacher: TeacherSpec) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            teacher,
            net: NetArch::default(),
            t_min: default_t_min(),
            batch: default_batch(),
            regression: RegressionSpace::default(),
            init: InitPhase::default(),
            main: MainPhase::default(),
            align: AlignPhase::default(),
            dd1: Dd1Config::default(),
            eval: EvalConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParam(alloc::format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Schedule::new(self.t_min)?;
        let checks = [
            (self.batch >= 1, "batch must be at least 1"),
            (self.init.samples >= 1, "init.samples must be at least 1"),
            (self.main.samples >= 1, "main.samples must be at least 1"),
            (self.main.guidance_updates >= 1, "main.guidance_updates must be at least 1"),
            ((0.0..1.0).contains(&self.main.ema_early_rate), "main.ema_early_rate must lie in [0, 1)"),
            (self.main.csd.t_guard > 0.0 && self.main.csd.t_guard < 1.0 - self.t_min, "main.csd.t_guard out of range"),
            (self.dd1.pairs >= 1 && self.dd1.euler_steps >= 1, "dd1 needs pairs and Euler steps"),
            (self.eval.samples >= 1 && self.eval.euler_steps >= 1, "eval needs samples and Euler steps"),
            (self.eval.prefix_floor >= 1, "eval.prefix_floor must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::param(msg));
            }
        }
        for opt in [&self.init.opt, &self.main.generator_opt, &self.main.guidance_opt, &self.dd1.opt] {
            opt.validate()?;
        }
        self.main.csd.sid.validate()?;
        if let TeacherSpec::Dirichlet { n, vocab, dim, concentration, .. } = self.teacher {
            if n == 0 || vocab == 0 || dim == 0 || !(concentration > 0.0) {
                return Err(Error::param("dirichlet teacher needs n, vocab, dim >= 1 and concentration > 0"));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { t_min: self.t_min }
    }

    pub fn shape(&self, teacher: &TabularTeacher, cb: &Codebook) -> NetShape {
        self.net.shape(teacher.len(), cb.dim())
    }
}

fn diverged(phase: &str, iteration: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Divergence { phase: phase.to_string(), iteration, detail },
        other => other,
    }
}

fn check_pair(teacher: &TabularTeacher, cb: &Codebook) -> Result<()> {
    if teacher.vocab() != cb.vocab() {
        return Err(Error::param("teacher and codebook vocabularies differ"));
    }
    Ok(())
}

/// One row of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    /// Generator loss in the main phase, regression loss elsewhere.
    pub loss: f64,
    /// Mean guidance loss of the step (main and alignment phases).
    pub guidance_loss: Option<f64>,
    pub lr: f64,
    pub ema_rate: Option<f64>,
}

/// AR-diffusion tuning with the ground-truth score loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub net: NetParams,
    pub opt: Adam,
    pub iter: u64,
}

impl InitState {
    /// Fresh network with a zeroed output layer.
    pub fn new(cfg: &RunConfig, shape: NetShape) -> Result<Self> {
        let net = NetParams::init(shape, &mut rng::stream(cfg.seed, &[tags::INIT_PARAMS]), true)?;
        let opt = Adam::new(net.len());
        Ok(InitState { net, opt, iter: 0 })
    }

    pub fn done(&self, cfg: &RunConfig) -> bool {
        self.iter >= cfg.init.iterations
    }

    pub fn step(&mut self, cfg: &RunConfig, teacher: &TabularTeacher, cb: &Codebook) -> Result<StepRecord> {
        let it = self.iter;
        let mut r = rng::stream(cfg.seed, &[tags::INIT, it]);
        let batch: Vec<TokenSeq> = (0..cfg.batch).map(|_| teacher.ancestral_sample(&mut r)).collect();
        let lg = gts_loss(&self.net, teacher, cb, &batch, cfg.init.samples, &cfg.schedule(), cfg.regression, &mut r)
            .map_err(|e| diverged("init", it, e))?;
        let lr = self.opt.update(&cfg.init.opt, self.net.values_mut(), &lg.grad).map_err(|e| diverged("init", it, e))?;
        self.iter += 1;
        Ok(StepRecord { iteration: it, loss: lg.loss, guidance_loss: None, lr, ema_rate: None })
    }
}

/// Runs the whole tuning budget.
pub fn tune_ar_diffusion(teacher: &TabularTeacher, cb: &Codebook, cfg: &RunConfig) -> Result<NetParams> {
    check_pair(teacher, cb)?;
    let mut state = InitState::new(cfg, cfg.shape(teacher, cb))?;
    while !state.done(cfg) {
        state.step(cfg, teacher, cb)?;
    }
    Ok(state.net)
}

/// Generator, guidance, their optimizers and the generator's EMA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainState {
    pub theta: NetParams,
    pub psi: NetParams,
    pub ema: EmaState,
    pub theta_opt: Adam,
    pub psi_opt: Adam,
    pub iter: u64,
    pub aligned: bool,
}

impl MainState {
    /// Both networks start as copies of `init` unless the ablation flags ask
    /// for a fresh random network instead.
    pub fn new(init: &NetParams, cfg: &RunConfig) -> Result<Self> {
        let fresh = |which: u64| NetParams::init(*init.shape(), &mut rng::stream(cfg.seed, &[tags::ABLATION, which]), false);
        let theta = if cfg.ablation.random_generator_init { fresh(0)? } else { init.clone() };
        let psi = if cfg.ablation.random_guidance_init { fresh(1)? } else { init.clone() };
        Ok(MainState {
            ema: EmaState::new(theta.values()),
            theta_opt: Adam::new(theta.len()),
            psi_opt: Adam::new(psi.len()),
            theta,
            psi,
            iter: 0,
            aligned: false,
        })
    }

    pub fn done(&self, cfg: &RunConfig) -> bool {
        self.iter >= cfg.main.iterations
    }

    /// Whether alignment is due before the next step.
    pub fn alignment_due(&self, cfg: &RunConfig) -> bool {
        cfg.align.enabled && !self.aligned && self.iter >= cfg.align.at_iteration
    }

    pub fn ema_params(&self) -> Result<NetParams> {
        NetParams::from_values(*self.theta.shape(), self.ema.shadow.clone())
    }

    /// One generator update followed by `K` guidance updates on fresh batches.
    pub fn step(&mut self, cfg: &RunConfig, teacher: &TabularTeacher, cb: &Codebook) -> Result<StepRecord> {
        let it = self.iter;
        let sched = cfg.schedule();
        let m = &cfg.main;
        let mut r = rng::stream(cfg.seed, &[tags::MAIN, it]);
        let lg = csd_loss(&self.theta, &self.psi, teacher, cb, cfg.batch, &sched, &m.csd, &mut r)
            .map_err(|e| diverged("main", it, e))?;
        let lr = self
            .theta_opt
            .update(&m.generator_opt, self.theta.values_mut(), &lg.grad)
            .map_err(|e| diverged("main", it, e))?;
        let rate = self.ema.update(self.theta.values(), m.ema_switch, m.ema_early_rate)?;
        let mut guidance = 0.0;
        for _ in 0..m.guidance_updates {
            guidance += guidance_update(&mut self.psi, &mut self.psi_opt, &self.theta, cfg, m.guidance_opt, m.samples, &mut r)
                .map_err(|e| diverged("main", it, e))?;
        }
        self.iter += 1;
        Ok(StepRecord {
            iteration: it,
            loss: lg.loss,
            guidance_loss: Some(guidance / m.guidance_updates as f64),
            lr,
            ema_rate: Some(rate),
        })
    }

    /// Performance alignment: the generator takes its EMA weights and the
    /// guidance is refit to it alone.
    pub fn align(&mut self, cfg: &RunConfig) -> Result<Vec<StepRecord>> {
        let (theta, records) = performance_alignment(&self.ema_params()?, &mut self.psi, &mut self.psi_opt, cfg, self.iter)?;
        self.theta = theta;
        self.aligned = true;
        Ok(records)
    }
}

fn generate_batch(theta: &NetParams, batch: usize, r: &mut LabRng) -> Result<Vec<EmbedSeq>> {
    let s = theta.shape();
    (0..batch).map(|_| theta.generator_forward(&EmbedSeq::gaussian(r, s.positions, s.dim))).collect()
}

fn guidance_update(
    psi: &mut NetParams,
    opt: &mut Adam,
    theta: &NetParams,
    cfg: &RunConfig,
    opt_cfg: AdamConfig,
    samples: usize,
    r: &mut LabRng,
) -> Result<f64> {
    let generated = generate_batch(theta, cfg.batch, r)?;
    let lg = fcs_loss(psi, &generated, samples, &cfg.schedule(), cfg.regression, r)?;
    opt.update(&opt_cfg, psi.values_mut(), &lg.grad)?;
    Ok(lg.loss)
}

/// Replaces the generator by `theta_ema` and trains `psi` alone against it for
/// `cfg.align.iterations` steps. `tag` separates repeated alignments.
pub fn performance_alignment(
    theta_ema: &NetParams,
    psi: &mut NetParams,
    opt: &mut Adam,
    cfg: &RunConfig,
    tag: u64,
) -> Result<(NetParams, Vec<StepRecord>)> {
    let theta = theta_ema.clone();
    let mut records = Vec::with_capacity(cfg.align.iterations as usize);
    for j in 0..cfg.align.iterations {
        let mut r = rng::stream(cfg.seed, &[tags::ALIGN, tag, j]);
        let lr = cfg.main.guidance_opt.lr_at(opt.step);
        let loss = guidance_update(psi, opt, &theta, cfg, cfg.main.guidance_opt, cfg.main.samples, &mut r)
            .map_err(|e| diverged("align", j, e))?;
        records.push(StepRecord { iteration: j, loss, guidance_loss: Some(loss), lr, ema_rate: None });
    }
    Ok((theta, records))
}

/// Trained networks of the distillation phase.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub theta: NetParams,
    pub theta_ema: NetParams,
    pub psi: NetParams,
}

/// Runs the distillation budget from `init`, aligning once if enabled.
pub fn train_csd(teacher: &TabularTeacher, cb: &Codebook, init: &NetParams, cfg: &RunConfig) -> Result<Distilled> {
    check_pair(teacher, cb)?;
    let mut state = MainState::new(init, cfg)?;
    while !state.done(cfg) {
        if state.alignment_due(cfg) {
            state.align(cfg)?;
        }
        state.step(cfg, teacher, cb)?;
    }
    Ok(Distilled { theta_ema: state.ema_params()?, theta: state.theta, psi: state.psi })
}

/// Tuning followed by distillation from two copies of the tuned network.
pub fn run_pipeline(teacher: &TabularTeacher, cb: &Codebook, cfg: &RunConfig) -> Result<(NetParams, Distilled)> {
    let init = tune_ar_diffusion(teacher, cb, cfg)?;
    let out = train_csd(teacher, cb, &init, cfg)?;
    Ok((init, out))
}

/// Noise sequences paired with the token sequences the teacher's per-token
/// flow maps them to, position by position in autoregressive order.
pub fn dd1_pairs(
    teacher: &TabularTeacher,
    cb: &Codebook,
    count: usize,
    steps: usize,
    sched: &Schedule,
    r: &mut LabRng,
) -> Result<Vec<(EmbedSeq, TokenSeq)>> {
    check_pair(teacher, cb)?;
    let (n, c) = (teacher.len(), cb.dim());
    (0..count)
        .map(|_| {
            let noise = EmbedSeq::gaussian(r, n, c);
            let mut ids = Vec::with_capacity(n);
            for i in 0..n {
                let p = teacher.cond_prob(&ids)?;
                let x = euler_token_sample(p, cb, noise.position(i), steps, sched)?;
                ids.push(crate::codebook::quantize_point(&x, cb));
            }
            Ok((noise, TokenSeq(ids)))
        })
        .collect()
}

/// Regression baseline state: a fixed dataset and a generator fit to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dd1State {
    pub theta: NetParams,
    pub opt: Adam,
    pub iter: u64,
}

impl Dd1State {
    pub fn new(cfg: &RunConfig, shape: NetShape) -> Result<Self> {
        let theta = NetParams::init(shape, &mut rng::stream(cfg.seed, &[tags::INIT_PARAMS]), true)?;
        Ok(Dd1State { opt: Adam::new(theta.len()), theta, iter: 0 })
    }

    pub fn done(&self, cfg: &RunConfig) -> bool {
        self.iter >= cfg.dd1.iterations
    }

    pub fn step(&mut self, cfg: &RunConfig, data: &[(EmbedSeq, EmbedSeq)]) -> Result<StepRecord> {
        let it = self.iter;
        let mut r = rng::stream(cfg.seed, &[tags::DD1, it]);
        let (loss, grad) = regression_grad(&self.theta, data, cfg.batch, &mut r)?;
        let lr = self.opt.update(&cfg.dd1.opt, self.theta.values_mut(), &grad).map_err(|e| diverged("dd1", it, e))?;
        self.iter += 1;
        Ok(StepRecord { iteration: it, loss, guidance_loss: None, lr, ema_rate: None })
    }
}

/// Mean squared error of the generator on a random minibatch of pairs.
fn regression_grad(
    theta: &NetParams,
    data: &[(EmbedSeq, EmbedSeq)],
    batch: usize,
    r: &mut LabRng,
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("regression dataset".into()));
    }
    let mut grad = theta.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for _ in 0..batch {
        let (noise, target) = &data[rand::Rng::random_range(r, 0..data.len())];
        theta.check_seq(noise)?;
        let trace = theta.generator_trace(noise);
        let d_out: Vec<f64> = trace
            .output
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(x, y)| {
                loss += (x - y) * (x - y);
                2.0 * scale * (x - y)
            })
            .collect();
        theta.generator_backward(&trace, &d_out, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Builds the regression dataset from the configured seed.
pub fn dd1_dataset(teacher: &TabularTeacher, cb: &Codebook, cfg: &RunConfig) -> Result<Vec<(EmbedSeq, EmbedSeq)>> {
    let mut r = rng::stream(cfg.seed, &[tags::DD1_DATA]);
    dd1_pairs(teacher, cb, cfg.dd1.pairs, cfg.dd1.euler_steps, &cfg.schedule(), &mut r)?
        .into_iter()
        .map(|(noise, z)| Ok((noise, embed(&z, cb)?)))
        .collect()
}

/// One-step generator fit by regression onto the teacher's flow mapping.
pub fn dd1_baseline(teacher: &TabularTeacher, cb: &Codebook, cfg: &RunConfig) -> Result<NetParams> {
    let data = dd1_dataset(teacher, cb, cfg)?;
    let mut state = Dd1State::new(cfg, cfg.shape(teacher, cb))?;
    while !state.done(cfg) {
        state.step(cfg, &data)?;
    }
    Ok(state.theta)
}

/// Per-position marginals: the best any independent one-step predictor can do.
pub fn set_prediction_baseline(teacher: &TabularTeacher) -> Result<Vec<ProbVector>> {
    teacher.marginals()
}

/// TV between the teacher and the product of its marginals.
pub fn set_prediction_tv(teacher: &TabularTeacher) -> Result<f64> {
    let exact = teacher.enumerate_distribution()?;
    let product = SeqDist::product(&set_prediction_baseline(teacher)?);
    Ok(crate::eval::tv_distance(&exact, &product))
}

#[cfg(test)]
mod tests;
