//! Run directories: phase execution with checkpoints, resumption and reports.
//!
//! Layout: `config.json`, `teacher.json`, `codebook.json`, `checkpoints/`,
//! `metrics.csv`, `report.json`, `tv_vs_k.svg`.

use std::path::{Path, PathBuf};

use csd_core::nets::NetParams;
use csd_core::training::{
    dd1_dataset, tags, Dd1State, InitState, MainState, RunConfig, StepRecord, TeacherSpec,
};
use csd_core::{rng, Codebook, TabularTeacher};

use crate::checkpoint::{self, Checkpoint, Phase};
use crate::error::{LabError, Result};
use crate::files;
use crate::metrics::{self, MetricsWriter, Row};
use crate::report::{self, Networks, Report};

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }

    pub fn teacher(&self) -> PathBuf {
        self.dir.join("teacher.json")
    }

    pub fn codebook(&self) -> PathBuf {
        self.dir.join("codebook.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn svg(&self) -> PathBuf {
        self.dir.join("tv_vs_k.svg")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSel {
    Init,
    Main,
    Align,
    Dd1,
    All,
}

/// A validated config with its resolved teacher.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: RunConfig,
    pub teacher: TabularTeacher,
    pub codebook: Codebook,
    pub hash: String,
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = match files::read_json(path) {
        Err(LabError::Json { path, source }) => return Err(LabError::Config(format!("{}: {source}", path.display()))),
        other => other?,
    };
    cfg.validate().map_err(LabError::config)?;
    Ok(cfg)
}

fn load_artifact<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    files::read_json(path).map_err(|e| match e {
        LabError::Json { path, source } => LabError::Config(format!("{}: {source}", path.display())),
        other => other,
    })
}

impl Experiment {
    /// Resolves the teacher; custom teacher paths are relative to `base`.
    pub fn new(cfg: RunConfig, base: &Path) -> Result<Self> {
        let (teacher, codebook) = match &cfg.teacher {
            TeacherSpec::Custom { teacher, codebook } => {
                (load_artifact(&base.join(teacher))?, load_artifact(&base.join(codebook))?)
            }
            spec => spec.build().map_err(LabError::config)?,
        };
        Self::with_teacher(cfg, teacher, codebook)
    }

    pub fn with_teacher(cfg: RunConfig, teacher: TabularTeacher, codebook: Codebook) -> Result<Self> {
        cfg.validate().map_err(LabError::config)?;
        if teacher.vocab() != codebook.vocab() {
            return Err(LabError::Config(format!(
                "teacher vocabulary {} does not match codebook size {}",
                teacher.vocab(),
                codebook.vocab()
            )));
        }
        teacher.sequence_count().filter(|&c| c <= csd_core::teacher::ENUMERATION_CAP).ok_or_else(|| {
            LabError::Config("teacher is too large to enumerate for evaluation".into())
        })?;
        let max_k = teacher.len() + 1;
        if let Some(&k) = cfg.eval.k_sweep.iter().find(|&&k| k == 0 || k > max_k) {
            return Err(LabError::Config(format!("eval.k_sweep entry {k} outside 1..={max_k}")));
        }
        let hash = files::content_hash(&cfg);
        Ok(Experiment { cfg, teacher, codebook, hash })
    }

    /// Loads the copies stored in a run directory.
    pub fn from_run_dir(paths: &RunPaths) -> Result<Self> {
        let cfg = load_config(&paths.config())?;
        let teacher = load_artifact(&paths.teacher())?;
        let codebook = load_artifact(&paths.codebook())?;
        Self::with_teacher(cfg, teacher, codebook)
    }
}

/// How a `train` invocation ended.
#[derive(Debug)]
pub enum Outcome {
    Completed { report: Option<Report> },
    /// The step budget given by `stop_after` ran out.
    Stopped { phase: Phase, iteration: u64 },
}

type InitCkpt = Checkpoint<InitState>;
type MainCkpt = Checkpoint<MainState>;
type Dd1Ckpt = Checkpoint<Dd1State>;

struct Session<'a> {
    exp: &'a Experiment,
    dir: PathBuf,
    metrics: MetricsWriter,
    budget: Option<u64>,
    log: &'a mut dyn FnMut(&str),
}

impl Session<'_> {
    /// Consumes one unit of the step budget; false once it is exhausted.
    fn take_step(&mut self) -> bool {
        match &mut self.budget {
            None => true,
            Some(0) => false,
            Some(b) => {
                *b -= 1;
                true
            }
        }
    }

    fn due(&self, iter: u64) -> bool {
        let every = self.exp.cfg.checkpoint_every;
        every > 0 && iter % every == 0
    }

    fn save<S: serde::Serialize>(&mut self, phase: Phase, complete: bool, state: &S) -> Result<()> {
        self.metrics.flush()?;
        checkpoint::save(&self.dir, &Checkpoint::new(phase, &self.exp.hash, complete, state))
    }

    fn record(&mut self, phase: &str, rec: &StepRecord, eval_tv: Option<f64>) -> Result<()> {
        self.metrics.append(&Row::new(phase, rec, eval_tv))
    }
}

/// Runs the selected phases in `dir`, resuming from any checkpoints there.
pub fn train(
    dir: &Path,
    exp: &Experiment,
    sel: PhaseSel,
    stop_after: Option<u64>,
    log: &mut dyn FnMut(&str),
) -> Result<Outcome> {
    let paths = RunPaths::new(dir);
    let _lock = files::lock_dir(dir)?;
    prepare(&paths, exp)?;
    let ck = paths.checkpoints();
    let init: Option<InitCkpt> = checkpoint::load(&ck, Phase::Init, &exp.hash)?;
    let main: Option<MainCkpt> = checkpoint::load(&ck, Phase::Main, &exp.hash)?;
    let dd1: Option<Dd1Ckpt> = checkpoint::load(&ck, Phase::Dd1, &exp.hash)?;
    let (init_it, main_it, aligned, dd1_it) = (
        init.as_ref().map_or(0, |c| c.state.iter),
        main.as_ref().map_or(0, |c| c.state.iter),
        main.as_ref().is_some_and(|c| c.state.aligned),
        dd1.as_ref().map_or(0, |c| c.state.iter),
    );
    let metrics = MetricsWriter::open(&paths.metrics(), |r| match r.phase.as_str() {
        "init" => r.iteration < init_it,
        "main" => r.iteration < main_it,
        "align" => aligned,
        "dd1" => r.iteration < dd1_it,
        _ => false,
    })?;
    let mut s = Session { exp, dir: ck, metrics, budget: stop_after, log };
    let cfg = &exp.cfg;

    let init = if matches!(sel, PhaseSel::Init | PhaseSel::All) {
        match run_init(&mut s, init)? {
            Ok(c) => Some(c),
            Err(stop) => return Ok(stop),
        }
    } else {
        init
    };
    let main = if matches!(sel, PhaseSel::Main | PhaseSel::All) {
        let net = match &init {
            Some(c) if c.complete => &c.state.net,
            _ => return Err(LabError::Missing(s.dir.join(Phase::Init.file_name()))),
        };
        match run_main(&mut s, net, main)? {
            Ok(c) => Some(c),
            Err(stop) => return Ok(stop),
        }
    } else {
        main
    };
    if sel == PhaseSel::Align {
        let mut c = main.ok_or_else(|| LabError::Missing(s.dir.join(Phase::Main.file_name())))?;
        if c.state.aligned {
            (s.log)("alignment already applied");
        } else {
            align(&mut s, &mut c.state)?;
            let complete = c.state.done(cfg);
            s.save(Phase::Main, complete, &c.state)?;
        }
        s.metrics.flush()?;
        return Ok(Outcome::Completed { report: None });
    }
    let dd1 = if sel == PhaseSel::Dd1 || (sel == PhaseSel::All && cfg.eval.dd1) {
        match run_dd1(&mut s, dd1)? {
            Ok(c) => Some(c),
            Err(stop) => return Ok(stop),
        }
    } else {
        dd1
    };
    s.metrics.flush()?;
    if sel != PhaseSel::All {
        return Ok(Outcome::Completed { report: None });
    }
    let main = main.expect("main phase ran");
    let init = init.expect("init phase ran");
    let report = write_report(
        &paths,
        exp,
        &init.state.net,
        &main.state,
        dd1.as_ref().filter(|c| c.complete).map(|c| &c.state.theta),
        cfg.eval.samples,
        &cfg.eval.k_sweep,
        true,
    )?;
    Ok(Outcome::Completed { report: Some(report) })
}

fn prepare(paths: &RunPaths, exp: &Experiment) -> Result<()> {
    let cfg_path = paths.config();
    if cfg_path.exists() {
        let existing: RunConfig = load_artifact(&cfg_path)?;
        if files::content_hash(&existing) != exp.hash {
            return Err(LabError::Config(format!(
                "{} holds a different configuration; use a fresh run directory",
                paths.dir.display()
            )));
        }
    } else {
        files::write_json(&paths.teacher(), &exp.teacher)?;
        files::write_json(&paths.codebook(), &exp.codebook)?;
        files::write_json(&cfg_path, &exp.cfg)?;
    }
    Ok(())
}

fn run_init(s: &mut Session<'_>, ckpt: Option<InitCkpt>) -> Result<Result<InitCkpt, Outcome>> {
    let exp = s.exp;
    let cfg = &exp.cfg;
    let mut state = match ckpt {
        Some(c) => c.state,
        None => InitState::new(cfg, cfg.shape(&exp.teacher, &exp.codebook))?,
    };
    while !state.done(cfg) {
        if !s.take_step() {
            s.save(Phase::Init, false, &state)?;
            return Ok(Err(Outcome::Stopped { phase: Phase::Init, iteration: state.iter }));
        }
        let rec = state.step(cfg, &exp.teacher, &exp.codebook)?;
        s.record("init", &rec, None)?;
        if s.due(state.iter) && !state.done(cfg) {
            s.save(Phase::Init, false, &state)?;
        }
    }
    s.save(Phase::Init, true, &state)?;
    (s.log)(&format!("init: {} iterations", state.iter));
    Ok(Ok(Checkpoint::new(Phase::Init, &exp.hash, true, state)))
}

fn align(s: &mut Session<'_>, state: &mut MainState) -> Result<()> {
    let records = state.align(&s.exp.cfg)?;
    for rec in &records {
        s.record("align", rec, None)?;
    }
    (s.log)(&format!("alignment: {} guidance iterations", records.len()));
    Ok(())
}

fn run_main(s: &mut Session<'_>, init: &NetParams, ckpt: Option<MainCkpt>) -> Result<Result<MainCkpt, Outcome>> {
    let exp = s.exp;
    let cfg = &exp.cfg;
    let mut state = match ckpt {
        Some(c) => c.state,
        None => MainState::new(init, cfg)?,
    };
    let exact = if cfg.eval.track_every > 0 { Some(exp.teacher.enumerate_distribution()?) } else { None };
    while !state.done(cfg) {
        if state.alignment_due(cfg) {
            align(s, &mut state)?;
            s.save(Phase::Main, false, &state)?;
        }
        if !s.take_step() {
            s.save(Phase::Main, false, &state)?;
            return Ok(Err(Outcome::Stopped { phase: Phase::Main, iteration: state.iter }));
        }
        let rec = state.step(cfg, &exp.teacher, &exp.codebook)?;
        let tracked = match &exact {
            Some(exact) if state.iter % cfg.eval.track_every == 0 => {
                let mut r = rng::stream(cfg.seed, &[tags::EVAL, 1 << 32, state.iter]);
                Some(report::one_step_tv(&state.ema_params()?, &exp.codebook, exact, cfg.eval.track_samples.max(1), &mut r)?)
            }
            _ => None,
        };
        s.record("main", &rec, tracked)?;
        if let Some(tv) = tracked {
            (s.log)(&format!("main {}: generator loss {:.5}, EMA one-step TV {tv:.4}", state.iter, rec.loss));
        }
        if s.due(state.iter) && !state.done(cfg) {
            s.save(Phase::Main, false, &state)?;
        }
    }
    s.save(Phase::Main, true, &state)?;
    (s.log)(&format!("main: {} iterations", state.iter));
    Ok(Ok(Checkpoint::new(Phase::Main, &exp.hash, true, state)))
}

fn run_dd1(s: &mut Session<'_>, ckpt: Option<Dd1Ckpt>) -> Result<Result<Dd1Ckpt, Outcome>> {
    let exp = s.exp;
    let cfg = &exp.cfg;
    let mut state = match ckpt {
        Some(c) => c.state,
        None => Dd1State::new(cfg, cfg.shape(&exp.teacher, &exp.codebook))?,
    };
    if !state.done(cfg) {
        let data = dd1_dataset(&exp.teacher, &exp.codebook, cfg)?;
        while !state.done(cfg) {
            if !s.take_step() {
                s.save(Phase::Dd1, false, &state)?;
                return Ok(Err(Outcome::Stopped { phase: Phase::Dd1, iteration: state.iter }));
            }
            let rec = state.step(cfg, &data)?;
            s.record("dd1", &rec, None)?;
            if s.due(state.iter) && !state.done(cfg) {
                s.save(Phase::Dd1, false, &state)?;
            }
        }
    }
    s.save(Phase::Dd1, true, &state)?;
    (s.log)(&format!("dd1 baseline: {} iterations", state.iter));
    Ok(Ok(Checkpoint::new(Phase::Dd1, &exp.hash, true, state)))
}

#[allow(clippy::too_many_arguments)]
fn write_report(
    paths: &RunPaths,
    exp: &Experiment,
    init: &NetParams,
    main: &MainState,
    dd1: Option<&NetParams>,
    samples: usize,
    k_sweep: &[usize],
    svg: bool,
) -> Result<Report> {
    let rows = metrics::read(&paths.metrics())?;
    let ema = main.ema_params()?;
    let nets = Networks { init: Some(init), theta: &main.theta, theta_ema: &ema, dd1 };
    let report = report::evaluate(&exp.cfg, &exp.hash, &exp.teacher, &exp.codebook, &nets, &rows, samples, k_sweep)?;
    files::write_json(&paths.report(), &report)?;
    if svg && !report.k_sweep.is_empty() {
        files::write_atomic(&paths.svg(), report::k_sweep_svg(&report).as_bytes())?;
    }
    Ok(report)
}

/// Evaluates the checkpoints of a run directory and writes its report.
pub fn evaluate_run(dir: &Path, samples: Option<usize>, k_sweep: Option<&[usize]>, svg: bool) -> Result<Report> {
    let paths = RunPaths::new(dir);
    if !paths.config().exists() {
        return Err(LabError::Missing(paths.config()));
    }
    let _lock = files::lock_dir(dir)?;
    let exp = Experiment::from_run_dir(&paths)?;
    let ck = paths.checkpoints();
    let main: MainCkpt = checkpoint::load(&ck, Phase::Main, &exp.hash)?
        .ok_or_else(|| LabError::Missing(ck.join(Phase::Main.file_name())))?;
    let init: Option<InitCkpt> = checkpoint::load(&ck, Phase::Init, &exp.hash)?;
    let dd1: Option<Dd1Ckpt> = checkpoint::load(&ck, Phase::Dd1, &exp.hash)?;
    let rows = metrics::read(&paths.metrics())?;
    let ema = main.state.ema_params()?;
    let init_net = init.as_ref().filter(|c| c.complete).map(|c| &c.state.net);
    let nets = Networks {
        init: init_net,
        theta: &main.state.theta,
        theta_ema: &ema,
        dd1: dd1.as_ref().filter(|c| c.complete).map(|c| &c.state.theta),
    };
    let cfg = &exp.cfg;
    let max_k = exp.teacher.len() + 1;
    if let Some(&k) = k_sweep.unwrap_or(&[]).iter().find(|&&k| k == 0 || k > max_k) {
        return Err(LabError::Usage(format!("refinement steps {k} outside 1..={max_k}")));
    }
    let report = report::evaluate(
        cfg,
        &exp.hash,
        &exp.teacher,
        &exp.codebook,
        &nets,
        &rows,
        samples.unwrap_or(cfg.eval.samples),
        k_sweep.unwrap_or(&cfg.eval.k_sweep),
    )?;
    files::write_json(&paths.report(), &report)?;
    if svg && !report.k_sweep.is_empty() {
        files::write_atomic(&paths.svg(), report::k_sweep_svg(&report).as_bytes())?;
    }
    Ok(report)
}
