use alloc::vec;

use super::*;
use crate::eval::{empirical_distribution, one_step_generate, tv_distance};
use crate::losses::{fcs_loss_with, Draws};

fn small(teacher: TeacherSpec) -> RunConfig {
    let mut cfg = RunConfig::new(teacher);
    cfg.net = NetArch { backbone: BackboneKind::PrefixSum, depth: 1, width: 8, head_hidden: 16 };
    cfg.batch = 16;
    cfg.init.iterations = 3;
    cfg.main.iterations = 3;
    cfg.main.guidance_updates = 2;
    cfg.main.samples = 2;
    cfg.dd1.pairs = 50;
    cfg.dd1.iterations = 3;
    cfg
}

fn pair() -> RunConfig {
    small(TeacherSpec::Pair { dim: 1 })
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = pair();
    cfg.validate().unwrap();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let mut bad = cfg.clone();
    bad.main.guidance_updates = 0;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.schema_version = 99;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.init.samples = 0;
    assert!(bad.validate().is_err());
    let minimal: RunConfig = serde_json::from_str(r#"{"schema_version":1,"teacher":{"family":"pair"}}"#).unwrap();
    assert_eq!(minimal.main.guidance_updates, 5);
    assert_eq!(minimal.batch, 256);
    assert!(serde_json::from_str::<RunConfig>(r#"{"schema_version":1,"teacher":{"family":"pair"},"bogus":1}"#).is_err());
}

#[test]
fn zero_budget_tuning_returns_initial_params() {
    let mut cfg = pair();
    cfg.init.iterations = 0;
    let (t, cb) = cfg.teacher.build().unwrap();
    let net = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    assert_eq!(net, InitState::new(&cfg, cfg.shape(&t, &cb)).unwrap().net);
}

#[test]
fn phases_are_deterministic() {
    let cfg = pair();
    let (t, cb) = cfg.teacher.build().unwrap();
    let (a_init, a) = run_pipeline(&t, &cb, &cfg).unwrap();
    let (b_init, b) = run_pipeline(&t, &cb, &cfg).unwrap();
    assert_eq!(a_init, b_init);
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.psi, b.psi);
    assert_eq!(a.theta_ema, b.theta_ema);
    assert_ne!(a.theta, a_init);
}

#[test]
fn resumed_state_matches_uninterrupted_run() {
    let mut cfg = pair();
    cfg.main.iterations = 4;
    let (t, cb) = cfg.teacher.build().unwrap();
    let init = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    let mut full = MainState::new(&init, &cfg).unwrap();
    while !full.done(&cfg) {
        full.step(&cfg, &t, &cb).unwrap();
    }
    let mut part = MainState::new(&init, &cfg).unwrap();
    part.step(&cfg, &t, &cb).unwrap();
    part.step(&cfg, &t, &cb).unwrap();
    let saved = serde_json::to_string(&part).unwrap();
    let mut resumed: MainState = serde_json::from_str(&saved).unwrap();
    while !resumed.done(&cfg) {
        resumed.step(&cfg, &t, &cb).unwrap();
    }
    assert_eq!(resumed, full);
}

#[test]
fn ema_follows_closed_form_rates() {
    let mut cfg = pair();
    cfg.main.ema_switch = 2;
    cfg.main.iterations = 5;
    let (t, cb) = cfg.teacher.build().unwrap();
    let init = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    let mut s = MainState::new(&init, &cfg).unwrap();
    let mut rates = vec![];
    while !s.done(&cfg) {
        rates.push(s.step(&cfg, &t, &cb).unwrap().ema_rate.unwrap());
    }
    assert_eq!(rates, [0.5, 0.5, 3.0 / 12.0, 4.0 / 13.0, 5.0 / 14.0]);
}

#[test]
fn zero_alignment_budget_swaps_in_ema_only() {
    let mut cfg = pair();
    cfg.align = AlignPhase { enabled: true, at_iteration: 2, iterations: 0 };
    let (t, cb) = cfg.teacher.build().unwrap();
    let init = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    let mut s = MainState::new(&init, &cfg).unwrap();
    s.step(&cfg, &t, &cb).unwrap();
    s.step(&cfg, &t, &cb).unwrap();
    assert!(s.alignment_due(&cfg));
    let psi = s.psi.clone();
    let ema = s.ema_params().unwrap();
    s.align(&cfg).unwrap();
    assert_eq!(s.theta, ema);
    assert_eq!(s.psi, psi);
    assert!(!s.alignment_due(&cfg));
}

#[test]
fn alignment_leaves_frozen_generator_fixed() {
    let mut cfg = pair();
    cfg.align.iterations = 3;
    let (t, cb) = cfg.teacher.build().unwrap();
    let init = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    let mut psi = init.clone();
    let mut opt = Adam::new(psi.len());
    let (once, _) = performance_alignment(&init, &mut psi, &mut opt, &cfg, 0).unwrap();
    let (twice, records) = performance_alignment(&once, &mut psi, &mut opt, &cfg, 1).unwrap();
    assert_eq!(once, init);
    assert_eq!(twice, init);
    assert_eq!(records.len(), 3);
    assert_ne!(psi, init);
}

#[test]
fn ablation_flags_replace_the_copies() {
    let mut cfg = pair();
    let (t, cb) = cfg.teacher.build().unwrap();
    let init = tune_ar_diffusion(&t, &cb, &cfg).unwrap();
    let s = MainState::new(&init, &cfg).unwrap();
    assert_eq!(s.theta, init);
    assert_eq!(s.psi, init);
    cfg.ablation.random_guidance_init = true;
    let s = MainState::new(&init, &cfg).unwrap();
    assert_eq!(s.theta, init);
    assert_ne!(s.psi, init);
    cfg.ablation = Ablation { random_generator_init: true, random_guidance_init: false };
    let s = MainState::new(&init, &cfg).unwrap();
    assert_ne!(s.theta, init);
    assert_eq!(s.psi, init);
}

#[test]
fn set_prediction_on_pair_teacher() {
    let t = TabularTeacher::pair();
    let m = set_prediction_baseline(&t).unwrap();
    assert_eq!(m[0].as_slice(), &[0.5, 0.5]);
    assert_eq!(m[1].as_slice(), &[0.5, 0.5]);
    assert_eq!(set_prediction_tv(&t).unwrap(), 0.5);
    // a teacher whose conditionals ignore the prefix is its own product
    let row = ProbVector::new(vec![0.2, 0.8]).unwrap();
    let indep = TabularTeacher::from_tables(2, 2, vec![vec![row.clone()], vec![row.clone(), row]]).unwrap();
    assert!(set_prediction_tv(&indep).unwrap() < 1e-15);
}

#[test]
fn dd1_pairs_cover_pair_support() {
    let t = TabularTeacher::pair();
    let cb = Codebook::pair(1).unwrap();
    let pairs = dd1_pairs(&t, &cb, 200, 10, &Schedule::default(), &mut rng::seeded(1)).unwrap();
    let mut seen = [false; 2];
    for (_, z) in &pairs {
        assert_eq!(z.ids()[0], z.ids()[1]);
        seen[z.ids()[0]] = true;
    }
    assert_eq!(seen, [true, true]);
}

#[test]
fn dd1_single_code_regression_vanishes() {
    let mut cfg = small(TeacherSpec::Pair { dim: 1 });
    cfg.dd1 = Dd1Config { pairs: 64, euler_steps: 10, iterations: 400, opt: AdamConfig { lr: 1e-2, ..AdamConfig::default() } };
    let row = ProbVector::one_hot(1, 0);
    let t = TabularTeacher::from_tables(2, 1, vec![vec![row.clone()], vec![row]]).unwrap();
    let cb = Codebook::new(1, vec![vec![0.5]]).unwrap();
    let data = dd1_dataset(&t, &cb, &cfg).unwrap();
    assert!(data.iter().all(|(_, y)| y.as_slice() == [0.5, 0.5]));
    let mut s = Dd1State::new(&cfg, cfg.shape(&t, &cb)).unwrap();
    let first = s.step(&cfg, &data).unwrap().loss;
    let mut last = first;
    while !s.done(&cfg) {
        last = s.step(&cfg, &data).unwrap().loss;
    }
    assert!(last < 1e-2 * first, "{first} -> {last}");
}

#[test]
fn divergence_is_reported() {
    let mut cfg = pair();
    cfg.init.opt.lr = 1e300;
    cfg.init.opt.warmup = 0;
    cfg.init.iterations = 50;
    let (t, cb) = cfg.teacher.build().unwrap();
    match tune_ar_diffusion(&t, &cb, &cfg) {
        Err(Error::Divergence { phase, .. }) => assert_eq!(phase, "init"),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn one_step_eval_runs_on_trained_generator() {
    let cfg = pair();
    let (t, cb) = cfg.teacher.build().unwrap();
    let (_, out) = run_pipeline(&t, &cb, &cfg).unwrap();
    let samples = one_step_generate(&out.theta_ema, &cb, 200, &mut rng::seeded(0)).unwrap();
    let tv = tv_distance(&empirical_distribution(&samples).unwrap(), &t.enumerate_distribution().unwrap());
    assert!((0.0..=1.0).contains(&tv));
}

fn single_code() -> (TabularTeacher, Codebook) {
    let tables = (0..2).map(|_| vec![ProbVector::new(vec![1.0]).unwrap()]).collect();
    (TabularTeacher::from_tables(2, 1, tables).unwrap(), Codebook::new(2, vec![vec![0.5, -0.5]]).unwrap())
}

#[test]
fn single_code_tuning_converges() {
    let (t, cb) = single_code();
    let mut cfg = RunConfig::new(TeacherSpec::Pair { dim: 2 });
    cfg.net = NetArch { backbone: BackboneKind::PrefixSum, depth: 1, width: 32, head_hidden: 32 };
    cfg.batch = 128;
    cfg.t_min = 0.1;
    cfg.init.iterations = 2000;
    cfg.init.samples = 2;
    cfg.init.opt = AdamConfig { lr: 3e-3, warmup: 100, ..AdamConfig::default() };
    let mut s = InitState::new(&cfg, cfg.shape(&t, &cb)).unwrap();
    let mut losses = Vec::new();
    while !s.done(&cfg) {
        losses.push(s.step(&cfg, &t, &cb).unwrap().loss);
    }
    let tail = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < 1e-3, "final GTS loss {tail}");
}

fn toy_guidance_setup() -> (RunConfig, TabularTeacher, Codebook, NetParams, NetParams) {
    let mut cfg = small(TeacherSpec::Dirichlet { n: 3, vocab: 4, dim: 2, concentration: 1.0, seed: 7 });
    cfg.net = NetArch { backbone: BackboneKind::PrefixSum, depth: 1, width: 16, head_hidden: 32 };
    cfg.batch = 64;
    cfg.main.samples = 2;
    cfg.main.guidance_opt = AdamConfig { lr: 1e-3, warmup: 50, ..AdamConfig::default() };
    let (t, cb) = cfg.teacher.build().unwrap();
    let shape = cfg.shape(&t, &cb);
    let theta = NetParams::init(shape, &mut rng::seeded(31), false).unwrap();
    let psi = NetParams::init(shape, &mut rng::seeded(32), true).unwrap();
    (cfg, t, cb, theta, psi)
}

#[test]
fn guidance_only_probe_decreases() {
    let (mut cfg, _, _, theta, mut psi) = toy_guidance_setup();
    cfg.align.iterations = 500;
    let mut opt = Adam::new(psi.len());
    let (_, records) = performance_alignment(&theta, &mut psi, &mut opt, &cfg, 0).unwrap();
    let means: Vec<f64> = records.chunks(100).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect();
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn alignment_does_not_worsen_held_out_guidance_loss() {
    let (mut cfg, _, _, theta, mut psi) = toy_guidance_setup();
    cfg.align.iterations = 300;
    let sched = cfg.schedule();
    let mut r = rng::seeded(40);
    let held: Vec<EmbedSeq> = (0..256).map(|_| theta.generator_forward(&EmbedSeq::gaussian(&mut r, 3, 2)).unwrap()).collect();
    let draws = Draws::sample(&mut r, 2, held.len(), 3, 2, (sched.t_min, 1.0));
    let before = fcs_loss_with(&psi, &held, &draws, &sched, cfg.regression).unwrap().loss;
    let mut opt = Adam::new(psi.len());
    performance_alignment(&theta, &mut psi, &mut opt, &cfg, 0).unwrap();
    let after = fcs_loss_with(&psi, &held, &draws, &sched, cfg.regression).unwrap().loss;
    assert!(after <= before, "{before} -> {after}");
}
