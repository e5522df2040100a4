use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use csd_core::{Codebook, TabularTeacher};

use csd_lab::error::exit;
use csd_lab::run::{self, Experiment, Outcome, PhaseSel};
use csd_lab::{files, LabError, Result};

/// Conditional score distillation experiments on exact tabular teachers.
///
/// Exit codes: 0 success, 2 usage, 3 config, 4 divergence, 5 missing artifact,
/// 1 any other failure.
#[derive(Parser)]
#[command(name = "csdlab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write `teacher.json` and `codebook.json` and summarize the teacher.
    Teacher(TeacherArgs),
    /// Run training phases for a config, resuming from checkpoints.
    Train(TrainArgs),
    /// Evaluate the checkpoints of a run directory into `report.json`.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Pair,
    Dirichlet,
    Custom,
}

#[derive(clap::Args)]
struct TeacherArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Sequence length.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Vocabulary size.
    #[arg(long = "V", value_parser = clap::value_parser!(u64).range(1..))]
    vocab: Option<u64>,
    /// Embedding dimension.
    #[arg(long = "C", value_parser = clap::value_parser!(u64).range(1..))]
    dim: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    /// Existing teacher table (custom family).
    #[arg(long)]
    teacher_file: Option<PathBuf>,
    /// Existing codebook (custom family).
    #[arg(long)]
    codebook_file: Option<PathBuf>,
    /// Output directory; defaults to the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Init,
    Main,
    Align,
    Dd1,
    All,
}

#[derive(clap::Args)]
struct TrainArgs {
    config: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    phase: PhaseArg,
    /// Run directory; defaults to `<output root>/<config file stem>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps, checkpointing first.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(clap::Args)]
struct EvalArgs {
    run_dir: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    samples: Option<u64>,
    /// Comma-separated refinement steps, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    k_sweep: Option<Vec<usize>>,
    /// Skip the TV-vs-k chart.
    #[arg(long)]
    no_svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Teacher(a) => cmd_teacher(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn usage(msg: &str) -> LabError {
    LabError::Usage(msg.into())
}

fn cmd_teacher(a: TeacherArgs) -> Result<()> {
    let (teacher, codebook) = match a.family {
        Family::Pair => {
            if a.n.is_some_and(|n| n != 2) || a.vocab.is_some_and(|v| v != 2) {
                return Err(usage("the pair teacher has n = 2 and V = 2"));
            }
            (TabularTeacher::pair(), Codebook::pair(a.dim.unwrap_or(1) as usize)?)
        }
        Family::Dirichlet => {
            let (Some(n), Some(v), Some(seed)) = (a.n, a.vocab, a.seed) else {
                return Err(usage("the dirichlet family needs --n, --V and --seed"));
            };
            if !(a.concentration.is_finite() && a.concentration > 0.0) {
                return Err(usage("--concentration must be positive"));
            }
            let dim = a.dim.unwrap_or(2) as usize;
            (
                TabularTeacher::dirichlet(n as usize, v as usize, a.concentration, seed)?,
                Codebook::scattered(v as usize, dim, seed)?,
            )
        }
        Family::Custom => {
            let (Some(t), Some(c)) = (&a.teacher_file, &a.codebook_file) else {
                return Err(usage("the custom family needs --teacher-file and --codebook-file"));
            };
            let teacher: TabularTeacher = files::read_json(t)?;
            let codebook: Codebook = files::read_json(c)?;
            if teacher.vocab() != codebook.vocab() {
                return Err(LabError::Config("teacher and codebook vocabularies differ".into()));
            }
            (teacher, codebook)
        }
    };
    let out = a.out.unwrap_or_else(files::output_root);
    files::write_json(&out.join("teacher.json"), &teacher)?;
    files::write_json(&out.join("codebook.json"), &codebook)?;
    print_summary(&teacher, &codebook, &out)
}

fn print_summary(teacher: &TabularTeacher, cb: &Codebook, out: &Path) -> Result<()> {
    println!("positions {}  vocab {}  dim {}", teacher.len(), cb.vocab(), cb.dim());
    match teacher.sequence_count() {
        Some(count) if count <= csd_core::teacher::ENUMERATION_CAP => {
            let dist = teacher.enumerate_distribution()?;
            let entropy: f64 = dist.iter().filter(|(_, &p)| p > 0.0).map(|(_, &p)| -p * p.ln()).sum();
            let mut top: Vec<_> = dist.iter().collect();
            top.sort_by(|a, b| b.1.total_cmp(a.1));
            println!("sequences {count}  support {}  entropy {entropy:.4} nats", top.iter().filter(|e| *e.1 > 0.0).count());
            for (z, p) in top.iter().take(8) {
                println!("  {:?}  {p:.6}", z.ids());
            }
        }
        _ => println!("sequence space too large to enumerate"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = run::load_config(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let exp = Experiment::new(cfg, base)?;
    let dir = a.run_dir.unwrap_or_else(|| {
        let stem = a.config.file_stem().map(|s| s.to_owned()).unwrap_or_else(|| "run".into());
        files::output_root().join(stem)
    });
    let sel = match a.phase {
        PhaseArg::Init => PhaseSel::Init,
        PhaseArg::Main => PhaseSel::Main,
        PhaseArg::Align => PhaseSel::Align,
        PhaseArg::Dd1 => PhaseSel::Dd1,
        PhaseArg::All => PhaseSel::All,
    };
    let mut log = |m: &str| eprintln!("{m}");
    match run::train(&dir, &exp, sel, a.stop_after, &mut log)? {
        Outcome::Completed { report: Some(r) } => {
            println!("one-step TV {:.4}  (raw {:.4})", r.one_step_tv, r.one_step_tv_raw);
            if let Some(tv) = r.ar_diffusion_tv {
                println!("AR-diffusion TV {tv:.4}");
            }
            for k in &r.k_sweep {
                println!("k={} TV {:.4}", k.k, k.tv);
            }
        }
        Outcome::Completed { report: None } => {}
        Outcome::Stopped { phase, iteration } => println!("stopped in {phase:?} at iteration {iteration}"),
    }
    println!("run directory {}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let samples = a.samples.map(|s| s as usize);
    let r = run::evaluate_run(&a.run_dir, samples, a.k_sweep.as_deref(), !a.no_svg)?;
    println!("{}", files::to_json(&r).trim_end());
    Ok(())
}
