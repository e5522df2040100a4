//! The per-run `metrics.csv` stream.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csd_core::training::StepRecord;

use crate::error::{LabError, Result};

pub const HEADER: &str = "phase,iteration,loss,guidance_loss,lr,ema_rate,eval_tv";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub phase: String,
    pub iteration: u64,
    pub loss: f64,
    pub guidance_loss: Option<f64>,
    pub lr: f64,
    pub ema_rate: Option<f64>,
    pub eval_tv: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn new(phase: &str, rec: &StepRecord, eval_tv: Option<f64>) -> Self {
        Row {
            phase: phase.into(),
            iteration: rec.iteration,
            loss: rec.loss,
            guidance_loss: rec.guidance_loss,
            lr: rec.lr,
            ema_rate: rec.ema_rate,
            eval_tv,
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.phase,
            self.iteration,
            self.loss,
            opt(self.guidance_loss),
            self.lr,
            opt(self.ema_rate),
            opt(self.eval_tv)
        )
    }

    fn parse(line: &str) -> Option<Row> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let num = |s: &str| s.parse::<f64>().ok();
        let opt = |s: &str| if s.is_empty() { Some(None) } else { num(s).map(Some) };
        Some(Row {
            phase: f[0].to_string(),
            iteration: f[1].parse().ok()?,
            loss: num(f[2])?,
            guidance_loss: opt(f[3])?,
            lr: num(f[4])?,
            ema_rate: opt(f[5])?,
            eval_tv: opt(f[6])?,
        })
    }
}

pub fn read(path: &Path) -> Result<Vec<Row>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(LabError::io(path)(e)),
    };
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h == HEADER => {}
        Some(_) => return Err(LabError::Config(format!("{}: unexpected metrics header", path.display()))),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| Row::parse(l).ok_or_else(|| LabError::Config(format!("{}: malformed row {l:?}", path.display()))))
        .collect()
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Opens the stream, keeping only the existing rows accepted by `keep`
    /// (rows past the last checkpoint are dropped on resume).
    pub fn open(path: &Path, keep: impl Fn(&Row) -> bool) -> Result<Self> {
        let kept: Vec<Row> = read(path)?.into_iter().filter(|r| keep(r)).collect();
        let mut text = String::from(HEADER);
        text.push('\n');
        for r in &kept {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        crate::files::write_atomic(path, text.as_bytes())?;
        let file = OpenOptions::new().append(true).open(path).map_err(LabError::io(path))?;
        Ok(MetricsWriter { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn append(&mut self, row: &Row) -> Result<()> {
        writeln!(self.out, "{}", row.to_line()).map_err(LabError::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(LabError::io(&self.path))
    }
}

/// Mean of the last `window` values of `pick` among rows of `phase`.
pub fn tail_mean(rows: &[Row], phase: &str, window: usize, pick: impl Fn(&Row) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter(|r| r.phase == phase).filter_map(pick).collect();
    if vals.is_empty() {
        return None;
    }
    let tail = &vals[vals.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}
