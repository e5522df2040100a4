//! Conditional score distillation of an exact autoregressive teacher.
//!
//! The teacher is a dense table of next-token distributions over a small
//! codebook. Each conditional is viewed as a Dirac mixture transported from a
//! standard Gaussian along the rectified-flow path `x_t = (1 - t) x_0 + t eps`,
//! which gives a closed-form conditional score. A one-step generator is trained
//! so that its per-position conditional score matches the teacher's, with a
//! guidance network tracking the generator's own conditional score.
//!
//! Everything here is pure computation over `alloc` collections; file formats,
//! run directories and the command line live in the companion `csd-lab` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codebook;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod teacher;
pub mod training;

#[cfg(test)]
mod testutil;

pub use codebook::{corrupt, embed, quantize, quantize_point, Codebook, EmbedSeq, ProbVector, TokenSeq};
pub use error::{Error, Result};
pub use schedule::Schedule;
pub use teacher::{SeqDist, TabularTeacher};
