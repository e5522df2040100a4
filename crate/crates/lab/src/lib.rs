//! File formats, run directories and the `csdlab` command line around
//! `csd-core`.

pub mod checkpoint;
pub mod error;
pub mod files;
pub mod metrics;
pub mod report;
pub mod run;
pub mod svg;

pub use error::{LabError, Result};
