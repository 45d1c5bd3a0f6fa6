//! Occlusion boundary detection toolkit.
//!
//! - [`maps`]: grid types, OCCM files and dataset manifests.
//! - [`losses`]: class-balanced cross entropy, focal and attention losses,
//!   smooth-L1 orientation loss and the batch multi-task objective.
//! - [`thinning`]: non-maximum suppression and tangent-based orientation
//!   adjustment.
//! - [`benchmark`]: boundary matching, ODS/OIS/AP and the occlusion curves.
//! - [`synth`]: synthetic occlusion scenes with exact labels.
//! - [`trainer`]: a tiny two-head convnet trained with the multi-task loss.

pub mod angle;
pub mod benchmark;
pub mod error;
pub mod losses;
pub mod maps;
pub mod parallel;
pub mod synth;
pub mod thinning;
pub mod trainer;

pub use error::{Error, Result};
pub use parallel::Execution;
