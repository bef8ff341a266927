//! Trajectory recording, replay and reality-gap metrics.

mod blocks;
mod file;
mod metrics;

use std::path::Path;

use thiserror::Error;

pub use blocks::{Recorder, Replayer};
pub use file::{Frame, Trajectory, TrajectoryWriter, FILE_MAGIC, FOOTER_MAGIC};
pub use metrics::{
    analyze, default_max_shift, stepwise_mse, stepwise_mse_series, unfolded_loss, unfolded_loss_series, GapReport,
    LabelGap, Mse, ShiftRange, UnfoldOptions, Unfolded,
};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt recording: {0}")]
    FileCorrupt(String),
    #[error("schema mismatch for {label:?}: recording has {recorded}, state has {live}")]
    SchemaMismatch {
        label: String,
        recorded: String,
        live: String,
    },
    #[error("invalid recording spec: {0}")]
    SpecInvalid(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("max shift {max_shift} needs trajectories longer than {max_shift} frames (shorter has {min_len})")]
    WindowTooLarge { max_shift: usize, min_len: usize },
    #[error("trajectories share no labels")]
    NoCommonLabels,
}

impl ReplayError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ReplayError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
