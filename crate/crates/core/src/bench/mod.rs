//! Latency benchmark harness: Recv, Send and end-to-end timings over any
//! backend, with clock offset inference for stamps taken on another clock.

mod e2e;
mod measure;
mod report;

use thiserror::Error;

use crate::blocks::BlockError;
use crate::platform::PlatformError;
use crate::state::StateError;

pub use e2e::{bench_e2e, infer_offset, E2eOptions, E2eRun, E2eStamp, MIN_OFFSET_PAIRS};
pub use measure::{bench_recv, bench_send, BenchRig, SyntheticProducer, BENCH_CMD_LABEL, BENCH_STATE_LABEL};
pub use report::{read_raw_csv, render_table, write_raw_csv, LatencyReport, OpStats};

/// Samples discarded before measurement starts.
pub const DEFAULT_WARMUP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Recv,
    Send,
    EndToEnd,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Recv, Op::Send, Op::EndToEnd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Op::Recv => "recv",
            Op::Send => "send",
            Op::EndToEnd => "e2e",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Op::Recv => "Recv",
            Op::Send => "Send",
            Op::EndToEnd => "End-to-end",
        }
    }
}

impl std::str::FromStr for Op {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| BenchError::Parse(format!("unknown op {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub op: Op,
    pub tick: u64,
    pub value_ns: i64,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no samples requested")]
    NoSamples,
    #[error("producer on {label:?} is silent: sequence did not advance")]
    ProducerSilent { label: String },
    #[error("offset inference needs at least {need} pairs, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("clock offset unavailable: {0}")]
    OffsetUnavailable(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad sample dump: {0}")]
    Parse(String),
}
