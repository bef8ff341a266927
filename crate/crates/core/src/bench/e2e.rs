use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::blocks::{Executor, FnBlock, IdentityControl, Node, RunReport};
use crate::platform::Platform;
use crate::state::StateSpace;

use super::{BenchError, LatencySample, Op};

pub const MIN_OFFSET_PAIRS: usize = 100;

/// Offset between two clocks from `(local_recv_ns, remote_stamp_ns)` pairs:
/// the minimum of `local - remote`. The estimate exceeds the true offset by
/// the smallest one-way delay among the pairs, so every corrected delta is
/// non-negative.
pub fn infer_offset(pairs: &[(u64, u64)]) -> Result<i64, BenchError> {
    if pairs.len() < MIN_OFFSET_PAIRS {
        return Err(BenchError::TooFewSamples {
            got: pairs.len(),
            need: MIN_OFFSET_PAIRS,
        });
    }
    let min = pairs
        .iter()
        .map(|&(local, remote)| local as i128 - remote as i128)
        .min()
        .expect("non-empty");
    Ok(min as i64)
}

#[derive(Debug, Clone)]
pub struct E2eOptions {
    pub control_rate_hz: f64,
    pub n_samples: usize,
    /// How long to poll the device state for extra offset pairs before the
    /// control loop starts.
    pub calibration: Duration,
}

impl Default for E2eOptions {
    fn default() -> Self {
        E2eOptions {
            control_rate_hz: 50.0,
            n_samples: 250,
            calibration: Duration::from_millis(500),
        }
    }
}

/// Raw per-cycle stamps: local clock for send and recv, platform clock for
/// the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct E2eStamp {
    pub tick: u64,
    pub send_local_ns: u64,
    pub state_remote_ns: u64,
    pub state_local_recv_ns: u64,
}

#[derive(Debug, Clone)]
pub struct E2eRun {
    pub stamps: Vec<E2eStamp>,
    pub pairs: Vec<(u64, u64)>,
    pub offset_ns: i64,
    pub samples: Vec<LatencySample>,
    pub run: RunReport,
}

impl E2eRun {
    pub fn write_stamps_csv(&self, path: &Path) -> Result<(), BenchError> {
        let mut text = String::from("tick,send_local_ns,state_remote_ns,state_local_recv_ns\n");
        for s in &self.stamps {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                s.tick, s.send_local_ns, s.state_remote_ns, s.state_local_recv_ns
            );
        }
        std::fs::write(path, text).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn poll_pairs(space: &StateSpace, label: &str, window: Duration) -> Result<Vec<(u64, u64)>, BenchError> {
    let mut buf = vec![0u8; space.meta(label)?.byte_len()];
    let mut last = space.seq(label)?;
    let mut pairs = Vec::new();
    let end = Instant::now() + window;
    while Instant::now() < end {
        let (remote, seq) = space.read_into(label, &mut buf)?;
        if seq != last {
            pairs.push((space.now_ns(), remote));
            last = seq;
        } else {
            std::hint::spin_loop();
        }
    }
    Ok(pairs)
}

/// Runs `zip(recv, q_des = q, send, stamp)` at the control rate and measures
/// the time from each command's send back to the platform stamp of the state
/// it was computed from, corrected by the inferred clock offset.
pub fn bench_e2e(space: &StateSpace, platform: Platform, opts: &E2eOptions) -> Result<E2eRun, BenchError> {
    if opts.n_samples == 0 {
        return Err(BenchError::NoSamples);
    }
    let mut pairs = poll_pairs(space, platform.state_label(), opts.calibration)?;

    let stamps = Arc::new(Mutex::new(Vec::with_capacity(opts.n_samples)));
    let stamp = {
        let (stamps, probe) = (stamps.clone(), platform.probe.clone());
        FnBlock::new("stamp", &[], &[], move |io| {
            let send_local_ns = io.now_ns();
            if let Some(s) = probe.last_state() {
                stamps.lock().push(E2eStamp {
                    tick: io.tick(),
                    send_local_ns,
                    state_remote_ns: s.remote_ns,
                    state_local_recv_ns: s.local_recv_ns,
                });
            }
            Ok(false)
        })
        .stateful()
    };
    let mut graph = Node::zip(vec![
        Node::leaf(platform.recv),
        Node::leaf(IdentityControl::new("identity", "q", "q_des")),
        Node::leaf(platform.send),
        Node::leaf(stamp),
    ]);
    let run = Executor::new(opts.control_rate_hz)
        .max_ticks(opts.n_samples as u64)
        .run(&mut graph, space)
        .map_err(|e| BenchError::Block(e.error))?;
    drop(graph);

    let stamps = std::mem::take(&mut *stamps.lock());
    pairs.extend(stamps.iter().map(|s| (s.state_local_recv_ns, s.state_remote_ns)));
    let offset_ns = infer_offset(&pairs).map_err(|e| BenchError::OffsetUnavailable(e.to_string()))?;
    let samples = stamps
        .iter()
        .map(|s| LatencySample {
            op: Op::EndToEnd,
            tick: s.tick,
            value_ns: (s.send_local_ns as i128 - s.state_remote_ns as i128 - offset_ns as i128) as i64,
        })
        .collect();
    Ok(E2eRun {
        stamps,
        pairs,
        offset_ns,
        samples,
        run,
    })
}
