use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::state::{BackendKind, DType, StateError, StateSpace, Values};

use super::{BenchError, LatencySample, Op};

pub const BENCH_STATE_LABEL: &str = "bench.state";
pub const BENCH_CMD_LABEL: &str = "bench.cmd";
const BENCH_ELEMS: usize = 12;

/// A publisher/subscriber pair of spaces over one backend.
///
/// `writer` owns the labels and hosts the producer; `reader` is the
/// controller's view: the same space in-process, an attached mapping for
/// shared memory, a connected peer for sockets.
pub struct BenchRig {
    pub writer: StateSpace,
    pub reader: StateSpace,
}

impl BenchRig {
    pub fn new(backend: &BackendKind) -> Result<Self, BenchError> {
        let writer = StateSpace::new(backend.clone())?;
        for label in [BENCH_STATE_LABEL, BENCH_CMD_LABEL] {
            writer.register_zeros(label, DType::F32, &[BENCH_ELEMS])?;
        }
        let reader = match backend {
            BackendKind::InProcess => writer.clone(),
            BackendKind::SharedMemory { segment_name } => StateSpace::attach_shared_memory(segment_name)?,
            BackendKind::Socket { .. } => {
                let addr = writer
                    .local_endpoint()
                    .ok_or_else(|| StateError::BackendDown("hub has no local endpoint".into()))?;
                let peer = StateSpace::socket_connect(&addr.to_string())?;
                let deadline = Instant::now() + Duration::from_secs(2);
                while !(peer.contains(BENCH_STATE_LABEL) && peer.contains(BENCH_CMD_LABEL)) {
                    if Instant::now() > deadline {
                        return Err(StateError::UnknownLabel(BENCH_CMD_LABEL.into()).into());
                    }
                    thread::sleep(Duration::from_millis(1));
                }
                peer
            }
        };
        Ok(BenchRig { writer, reader })
    }

    pub fn spawn_producer(&self, rate_hz: f64) -> SyntheticProducer {
        SyntheticProducer::spawn(self.writer.clone(), BENCH_STATE_LABEL, rate_hz)
    }
}

/// Writes `[k, k, ...]` to a label at a fixed rate on its own thread.
pub struct SyntheticProducer {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Result<u64, StateError>>>,
}

impl SyntheticProducer {
    pub fn spawn(space: StateSpace, label: &str, rate_hz: f64) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let label = label.to_string();
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let meta = space.meta(&label)?;
            let start = Instant::now();
            let mut k = 0u64;
            while !flag.load(Ordering::Acquire) {
                k += 1;
                space.write_values(&label, &Values::from_f64(meta.dtype, &vec![k as f64; meta.len()]))?;
                let deadline = start + Duration::from_secs_f64(k as f64 / rate_hz);
                if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
            }
            Ok(k)
        });
        SyntheticProducer {
            stop,
            handle: Some(handle),
        }
    }

    /// Stops the thread and returns the number of writes.
    pub fn stop(mut self) -> Result<u64, StateError> {
        self.stop.store(true, Ordering::Release);
        self.handle
            .take()
            .expect("joined once")
            .join()
            .unwrap_or_else(|_| Err(StateError::Protocol("producer panicked".into())))
    }
}

impl Drop for SyntheticProducer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Times `warmup + n_samples` reads of the latest `label` snapshot and keeps
/// the last `n_samples`.
pub fn bench_recv(space: &StateSpace, label: &str, n_samples: usize, warmup: usize) -> Result<Vec<LatencySample>, BenchError> {
    if n_samples == 0 {
        return Err(BenchError::NoSamples);
    }
    let mut buf = vec![0u8; space.meta(label)?.byte_len()];
    let seq0 = space.seq(label)?;
    if !space.wait_for_seq(label, seq0 + 1, Duration::from_secs(1)) {
        return Err(BenchError::ProducerSilent { label: label.into() });
    }
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..warmup + n_samples {
        let t0 = Instant::now();
        space.read_into(label, &mut buf)?;
        let dt = t0.elapsed();
        if i >= warmup {
            out.push(LatencySample {
                op: Op::Recv,
                tick: (i - warmup) as u64,
                value_ns: dt.as_nanos() as i64,
            });
        }
    }
    Ok(out)
}

/// Times `warmup + n_samples` writes to `label` and keeps the last
/// `n_samples`. Consecutive writes alternate between two payloads.
pub fn bench_send(space: &StateSpace, label: &str, n_samples: usize, warmup: usize) -> Result<Vec<LatencySample>, BenchError> {
    if n_samples == 0 {
        return Err(BenchError::NoSamples);
    }
    let meta = space.meta(label)?;
    let payloads = [
        Values::from_f64(meta.dtype, &vec![1.0; meta.len()]),
        Values::from_f64(meta.dtype, &vec![2.0; meta.len()]),
    ];
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..warmup + n_samples {
        let values = &payloads[i % 2];
        let t0 = Instant::now();
        space.write_values(label, values)?;
        let dt = t0.elapsed();
        if i >= warmup {
            out.push(LatencySample {
                op: Op::Send,
                tick: (i - warmup) as u64,
                value_ns: dt.as_nanos() as i64,
            });
        }
    }
    Ok(out)
}
