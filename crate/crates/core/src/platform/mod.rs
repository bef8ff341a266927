//! Platform adapters.
//!
//! [`make_platform`] binds a device to a state space and returns the
//! recv / send / close block triple. The device keeps its own joint order;
//! the blocks translate between that order and the workflow's using the
//! joint-name [`Alignment`].
//!
//! Two devices are provided: a simulated PD joint chain and a loopback that
//! echoes commands back as states. Either runs on a background producer
//! thread at `state_rate_hz` ([`SimMode::Threaded`]) or is advanced inside the
//! recv block by a fixed number of substeps ([`SimMode::Lockstep`]), which is
//! fully deterministic.
//!
//! Device-side data lives in two labels owned by the platform:
//! `<name>.state` (`[2, dof]`: q, dq) and `<name>.cmd` (`[5, dof]`: q_des,
//! dq_des, tau_ff, kp, kd). State writes carry the platform clock's stamp.

mod sim;
mod spec;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use crate::blocks::{BlockError, ControlBlock, StateIo};
use crate::state::{DType, StateError, StateSpace};

pub use sim::{sim_step, Command, SimJointState};
pub use spec::{
    align_params, Alignment, PlatformSpec, DEFAULT_DAMPING, DEFAULT_INERTIA, DEFAULT_STATE_RATE_HZ,
};

use sim::{Device, LoopbackDevice, SimDevice};

/// Workflow-side labels every platform requires, each of shape `[dof]`.
pub const WORKFLOW_LABELS: [&str; 7] = ["q", "dq", "q_des", "dq_des", "tau_ff", "kp", "kd"];

/// The platform clock reads `PLATFORM_CLOCK_BASE_NS + host_ns + clock_offset_ns`.
pub const PLATFORM_CLOCK_BASE_NS: u64 = 1_000_000_000_000;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("invalid platform spec: {0}")]
    SpecInvalid(String),
    #[error("platform spec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("joint mismatch: missing on platform {missing:?}, not in workflow {extra:?}")]
    JointMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("non-finite {0}")]
    NonFiniteInput(&'static str),
    #[error("platform device stopped: {0}")]
    DeviceFailed(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlatformKind {
    Sim,
    Loopback,
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlatformKind::Sim => "sim",
            PlatformKind::Loopback => "loopback",
        })
    }
}

impl FromStr for PlatformKind {
    type Err = PlatformError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(PlatformKind::Sim),
            "loopback" => Ok(PlatformKind::Loopback),
            other => Err(PlatformError::SpecInvalid(format!("unknown platform kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Background producer at `state_rate_hz`.
    Threaded,
    /// Each recv advances the device by `substeps` platform ticks.
    Lockstep { substeps: usize },
}

#[derive(Debug, Clone)]
pub struct PlatformOptions {
    pub kind: PlatformKind,
    pub mode: SimMode,
    /// Loopback echo delay in platform ticks.
    pub echo_delay: usize,
    /// Workflow joint order; `None` uses the platform's own order.
    pub workflow_joints: Option<Vec<String>>,
}

impl PlatformOptions {
    pub fn new(kind: PlatformKind) -> Self {
        PlatformOptions {
            kind,
            mode: SimMode::Threaded,
            echo_delay: 0,
            workflow_joints: None,
        }
    }

    pub fn lockstep(mut self, substeps: usize) -> Self {
        self.mode = SimMode::Lockstep { substeps };
        self
    }

    pub fn echo_delay(mut self, ticks: usize) -> Self {
        self.echo_delay = ticks;
        self
    }

    pub fn workflow_joints(mut self, joints: Vec<String>) -> Self {
        self.workflow_joints = Some(joints);
        self
    }
}

/// Stamp of the most recent device state consumed by recv.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateStamp {
    /// Platform-clock time the state was produced.
    pub remote_ns: u64,
    /// Host-clock time recv finished reading it.
    pub local_recv_ns: u64,
    pub seq: u64,
}

#[derive(Debug, Default)]
pub struct Probe {
    last: Mutex<Option<StateStamp>>,
}

impl Probe {
    pub fn last_state(&self) -> Option<StateStamp> {
        *self.last.lock()
    }
}

/// Registers any missing [`WORKFLOW_LABELS`] as zeroed `f64[dof]` arrays.
pub fn register_workflow_labels(space: &StateSpace, dof: usize) -> Result<(), StateError> {
    for label in WORKFLOW_LABELS {
        if !space.contains(label) {
            space.register_zeros(label, DType::F64, &[dof])?;
        }
    }
    Ok(())
}

pub fn platform_clock_ns(space: &StateSpace, clock_offset_ns: i64) -> u64 {
    (PLATFORM_CLOCK_BASE_NS as i64 + space.now_ns() as i64 + clock_offset_ns) as u64
}

struct Labels {
    state: String,
    cmd: String,
    dof: usize,
    clock_offset_ns: i64,
}

impl Labels {
    fn read_cmd(&self, space: &StateSpace, buf: &mut [u8]) -> Result<Option<Command>, StateError> {
        let (_, seq) = space.read_into(&self.cmd, buf)?;
        if seq == 0 {
            return Ok(None);
        }
        Ok(Some(Command::from_rows(&decode_f64(buf), self.dof)))
    }

    fn publish(&self, space: &StateSpace, device: &dyn Device) -> Result<u64, StateError> {
        let mut packed = Vec::with_capacity(2 * self.dof);
        packed.extend_from_slice(device.q());
        packed.extend_from_slice(device.dq());
        space.write_f64_at(&self.state, &packed, platform_clock_ns(space, self.clock_offset_ns))
    }
}

struct Producer {
    stop: Arc<AtomicBool>,
    failure: Arc<Mutex<Option<String>>>,
    handle: Mutex<Option<JoinHandle<()>>>,
}

impl Producer {
    fn spawn(space: StateSpace, labels: Arc<Labels>, mut device: Box<dyn Device>, rate_hz: f64) -> std::io::Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let failure = Arc::new(Mutex::new(None));
        let handle = {
            let (stop, failure) = (stop.clone(), failure.clone());
            thread::Builder::new().name("platform-producer".into()).spawn(move || {
                let dt = 1.0 / rate_hz;
                let start = Instant::now();
                let mut buf = vec![0u8; Command::ROWS * labels.dof * 8];
                let mut k: u64 = 0;
                while !stop.load(Ordering::Acquire) {
                    k += 1;
                    let due = start + Duration::from_secs_f64(k as f64 * dt);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                    let r = labels
                        .read_cmd(&space, &mut buf)
                        .map_err(PlatformError::from)
                        .and_then(|cmd| device.tick(cmd.as_ref(), dt))
                        .and_then(|_| Ok(labels.publish(&space, device.as_ref())?));
                    if let Err(e) = r {
                        *failure.lock() = Some(e.to_string());
                        break;
                    }
                }
            })?
        };
        Ok(Producer {
            stop,
            failure,
            handle: Mutex::new(Some(handle)),
        })
    }

    fn shutdown(&self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.lock().take() {
            let _ = h.join();
        }
    }

    fn check(&self) -> Result<(), PlatformError> {
        match &*self.failure.lock() {
            Some(msg) => Err(PlatformError::DeviceFailed(msg.clone())),
            None => Ok(()),
        }
    }
}

impl Drop for Producer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A platform bound to a state space.
pub struct Platform {
    pub recv: RecvBlock,
    pub send: SendBlock,
    pub close: CloseBlock,
    pub alignment: Alignment,
    pub spec: PlatformSpec,
    pub probe: Arc<Probe>,
    labels: Arc<Labels>,
}

impl Platform {
    /// Label holding the device state `[q; dq]` in platform order.
    pub fn state_label(&self) -> &str {
        &self.labels.state
    }

    /// Label holding the packed command in platform order.
    pub fn cmd_label(&self) -> &str {
        &self.labels.cmd
    }
}

/// Binds a device described by `spec` to `space`.
///
/// The workflow labels in [`WORKFLOW_LABELS`] must already be registered with
/// `dof` elements each. The device starts at the workflow's current `q`.
/// When `kp` and `kd` are still all zero they are filled with the spec's
/// gains in workflow order.
pub fn make_platform(opts: &PlatformOptions, spec: &PlatformSpec, space: &StateSpace) -> Result<Platform, PlatformError> {
    spec.validate()?;
    let dof = spec.dof();
    for label in WORKFLOW_LABELS {
        let meta = space
            .meta(label)
            .map_err(|_| PlatformError::SpecInvalid(format!("workflow label {label:?} is not registered")))?;
        if meta.len() != dof {
            return Err(PlatformError::SpecInvalid(format!(
                "workflow label {label:?} has {} elements, platform {} has {dof} joints",
                meta.len(),
                spec.name
            )));
        }
    }
    let workflow_joints = opts.workflow_joints.clone().unwrap_or_else(|| spec.joint_names.clone());
    let alignment = align_params(&workflow_joints, spec)?;
    for (label, gains) in [("kp", &alignment.workflow_view.kp), ("kd", &alignment.workflow_view.kd)] {
        let current = space.read(label)?;
        if current.seq == 0 && current.data.to_f64().iter().all(|&v| v == 0.0) {
            space.write_f64(label, gains)?;
        }
    }
    let labels = Arc::new(Labels {
        state: format!("{}.state", spec.name),
        cmd: format!("{}.cmd", spec.name),
        dof,
        clock_offset_ns: spec.clock_offset_ns,
    });
    space.register_zeros(&labels.state, DType::F64, &[2, dof])?;
    space.register_zeros(&labels.cmd, DType::F64, &[Command::ROWS, dof])?;

    let q0 = alignment.to_platform.apply_f64(&space.read_f64("q")?);
    let device: Box<dyn Device> = match opts.kind {
        PlatformKind::Sim => Box::new(SimDevice::new(spec, q0)),
        PlatformKind::Loopback => Box::new(LoopbackDevice::new(q0, opts.echo_delay)),
    };
    labels.publish(space, device.as_ref())?;

    let (producer, lockstep) = match opts.mode {
        SimMode::Threaded => {
            let p = Producer::spawn(space.clone(), labels.clone(), device, spec.state_rate_hz)
                .map_err(|e| PlatformError::DeviceFailed(e.to_string()))?;
            (Some(Arc::new(p)), None)
        }
        SimMode::Lockstep { substeps } => (None, Some((device, substeps.max(1)))),
    };

    let probe = Arc::new(Probe::default());
    let mut recv_reads = vec![labels.state.clone()];
    let mut recv_writes = vec!["q".to_string(), "dq".to_string()];
    if lockstep.is_some() {
        recv_reads.push(labels.cmd.clone());
        recv_writes.push(labels.state.clone());
    }
    let recv = RecvBlock {
        name: "recv".into(),
        reads: recv_reads,
        writes: recv_writes,
        labels: labels.clone(),
        to_workflow: alignment.to_workflow.gather.clone(),
        dt: 1.0 / spec.state_rate_hz,
        lockstep,
        producer: producer.clone(),
        probe: probe.clone(),
        state_buf: vec![0u8; 2 * dof * 8],
        cmd_buf: vec![0u8; Command::ROWS * dof * 8],
    };
    let send = SendBlock {
        name: "send".into(),
        reads: ["q_des", "dq_des", "tau_ff", "kp", "kd"].map(String::from).to_vec(),
        writes: vec![labels.cmd.clone()],
        to_platform: alignment.to_platform.gather.clone(),
        producer: producer.clone(),
    };
    let close = CloseBlock {
        name: "close".into(),
        producer,
    };
    Ok(Platform {
        recv,
        send,
        close,
        alignment,
        spec: spec.clone(),
        probe,
        labels,
    })
}

fn decode_f64(buf: &[u8]) -> Vec<f64> {
    buf.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

fn gather(values: &[f64], gather: &[usize]) -> Vec<f64> {
    gather.iter().map(|&i| values[i]).collect()
}

/// Pulls the latest device state into the workflow's `q` and `dq`.
pub struct RecvBlock {
    name: String,
    reads: Vec<String>,
    writes: Vec<String>,
    labels: Arc<Labels>,
    to_workflow: Vec<usize>,
    dt: f64,
    lockstep: Option<(Box<dyn Device>, usize)>,
    producer: Option<Arc<Producer>>,
    probe: Arc<Probe>,
    state_buf: Vec<u8>,
    cmd_buf: Vec<u8>,
}

impl RecvBlock {
    fn advance(&mut self, io: &StateIo<'_>) -> Result<(), BlockError> {
        let fail = |e: PlatformError| BlockError::failed(&self.name, e);
        if let Some(p) = &self.producer {
            p.check().map_err(fail)?;
        }
        if let Some((device, substeps)) = &mut self.lockstep {
            for _ in 0..*substeps {
                let cmd = self.labels.read_cmd_io(io, &mut self.cmd_buf)?;
                device.tick(cmd.as_ref(), self.dt).map_err(fail)?;
            }
            let mut packed = Vec::with_capacity(2 * self.labels.dof);
            packed.extend_from_slice(device.q());
            packed.extend_from_slice(device.dq());
            let ts = (PLATFORM_CLOCK_BASE_NS as i64 + io.now_ns() as i64 + self.labels.clock_offset_ns) as u64;
            io.write_f64_at(&self.labels.state, &packed, ts)?;
        }
        Ok(())
    }
}

impl Labels {
    fn read_cmd_io(&self, io: &StateIo<'_>, buf: &mut [u8]) -> Result<Option<Command>, BlockError> {
        let (_, seq) = io.read_into(&self.cmd, buf)?;
        if seq == 0 {
            return Ok(None);
        }
        Ok(Some(Command::from_rows(&decode_f64(buf), self.dof)))
    }
}

impl ControlBlock for RecvBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.reads
    }
    fn writes(&self) -> &[String] {
        &self.writes
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        self.advance(io)?;
        let (remote_ns, seq) = io.read_into(&self.labels.state, &mut self.state_buf)?;
        let local_recv_ns = io.now_ns();
        let packed = decode_f64(&self.state_buf);
        let dof = self.labels.dof;
        io.write_f64("q", &gather(&packed[..dof], &self.to_workflow))?;
        io.write_f64("dq", &gather(&packed[dof..], &self.to_workflow))?;
        *self.probe.last.lock() = Some(StateStamp {
            remote_ns,
            local_recv_ns,
            seq,
        });
        Ok(false)
    }
}

/// Pushes the workflow's command labels to the device.
pub struct SendBlock {
    name: String,
    reads: Vec<String>,
    writes: Vec<String>,
    to_platform: Vec<usize>,
    producer: Option<Arc<Producer>>,
}

impl ControlBlock for SendBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.reads
    }
    fn writes(&self) -> &[String] {
        &self.writes
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        if let Some(p) = &self.producer {
            p.check().map_err(|e| BlockError::failed(&self.name, e))?;
        }
        let mut packed = Vec::with_capacity(self.to_platform.len() * Command::ROWS);
        for label in &self.reads {
            packed.extend(gather(&io.read_f64(label)?, &self.to_platform));
        }
        io.write_f64(&self.writes[0], &packed)?;
        Ok(false)
    }
}

/// Stops the device's producer; done immediately.
pub struct CloseBlock {
    name: String,
    producer: Option<Arc<Producer>>,
}

impl ControlBlock for CloseBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &[]
    }
    fn writes(&self) -> &[String] {
        &[]
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, _io: &StateIo<'_>) -> Result<bool, BlockError> {
        if let Some(p) = &self.producer {
            p.shutdown();
        }
        Ok(true)
    }
    fn close(&mut self, _io: &StateIo<'_>) -> Result<(), BlockError> {
        if let Some(p) = &self.producer {
            p.shutdown();
        }
        Ok(())
    }
}
