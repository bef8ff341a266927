//! Global runtime state as labeled, vectorized arrays.
//!
//! A [`StateSpace`] maps labels to fixed-shape numeric arrays. Writing an
//! array publishes it; reading returns the latest committed snapshot. The
//! same API runs over three backends selected by [`BackendKind`]:
//!
//! * `InProcess` keeps each array in a heap seqlock cell.
//! * `SharedMemory` places the same cells in a named, file-backed segment so
//!   other processes can attach and read without locks.
//! * `Socket` keeps a latest-value cache per label and publishes every write
//!   as one framed TCP message to connected peers.

mod dtype;
mod index_map;
pub(crate) mod shm;
pub(crate) mod slot;
pub mod socket;

use std::collections::HashMap;
use std::fmt;
use std::net::SocketAddr;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use thiserror::Error;

pub use dtype::{DType, Element, Values};
pub use index_map::IndexMap;
pub use shm::{segment_path, DEFAULT_SEGMENT_BYTES};
pub use slot::MAX_READ_RETRIES;

use shm::Segment;
use slot::{CacheSlot, SeqRegion};
use socket::SocketBus;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("label {0:?} is already registered")]
    DuplicateLabel(String),
    #[error("invalid shape {shape:?} for {label:?}: dimensions must be >= 1")]
    ShapeInvalid { label: String, shape: Vec<usize> },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("length mismatch for {label:?}: expected {expected} values, got {got}")]
    LengthMismatch {
        label: String,
        expected: usize,
        got: usize,
    },
    #[error("dtype mismatch for {label:?}: array is {expected}, got {got}")]
    DTypeMismatch {
        label: String,
        expected: DType,
        got: DType,
    },
    #[error("unknown dtype {0:?}")]
    UnknownDType(String),
    #[error("gather index {index} out of bounds for source of length {source_len}")]
    GatherOutOfBounds { index: usize, source_len: usize },
    #[error("torn read on {0:?}: writer kept the cell busy for {MAX_READ_RETRIES} retries")]
    TornRead(String),
    #[error("socket backend is down: {0}")]
    BackendDown(String),
    #[error("shared memory segment full: need {needed} bytes, capacity {capacity}")]
    SegmentFull { needed: usize, capacity: usize },
    #[error("invalid shared memory segment name {0:?}")]
    InvalidSegmentName(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Storage / transport substrate of a state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    InProcess,
    SharedMemory { segment_name: String },
    Socket { endpoint: String },
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::InProcess => f.write_str("inproc"),
            BackendKind::SharedMemory { segment_name } => write!(f, "shm:{segment_name}"),
            BackendKind::Socket { endpoint } => write!(f, "socket:{endpoint}"),
        }
    }
}

impl BackendKind {
    /// Short name used in reports: `inproc`, `shm` or `socket`.
    pub fn short_name(&self) -> &'static str {
        match self {
            BackendKind::InProcess => "inproc",
            BackendKind::SharedMemory { .. } => "shm",
            BackendKind::Socket { .. } => "socket",
        }
    }
}

/// Registration-time description of an array. Fixed for the array's lifetime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayMeta {
    pub label: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl ArrayMeta {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype.size()
    }
}

/// A committed snapshot of one labeled array.
#[derive(Debug, Clone, PartialEq)]
pub struct StateArray {
    pub label: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Values,
    pub timestamp_ns: u64,
    pub seq: u64,
}

pub(crate) enum Slot {
    Seq(SeqRegion),
    Cache(CacheSlot),
}

pub(crate) struct Entry {
    pub(crate) meta: ArrayMeta,
    /// Wire id announced to socket peers.
    pub(crate) id: u16,
    /// False for labels learned from a socket peer.
    pub(crate) local_origin: bool,
    pub(crate) slot: Slot,
}

impl Entry {
    #[inline]
    fn read_into(&self, out: &mut [u8]) -> Result<(u64, u64), StateError> {
        match &self.slot {
            Slot::Seq(r) => r
                .read_into(out)
                .ok_or_else(|| StateError::TornRead(self.meta.label.clone())),
            Slot::Cache(c) => Ok(c.read_into(out)),
        }
    }

    #[inline]
    fn commit(&self, payload: &[u8], ts: u64) -> (u64, u64) {
        match &self.slot {
            Slot::Seq(r) => r.commit(payload, ts),
            Slot::Cache(c) => c.commit(payload, ts),
        }
    }

    fn seq(&self) -> u64 {
        match &self.slot {
            Slot::Seq(r) => r.seq(),
            Slot::Cache(c) => c.seq(),
        }
    }
}

#[derive(Default)]
pub(crate) struct Registry {
    by_label: HashMap<String, Arc<Entry>>,
    order: Vec<Arc<Entry>>,
}

pub(crate) enum Store {
    InProcess,
    Shm(Arc<Segment>),
    Socket(Arc<SocketBus>),
}

pub(crate) struct SpaceInner {
    backend: BackendKind,
    origin: Instant,
    pub(crate) registry: RwLock<Registry>,
    pub(crate) store: Store,
}

impl Drop for SpaceInner {
    fn drop(&mut self) {
        if let Store::Socket(bus) = &self.store {
            bus.shutdown();
        }
    }
}

/// The registry of all labeled arrays, shared by cheap clones.
#[derive(Clone)]
pub struct StateSpace {
    pub(crate) inner: Arc<SpaceInner>,
}

impl fmt::Debug for StateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpace")
            .field("backend", &self.inner.backend)
            .field("labels", &self.labels())
            .finish()
    }
}

fn check_shape(label: &str, shape: &[usize]) -> Result<(), StateError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(StateError::ShapeInvalid {
            label: label.to_string(),
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

impl StateSpace {
    /// Creates a space on the given backend. `SharedMemory` creates (or
    /// truncates) the named segment; `Socket` binds a listener at the endpoint
    /// and publishes to every peer that connects.
    pub fn new(backend: BackendKind) -> Result<Self, StateError> {
        match &backend {
            BackendKind::InProcess => Ok(Self::with_store(backend, Store::InProcess)),
            BackendKind::SharedMemory { segment_name } => {
                let seg = Segment::create(segment_name, DEFAULT_SEGMENT_BYTES)?;
                Ok(Self::with_store(backend, Store::Shm(Arc::new(seg))))
            }
            BackendKind::Socket { endpoint } => {
                let endpoint = endpoint.clone();
                socket::bind_hub(&endpoint)
            }
        }
    }

    pub fn in_process() -> Self {
        Self::with_store(BackendKind::InProcess, Store::InProcess)
    }

    pub fn shared_memory(segment_name: &str) -> Result<Self, StateError> {
        Self::new(BackendKind::SharedMemory {
            segment_name: segment_name.to_string(),
        })
    }

    /// Opens an existing segment created by another space (possibly in
    /// another process) and maps every label it has registered so far.
    pub fn attach_shared_memory(segment_name: &str) -> Result<Self, StateError> {
        let seg = Arc::new(Segment::attach(segment_name)?);
        let space = Self::with_store(
            BackendKind::SharedMemory {
                segment_name: segment_name.to_string(),
            },
            Store::Shm(seg),
        );
        space.sync_segment()?;
        Ok(space)
    }

    /// Binds a socket publisher at `endpoint` (`host:port`, port 0 picks one).
    pub fn socket_hub(endpoint: &str) -> Result<Self, StateError> {
        socket::bind_hub(endpoint)
    }

    /// Connects to a socket publisher and mirrors the labels it announces.
    pub fn socket_connect(endpoint: &str) -> Result<Self, StateError> {
        socket::connect_peer(endpoint)
    }

    pub(crate) fn with_store(backend: BackendKind, store: Store) -> Self {
        StateSpace {
            inner: Arc::new(SpaceInner {
                backend,
                origin: Instant::now(),
                registry: RwLock::new(Registry::default()),
                store,
            }),
        }
    }

    pub(crate) fn downgrade(&self) -> Weak<SpaceInner> {
        Arc::downgrade(&self.inner)
    }

    pub(crate) fn from_inner(inner: Arc<SpaceInner>) -> Self {
        StateSpace { inner }
    }

    pub fn backend(&self) -> &BackendKind {
        &self.inner.backend
    }

    /// Local address of the socket listener or connection, if any.
    pub fn local_endpoint(&self) -> Option<SocketAddr> {
        match &self.inner.store {
            Store::Socket(bus) => bus.local_addr(),
            _ => None,
        }
    }

    /// Monotonic origin of this space's clock.
    pub fn created_at(&self) -> Instant {
        self.inner.origin
    }

    /// Nanoseconds since the space was created.
    #[inline]
    pub fn now_ns(&self) -> u64 {
        self.inner.origin.elapsed().as_nanos() as u64
    }

    /// Picks up labels registered in the shared segment by other spaces.
    /// No-op on other backends.
    pub fn sync_segment(&self) -> Result<usize, StateError> {
        let Store::Shm(seg) = &self.inner.store else {
            return Ok(0);
        };
        let mut added = 0;
        let mut reg = self.inner.registry.write();
        for d in seg.directory()? {
            if reg.by_label.contains_key(&d.label) {
                continue;
            }
            let meta = ArrayMeta {
                label: d.label.clone(),
                dtype: d.dtype,
                shape: d.shape,
            };
            if d.offset + slot::region_bytes(meta.byte_len()) > seg.capacity() {
                return Err(StateError::Protocol(format!(
                    "region for {} exceeds segment",
                    d.label
                )));
            }
            // SAFETY: offset comes from the segment directory and was bounds
            // checked above; regions are 64-byte aligned by the allocator.
            let region = unsafe { SeqRegion::mapped(seg.clone(), d.offset, meta.byte_len()) };
            let entry = Arc::new(Entry {
                id: reg.order.len() as u16,
                meta,
                local_origin: false,
                slot: Slot::Seq(region),
            });
            reg.by_label.insert(d.label, entry.clone());
            reg.order.push(entry);
            added += 1;
        }
        Ok(added)
    }

    /// Registers a new array. Zero-filled unless `init` is given; starts at `seq = 0`.
    pub fn register(
        &self,
        label: &str,
        dtype: DType,
        shape: &[usize],
        init: Option<&Values>,
    ) -> Result<ArrayHandle, StateError> {
        check_shape(label, shape)?;
        let meta = ArrayMeta {
            label: label.to_string(),
            dtype,
            shape: shape.to_vec(),
        };
        let payload = match init {
            Some(v) => {
                if v.dtype() != dtype {
                    return Err(StateError::DTypeMismatch {
                        label: label.to_string(),
                        expected: dtype,
                        got: v.dtype(),
                    });
                }
                if v.len() != meta.len() {
                    return Err(StateError::LengthMismatch {
                        label: label.to_string(),
                        expected: meta.len(),
                        got: v.len(),
                    });
                }
                v.to_bytes()
            }
            None => vec![0u8; meta.byte_len()],
        };
        let entry = {
            let mut reg = self.inner.registry.write();
            if reg.by_label.contains_key(label) {
                return Err(StateError::DuplicateLabel(label.to_string()));
            }
            let now = self.now_ns();
            let slot = match &self.inner.store {
                Store::InProcess => {
                    let r = SeqRegion::heap(payload.len());
                    r.initialize(&payload, now);
                    Slot::Seq(r)
                }
                Store::Shm(seg) => {
                    let mut region = None;
                    seg.allocate(
                        label,
                        dtype,
                        shape,
                        slot::region_bytes(payload.len()),
                        |offset| {
                            // SAFETY: `allocate` hands out an aligned, in-bounds offset.
                            let r = unsafe { SeqRegion::mapped(seg.clone(), offset, payload.len()) };
                            r.initialize(&payload, now);
                            region = Some(r);
                        },
                    )?;
                    Slot::Seq(region.expect("allocate runs init"))
                }
                Store::Socket(_) => Slot::Cache(CacheSlot::new(&payload, now)),
            };
            let entry = Arc::new(Entry {
                meta,
                id: reg.order.len() as u16,
                local_origin: true,
                slot,
            });
            reg.by_label.insert(label.to_string(), entry.clone());
            reg.order.push(entry.clone());
            entry
        };
        if let Store::Socket(bus) = &self.inner.store {
            bus.announce(&entry);
        }
        Ok(ArrayHandle {
            space: self.clone(),
            entry,
        })
    }

    /// Registers a zero-filled array.
    pub fn register_zeros(
        &self,
        label: &str,
        dtype: DType,
        shape: &[usize],
    ) -> Result<ArrayHandle, StateError> {
        self.register(label, dtype, shape, None)
    }

    /// Inserts an entry learned from a socket peer.
    pub(crate) fn adopt_remote(&self, meta: ArrayMeta) -> Result<Arc<Entry>, StateError> {
        let mut reg = self.inner.registry.write();
        if let Some(existing) = reg.by_label.get(&meta.label) {
            return Ok(existing.clone());
        }
        let zeros = vec![0u8; meta.byte_len()];
        let entry = Arc::new(Entry {
            id: reg.order.len() as u16,
            slot: Slot::Cache(CacheSlot::new(&zeros, 0)),
            local_origin: false,
            meta,
        });
        reg.by_label.insert(entry.meta.label.clone(), entry.clone());
        reg.order.push(entry.clone());
        // Announce back under the registry lock so the sender learns our id
        // before any local write to the label can be published.
        if let Store::Socket(bus) = &self.inner.store {
            bus.announce(&entry);
        }
        Ok(entry)
    }

    #[inline]
    pub(crate) fn entry(&self, label: &str) -> Result<Arc<Entry>, StateError> {
        self.inner
            .registry
            .read()
            .by_label
            .get(label)
            .cloned()
            .ok_or_else(|| StateError::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.inner.registry.read().by_label.contains_key(label)
    }

    /// Labels in registration order.
    pub fn labels(&self) -> Vec<String> {
        self.inner
            .registry
            .read()
            .order
            .iter()
            .map(|e| e.meta.label.clone())
            .collect()
    }

    pub fn meta(&self, label: &str) -> Result<ArrayMeta, StateError> {
        Ok(self.entry(label)?.meta.clone())
    }

    pub fn handle(&self, label: &str) -> Result<ArrayHandle, StateError> {
        Ok(ArrayHandle {
            space: self.clone(),
            entry: self.entry(label)?,
        })
    }

    /// Current sequence number of `label`.
    pub fn seq(&self, label: &str) -> Result<u64, StateError> {
        Ok(self.entry(label)?.seq())
    }

    #[inline]
    pub(crate) fn commit_bytes(
        &self,
        entry: &Entry,
        payload: &[u8],
        ts: u64,
    ) -> Result<u64, StateError> {
        if let Store::Socket(bus) = &self.inner.store {
            bus.ensure_up()?;
            let (seq, ts) = entry.commit(payload, ts);
            bus.publish(entry, seq, ts, payload);
            Ok(seq)
        } else {
            Ok(entry.commit(payload, ts).0)
        }
    }

    fn write_typed<T: Element>(
        &self,
        entry: &Entry,
        values: &[T],
        ts: u64,
    ) -> Result<u64, StateError> {
        let meta = &entry.meta;
        if T::DTYPE != meta.dtype {
            return Err(StateError::DTypeMismatch {
                label: meta.label.clone(),
                expected: meta.dtype,
                got: T::DTYPE,
            });
        }
        if values.len() != meta.len() {
            return Err(StateError::LengthMismatch {
                label: meta.label.clone(),
                expected: meta.len(),
                got: values.len(),
            });
        }
        let mut buf = [0u8; 256];
        if meta.byte_len() <= buf.len() {
            let bytes = &mut buf[..meta.byte_len()];
            dtype::encode_slice(values, bytes);
            self.commit_bytes(entry, bytes, ts)
        } else {
            let mut bytes = vec![0u8; meta.byte_len()];
            dtype::encode_slice(values, &mut bytes);
            self.commit_bytes(entry, &bytes, ts)
        }
    }

    fn write_values_entry(
        &self,
        entry: &Entry,
        values: &Values,
        ts: u64,
    ) -> Result<u64, StateError> {
        let meta = &entry.meta;
        if values.dtype() != meta.dtype {
            return Err(StateError::DTypeMismatch {
                label: meta.label.clone(),
                expected: meta.dtype,
                got: values.dtype(),
            });
        }
        if values.len() != meta.len() {
            return Err(StateError::LengthMismatch {
                label: meta.label.clone(),
                expected: meta.len(),
                got: values.len(),
            });
        }
        self.commit_bytes(entry, &values.to_bytes(), ts)
    }

    fn write_f64_entry(&self, entry: &Entry, values: &[f64], ts: u64) -> Result<u64, StateError> {
        let meta = &entry.meta;
        if values.len() != meta.len() {
            return Err(StateError::LengthMismatch {
                label: meta.label.clone(),
                expected: meta.len(),
                got: values.len(),
            });
        }
        if meta.dtype == DType::F64 {
            return self.write_typed(entry, values, ts);
        }
        self.commit_bytes(entry, &Values::from_f64(meta.dtype, values).to_bytes(), ts)
    }

    /// Publishes `values` to `label`. The element type must match the array's dtype.
    pub fn write<T: Element>(&self, label: &str, values: &[T]) -> Result<u64, StateError> {
        let entry = self.entry(label)?;
        self.write_typed(&entry, values, self.now_ns())
    }

    pub fn write_values(&self, label: &str, values: &Values) -> Result<u64, StateError> {
        let entry = self.entry(label)?;
        self.write_values_entry(&entry, values, self.now_ns())
    }

    /// Publishes `values` converted to the array's dtype.
    pub fn write_f64(&self, label: &str, values: &[f64]) -> Result<u64, StateError> {
        let entry = self.entry(label)?;
        self.write_f64_entry(&entry, values, self.now_ns())
    }

    /// Like [`write_f64`](Self::write_f64) with a caller-supplied timestamp,
    /// for producers that stamp data with their own clock. The stored
    /// timestamp never moves backwards.
    pub fn write_f64_at(
        &self,
        label: &str,
        values: &[f64],
        timestamp_ns: u64,
    ) -> Result<u64, StateError> {
        let entry = self.entry(label)?;
        self.write_f64_entry(&entry, values, timestamp_ns)
    }

    /// Copies the latest raw little-endian payload into `out`, returning
    /// `(timestamp_ns, seq)`. `out` must be exactly the array's byte length.
    #[inline]
    pub fn read_into(&self, label: &str, out: &mut [u8]) -> Result<(u64, u64), StateError> {
        let entry = self.entry(label)?;
        if out.len() != entry.meta.byte_len() {
            return Err(StateError::LengthMismatch {
                label: label.to_string(),
                expected: entry.meta.byte_len(),
                got: out.len(),
            });
        }
        entry.read_into(out)
    }

    fn read_entry(&self, entry: &Entry) -> Result<StateArray, StateError> {
        let meta = &entry.meta;
        let mut bytes = vec![0u8; meta.byte_len()];
        let (timestamp_ns, seq) = entry.read_into(&mut bytes)?;
        Ok(StateArray {
            label: meta.label.clone(),
            dtype: meta.dtype,
            shape: meta.shape.clone(),
            data: Values::decode(meta.dtype, &bytes),
            timestamp_ns,
            seq,
        })
    }

    /// Latest committed snapshot of `label`.
    pub fn read(&self, label: &str) -> Result<StateArray, StateError> {
        let entry = self.entry(label)?;
        self.read_entry(&entry)
    }

    /// Latest values as `T`; the element type must match the array's dtype.
    pub fn read_as<T: Element>(&self, label: &str) -> Result<Vec<T>, StateError> {
        let entry = self.entry(label)?;
        if T::DTYPE != entry.meta.dtype {
            return Err(StateError::DTypeMismatch {
                label: label.to_string(),
                expected: entry.meta.dtype,
                got: T::DTYPE,
            });
        }
        let snap = self.read_entry(&entry)?;
        Ok(T::view(&snap.data).expect("dtype checked").to_vec())
    }

    /// Latest values converted to `f64`.
    pub fn read_f64(&self, label: &str) -> Result<Vec<f64>, StateError> {
        Ok(self.read(label)?.data.to_f64())
    }

    /// Applies `map` as one commit to its target: `target[i] = source[gather[i]] * scale[i] + offset[i]`.
    pub fn apply_map(&self, map: &IndexMap) -> Result<u64, StateError> {
        let source = self.entry(&map.source_label)?;
        let target = self.entry(&map.target_label)?;
        map.check(source.meta.len(), target.meta.len())?;
        if map.is_pure_gather() && source.meta.dtype == target.meta.dtype {
            let size = source.meta.dtype.size();
            let mut src = vec![0u8; source.meta.byte_len()];
            source.read_into(&mut src)?;
            let mut out = vec![0u8; target.meta.byte_len()];
            for (dst, &g) in out.chunks_exact_mut(size).zip(&map.gather) {
                dst.copy_from_slice(&src[g * size..(g + 1) * size]);
            }
            self.commit_bytes(&target, &out, self.now_ns())
        } else {
            let src = self.read_entry(&source)?.data.to_f64();
            let out = map.apply_f64(&src);
            self.write_f64_entry(&target, &out, self.now_ns())
        }
    }

    /// Polls until `label` exists and its seq reaches `min_seq`, or `timeout` elapses.
    pub fn wait_for_seq(&self, label: &str, min_seq: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if let Ok(seq) = self.seq(label) {
                if seq >= min_seq {
                    return true;
                }
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }
}

/// Pre-resolved reference to one array; skips the label lookup on each access.
#[derive(Clone)]
pub struct ArrayHandle {
    space: StateSpace,
    entry: Arc<Entry>,
}

impl fmt::Debug for ArrayHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ArrayHandle").field(&self.entry.meta).finish()
    }
}

impl ArrayHandle {
    pub fn meta(&self) -> &ArrayMeta {
        &self.entry.meta
    }

    pub fn label(&self) -> &str {
        &self.entry.meta.label
    }

    pub fn seq(&self) -> u64 {
        self.entry.seq()
    }

    pub fn read(&self) -> Result<StateArray, StateError> {
        self.space.read_entry(&self.entry)
    }

    pub fn read_f64(&self) -> Result<Vec<f64>, StateError> {
        Ok(self.read()?.data.to_f64())
    }

    #[inline]
    pub fn read_into(&self, out: &mut [u8]) -> Result<(u64, u64), StateError> {
        self.entry.read_into(out)
    }

    pub fn write<T: Element>(&self, values: &[T]) -> Result<u64, StateError> {
        self.space
            .write_typed(&self.entry, values, self.space.now_ns())
    }

    pub fn write_f64(&self, values: &[f64]) -> Result<u64, StateError> {
        self.space
            .write_f64_entry(&self.entry, values, self.space.now_ns())
    }

    pub fn write_f64_at(&self, values: &[f64], timestamp_ns: u64) -> Result<u64, StateError> {
        self.space.write_f64_entry(&self.entry, values, timestamp_ns)
    }

    pub fn write_values(&self, values: &Values) -> Result<u64, StateError> {
        self.space
            .write_values_entry(&self.entry, values, self.space.now_ns())
    }
}

#[cfg(test)]
pub(crate) mod tests;
