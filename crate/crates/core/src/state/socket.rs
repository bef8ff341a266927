//! Socket backend: latest-value publish/subscribe over TCP.
//!
//! Two kinds of messages share one stream and are told apart by their first
//! byte:
//!
//! * announcement lines, `LABEL <id> <name> <dtype> <d0,d1,...>\n`, sent for
//!   every registered label when a connection opens and for each label
//!   registered afterwards;
//! * frames, little-endian: magic `0x55 0x43` (`"UC"`), `u16` label id,
//!   `u64` seq, `u64` timestamp_ns, `u32` payload length, payload bytes.
//!
//! Label ids are scoped to the sending side of a connection. Each connection
//! has a background receive thread that swaps incoming frames into the
//! per-label cache, so reads never touch the network.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::slot::CachedFrame;
use super::{ArrayMeta, BackendKind, DType, Entry, Slot, SpaceInner, StateError, StateSpace, Store};

pub const FRAME_MAGIC: [u8; 2] = [0x55, 0x43];
pub const FRAME_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub label_id: u16,
    pub seq: u64,
    pub timestamp_ns: u64,
    pub payload_len: u32,
}

pub fn encode_frame(label_id: u16, seq: u64, timestamp_ns: u64, payload: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&label_id.to_le_bytes());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&timestamp_ns.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn decode_frame_header(bytes: &[u8; FRAME_HEADER_LEN]) -> Result<FrameHeader, StateError> {
    if bytes[..2] != FRAME_MAGIC {
        return Err(StateError::Protocol(format!(
            "bad frame magic {:02x} {:02x}",
            bytes[0], bytes[1]
        )));
    }
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    Ok(FrameHeader {
        label_id: u16::from_le_bytes([bytes[2], bytes[3]]),
        seq: u64_at(4),
        timestamp_ns: u64_at(12),
        payload_len: u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAnnounce {
    pub id: u16,
    pub label: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

pub fn format_label_line(id: u16, label: &str, dtype: DType, shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("LABEL {id} {label} {dtype} {}\n", dims.join(","))
}

pub fn parse_label_line(line: &str) -> Result<LabelAnnounce, StateError> {
    let bad = || StateError::Protocol(format!("bad announcement line {line:?}"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some("LABEL") {
        return Err(bad());
    }
    let id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let label = parts.next().ok_or_else(bad)?.to_string();
    let dtype = parts.next().ok_or_else(bad)?.parse()?;
    let shape = parts
        .next()
        .ok_or_else(bad)?
        .split(',')
        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(bad))
        .collect::<Result<Vec<_>, _>>()?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(LabelAnnounce {
        id,
        label,
        dtype,
        shape,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Hub,
    Peer,
}

struct PeerConn {
    stream: Mutex<TcpStream>,
    alive: AtomicBool,
}

pub(crate) struct SocketBus {
    role: Role,
    local_addr: Option<SocketAddr>,
    peers: Mutex<Vec<Arc<PeerConn>>>,
    shutdown: AtomicBool,
    lost: AtomicBool,
}

impl SocketBus {
    fn new(role: Role, local_addr: Option<SocketAddr>) -> Self {
        SocketBus {
            role,
            local_addr,
            peers: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
            lost: AtomicBool::new(false),
        }
    }

    pub(crate) fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    pub(crate) fn ensure_up(&self) -> Result<(), StateError> {
        if self.role == Role::Peer && self.lost.load(Ordering::Acquire) {
            return Err(StateError::BackendDown(
                "connection to publisher closed".into(),
            ));
        }
        Ok(())
    }

    fn broadcast(&self, bytes: &[u8]) {
        let mut peers = self.peers.lock();
        for p in peers.iter() {
            if p.stream.lock().write_all(bytes).is_err() {
                p.alive.store(false, Ordering::Release);
            }
        }
        peers.retain(|p| p.alive.load(Ordering::Acquire));
        if self.role == Role::Peer && peers.is_empty() {
            self.lost.store(true, Ordering::Release);
        }
    }

    pub(crate) fn announce(&self, entry: &Entry) {
        let m = &entry.meta;
        self.broadcast(format_label_line(entry.id, &m.label, m.dtype, &m.shape).as_bytes());
    }

    pub(crate) fn publish(&self, entry: &Entry, seq: u64, ts: u64, payload: &[u8]) {
        let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        encode_frame(entry.id, seq, ts, payload, &mut frame);
        self.broadcast(&frame);
    }

    pub(crate) fn shutdown(&self) {
        self.shutdown.store(true, Ordering::Release);
        for p in self.peers.lock().drain(..) {
            let _ = p.stream.lock().shutdown(std::net::Shutdown::Both);
        }
    }
}

pub(crate) fn bind_hub(endpoint: &str) -> Result<StateSpace, StateError> {
    let listener = TcpListener::bind(endpoint)?;
    listener.set_nonblocking(true)?;
    let bus = Arc::new(SocketBus::new(Role::Hub, Some(listener.local_addr()?)));
    let space = StateSpace::with_store(
        BackendKind::Socket {
            endpoint: endpoint.to_string(),
        },
        Store::Socket(bus.clone()),
    );
    let weak = space.downgrade();
    thread::Builder::new()
        .name("statebus-accept".into())
        .spawn(move || accept_loop(listener, bus, weak))?;
    Ok(space)
}

fn accept_loop(listener: TcpListener, bus: Arc<SocketBus>, space: Weak<SpaceInner>) {
    while !bus.shutdown.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let Some(inner) = space.upgrade() else { break };
                let _ = stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true));
                let _ = attach_conn(&StateSpace::from_inner(inner), &bus, stream);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

pub(crate) fn connect_peer(endpoint: &str) -> Result<StateSpace, StateError> {
    let deadline = Instant::now() + Duration::from_secs(2);
    let stream = loop {
        match TcpStream::connect(endpoint) {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(StateError::BackendDown(format!("connect {endpoint}: {e}"))),
        }
    };
    stream.set_nodelay(true)?;
    let bus = Arc::new(SocketBus::new(Role::Peer, Some(stream.local_addr()?)));
    let space = StateSpace::with_store(
        BackendKind::Socket {
            endpoint: endpoint.to_string(),
        },
        Store::Socket(bus.clone()),
    );
    attach_conn(&space, &bus, stream)?;
    Ok(space)
}

/// Sends the current label table and latest local frames, then starts the
/// receive thread for `stream`.
fn attach_conn(space: &StateSpace, bus: &Arc<SocketBus>, stream: TcpStream) -> Result<(), StateError> {
    let reader = stream.try_clone()?;
    let conn = Arc::new(PeerConn {
        stream: Mutex::new(stream),
        alive: AtomicBool::new(true),
    });
    {
        // lock order: registry, then peers
        let reg = space.inner.registry.read();
        let entries = &reg.order;
        let mut peers = bus.peers.lock();
        let mut hello = Vec::new();
        for e in entries {
            let m = &e.meta;
            hello.extend_from_slice(format_label_line(e.id, &m.label, m.dtype, &m.shape).as_bytes());
        }
        for e in entries.iter().filter(|e| e.local_origin) {
            if let Slot::Cache(c) = &e.slot {
                let f = c.latest();
                if f.seq > 0 {
                    encode_frame(e.id, f.seq, f.timestamp_ns, &f.payload, &mut hello);
                }
            }
        }
        conn.stream.lock().write_all(&hello)?;
        peers.push(conn.clone());
    }
    let weak = space.downgrade();
    let bus = bus.clone();
    thread::Builder::new()
        .name("statebus-recv".into())
        .spawn(move || {
            let _ = receive_loop(reader, &weak);
            conn.alive.store(false, Ordering::Release);
            let mut peers = bus.peers.lock();
            peers.retain(|p| !Arc::ptr_eq(p, &conn));
            if bus.role == Role::Peer {
                bus.lost.store(true, Ordering::Release);
            }
        })?;
    Ok(())
}

fn receive_loop(stream: TcpStream, space: &Weak<SpaceInner>) -> Result<(), StateError> {
    let mut r = BufReader::new(stream);
    // Sender id -> local entry; `None` marks a label whose schema disagrees.
    let mut ids: HashMap<u16, Option<Arc<Entry>>> = HashMap::new();
    loop {
        let first = match r.fill_buf() {
            Ok([]) => return Ok(()),
            Ok(buf) => buf[0],
            Err(e) => return Err(e.into()),
        };
        if first == b'L' {
            let mut line = String::new();
            r.read_line(&mut line)?;
            let ann = parse_label_line(line.trim_end())?;
            let Some(inner) = space.upgrade() else {
                return Ok(());
            };
            let space = StateSpace::from_inner(inner);
            let meta = ArrayMeta {
                label: ann.label.clone(),
                dtype: ann.dtype,
                shape: ann.shape,
            };
            let entry = match space.entry(&ann.label) {
                Ok(e) if e.meta == meta => Some(e),
                Ok(_) => None,
                Err(_) => Some(space.adopt_remote(meta)?),
            };
            ids.insert(ann.id, entry);
        } else if first == FRAME_MAGIC[0] {
            let mut hdr = [0u8; FRAME_HEADER_LEN];
            r.read_exact(&mut hdr)?;
            let h = decode_frame_header(&hdr)?;
            let mut payload = vec![0u8; h.payload_len as usize];
            r.read_exact(&mut payload)?;
            if let Some(Some(entry)) = ids.get(&h.label_id) {
                if let Slot::Cache(cache) = &entry.slot {
                    if payload.len() == entry.meta.byte_len() {
                        cache.store(CachedFrame {
                            seq: h.seq,
                            timestamp_ns: h.timestamp_ns,
                            payload: payload.into_boxed_slice(),
                        });
                    }
                }
            }
        } else {
            return Err(StateError::Protocol(format!(
                "unexpected leading byte {first:#04x}"
            )));
        }
    }
}
