//! Recording file format, little-endian throughout:
//!
//! ```text
//! "UCTRJ1"  u32 label_count
//! per label: u16 name_len, name, u8 dtype_code, u8 ndim, u32 dims[ndim]
//! frames:    u64 tick, u64 timestamp_ns, payloads in label order
//! footer:    "UCEND", u64 frame_count
//! ```
//!
//! Frames are appended as they are produced, so a file cut short still holds
//! a readable prefix; a missing footer is recovered by counting whole frames.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::ReplayError;
use crate::state::{ArrayMeta, DType, Values};

pub const FILE_MAGIC: &[u8; 6] = b"UCTRJ1";
pub const FOOTER_MAGIC: &[u8; 5] = b"UCEND";
const FOOTER_LEN: usize = 5 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tick: u64,
    pub timestamp_ns: u64,
    /// One entry per label, in label order.
    pub values: Vec<Values>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub labels: Vec<ArrayMeta>,
    pub frames: Vec<Frame>,
    /// Nominal rate, inferred from the first and last timestamps.
    pub rate_hz: f64,
    /// False when the footer was missing and the frame count was recovered.
    pub complete: bool,
}

impl Trajectory {
    pub fn new(labels: Vec<ArrayMeta>) -> Self {
        Trajectory {
            labels,
            frames: Vec::new(),
            rate_hz: 0.0,
            complete: true,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|m| m.label == label)
    }

    pub fn meta(&self, label: &str) -> Option<&ArrayMeta> {
        self.label_index(label).map(|i| &self.labels[i])
    }

    /// Per-frame values of `label` as f64.
    pub fn series(&self, label: &str) -> Option<Vec<Vec<f64>>> {
        let i = self.label_index(label)?;
        Some(self.frames.iter().map(|f| f.values[i].to_f64()).collect())
    }

    pub fn frame_bytes(&self) -> usize {
        16 + self.labels.iter().map(ArrayMeta::byte_len).sum::<usize>()
    }

    fn infer_rate(&mut self) {
        self.rate_hz = match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) if b.timestamp_ns > a.timestamp_ns => {
                (self.frames.len() - 1) as f64 * 1e9 / (b.timestamp_ns - a.timestamp_ns) as f64
            }
            _ => 0.0,
        };
    }

    pub fn encode_header(labels: &[ArrayMeta]) -> Vec<u8> {
        let mut out = FILE_MAGIC.to_vec();
        out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
        for m in labels {
            out.extend_from_slice(&(m.label.len() as u16).to_le_bytes());
            out.extend_from_slice(m.label.as_bytes());
            out.push(m.dtype.code());
            out.push(m.shape.len() as u8);
            for &d in &m.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn encode_frame(frame: &Frame, out: &mut Vec<u8>) {
        out.extend_from_slice(&frame.tick.to_le_bytes());
        out.extend_from_slice(&frame.timestamp_ns.to_le_bytes());
        for v in &frame.values {
            out.extend_from_slice(&v.to_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::encode_header(&self.labels);
        for f in &self.frames {
            Self::encode_frame(f, &mut out);
        }
        out.extend_from_slice(FOOTER_MAGIC);
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReplayError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(6)? != FILE_MAGIC {
            return Err(ReplayError::FileCorrupt("bad magic".into()));
        }
        let n_labels = r.u32()? as usize;
        let mut labels = Vec::with_capacity(n_labels.min(1024));
        for _ in 0..n_labels {
            let len = r.u16()? as usize;
            let label = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| ReplayError::FileCorrupt("label is not utf-8".into()))?;
            let code = r.u8()?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| ReplayError::FileCorrupt(format!("unknown dtype code {code}")))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if shape.is_empty() || shape.contains(&0) {
                return Err(ReplayError::FileCorrupt(format!("label {label:?} has shape {shape:?}")));
            }
            labels.push(ArrayMeta { label, dtype, shape });
        }
        let mut traj = Trajectory::new(labels);
        let frame_len = traj.frame_bytes();
        let body = &bytes[r.pos..];
        let footer_count = (body.len() >= FOOTER_LEN && &body[body.len() - FOOTER_LEN..][..5] == FOOTER_MAGIC)
            .then(|| u64::from_le_bytes(body[body.len() - 8..].try_into().expect("8 bytes")));
        let n_frames = match footer_count {
            Some(n) if (body.len() - FOOTER_LEN) == n as usize * frame_len => n as usize,
            Some(n) if (body.len() - FOOTER_LEN).is_multiple_of(frame_len) => {
                return Err(ReplayError::FileCorrupt(format!(
                    "footer says {n} frames, file holds {}",
                    (body.len() - FOOTER_LEN) / frame_len
                )))
            }
            _ => {
                traj.complete = false;
                body.len() / frame_len
            }
        };
        let mut fr = Cursor { bytes: body, pos: 0 };
        for _ in 0..n_frames {
            let tick = fr.u64()?;
            let timestamp_ns = fr.u64()?;
            let values = traj
                .labels
                .iter()
                .map(|m| Ok(Values::decode(m.dtype, fr.take(m.byte_len())?)))
                .collect::<Result<Vec<_>, ReplayError>>()?;
            if let Some(prev) = traj.frames.last() {
                if tick <= prev.tick {
                    return Err(ReplayError::FileCorrupt(format!(
                        "tick {tick} does not follow {}",
                        prev.tick
                    )));
                }
            }
            traj.frames.push(Frame {
                tick,
                timestamp_ns,
                values,
            });
        }
        traj.infer_rate();
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let bytes = std::fs::read(path).map_err(|e| ReplayError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ReplayError::io(path, e))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ReplayError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ReplayError::FileCorrupt("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ReplayError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ReplayError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, ReplayError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, ReplayError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Append-only writer; [`TrajectoryWriter::finish`] adds the footer.
pub struct TrajectoryWriter {
    out: BufWriter<File>,
    path: PathBuf,
    frames: u64,
    frame_len: usize,
    last_tick: Option<u64>,
    buf: Vec<u8>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path, labels: &[ArrayMeta]) -> Result<Self, ReplayError> {
        let file = File::create(path).map_err(|e| ReplayError::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&Trajectory::encode_header(labels))
            .map_err(|e| ReplayError::io(path, e))?;
        Ok(TrajectoryWriter {
            out,
            path: path.to_path_buf(),
            frames: 0,
            frame_len: 16 + labels.iter().map(ArrayMeta::byte_len).sum::<usize>(),
            last_tick: None,
            buf: Vec::new(),
        })
    }

    /// Appends one frame; `payloads` holds every label's raw bytes in order.
    pub fn append_raw(&mut self, tick: u64, timestamp_ns: u64, payloads: &[u8]) -> Result<(), ReplayError> {
        if self.last_tick.is_some_and(|t| tick <= t) {
            return Err(ReplayError::SpecInvalid(format!("tick {tick} does not advance")));
        }
        if 16 + payloads.len() != self.frame_len {
            return Err(ReplayError::SpecInvalid("frame payload has the wrong size".into()));
        }
        self.buf.clear();
        self.buf.extend_from_slice(&tick.to_le_bytes());
        self.buf.extend_from_slice(&timestamp_ns.to_le_bytes());
        self.buf.extend_from_slice(payloads);
        self.out
            .write_all(&self.buf)
            .map_err(|e| ReplayError::io(&self.path, e))?;
        self.last_tick = Some(tick);
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn finish(mut self) -> Result<u64, ReplayError> {
        let mut footer = FOOTER_MAGIC.to_vec();
        footer.extend_from_slice(&self.frames.to_le_bytes());
        self.out
            .write_all(&footer)
            .and_then(|_| self.out.flush())
            .map_err(|e| ReplayError::io(&self.path, e))?;
        Ok(self.frames)
    }
}
