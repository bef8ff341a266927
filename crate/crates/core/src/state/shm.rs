//! File-backed shared memory segment.
//!
//! Layout:
//!
//! ```text
//! 0      8 bytes  magic "UCSHMSG1"
//! 8      u64      capacity (total bytes)
//! 16     u64      next free region offset
//! 24     u64      directory length in bytes
//! 64     ...      directory: "LABEL <offset> <name> <dtype> <d0,d1,...>\n" lines
//! 65536  ...      label regions, 64-byte aligned:
//!                 [u64 version][u64 seq][u64 timestamp_ns][payload]
//! ```
//!
//! Only one process registers labels at a time; the directory length is
//! published with release ordering after the line bytes are in place.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::{MmapOptions, MmapRaw};
use parking_lot::Mutex;

use super::{DType, StateError};

const MAGIC: &[u8; 8] = b"UCSHMSG1";
const DIR_START: usize = 64;
pub(crate) const DATA_START: usize = 64 * 1024;
const REGION_ALIGN: usize = 64;

/// Default segment size: 4 MiB (sparse on tmpfs).
pub const DEFAULT_SEGMENT_BYTES: usize = 4 << 20;

pub(crate) struct Segment {
    map: MmapRaw,
    path: PathBuf,
    owner: bool,
    register_lock: Mutex<()>,
    _file: File,
}

// SAFETY: the mapping is only touched through atomics (header words and label
// regions) or append-only directory bytes guarded by `register_lock` and the
// release/acquire handoff on the directory length.
unsafe impl Send for Segment {}
unsafe impl Sync for Segment {}

pub(crate) struct DirEntry {
    pub offset: usize,
    pub label: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

pub fn segment_path(name: &str) -> PathBuf {
    let dev_shm = Path::new("/dev/shm");
    if dev_shm.is_dir() {
        dev_shm.join(name)
    } else {
        std::env::temp_dir().join(name)
    }
}

fn check_name(name: &str) -> Result<(), StateError> {
    if name.is_empty() || name.contains('/') || name.contains('\0') {
        return Err(StateError::InvalidSegmentName(name.to_string()));
    }
    Ok(())
}

impl Segment {
    /// Creates (or truncates) a segment and becomes its owner; the backing
    /// file is unlinked when the owner is dropped.
    pub(crate) fn create(name: &str, capacity: usize) -> Result<Self, StateError> {
        check_name(name)?;
        let capacity = capacity.max(DATA_START + 4096);
        let path = segment_path(name);
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        file.set_len(capacity as u64)?;
        let map = MmapOptions::new().len(capacity).map_raw(&file)?;
        let seg = Segment {
            map,
            path,
            owner: true,
            register_lock: Mutex::new(()),
            _file: file,
        };
        // SAFETY: the fresh mapping is at least DATA_START bytes long.
        unsafe { std::ptr::copy_nonoverlapping(MAGIC.as_ptr(), seg.base_ptr(), 8) };
        seg.header(1).store(capacity as u64, Ordering::Relaxed);
        seg.header(2).store(DATA_START as u64, Ordering::Relaxed);
        seg.header(3).store(0, Ordering::Release);
        Ok(seg)
    }

    pub(crate) fn attach(name: &str) -> Result<Self, StateError> {
        check_name(name)?;
        let path = segment_path(name);
        let file = OpenOptions::new().read(true).write(true).open(&path)?;
        let len = file.metadata()?.len() as usize;
        if len < DATA_START {
            return Err(StateError::Protocol(format!(
                "segment {name} is too small ({len} bytes)"
            )));
        }
        let map = MmapOptions::new().len(len).map_raw(&file)?;
        let seg = Segment {
            map,
            path,
            owner: false,
            register_lock: Mutex::new(()),
            _file: file,
        };
        let mut magic = [0u8; 8];
        // SAFETY: mapping is at least DATA_START bytes.
        unsafe { std::ptr::copy_nonoverlapping(seg.base_ptr(), magic.as_mut_ptr(), 8) };
        if &magic != MAGIC {
            return Err(StateError::Protocol(format!("segment {name} has bad magic")));
        }
        Ok(seg)
    }

    pub(crate) fn base_ptr(&self) -> *mut u8 {
        self.map.as_mut_ptr()
    }

    fn header(&self, word: usize) -> &AtomicU64 {
        // SAFETY: header words are within the first 64 bytes and 8-aligned
        // (mmap returns page-aligned memory).
        unsafe { &*(self.base_ptr().add(word * 8) as *const AtomicU64) }
    }

    pub(crate) fn capacity(&self) -> usize {
        self.map.len()
    }

    /// Reserves a zeroed region, lets `init` fill it, then appends the
    /// directory line that makes it visible to attaching processes.
    pub(crate) fn allocate(
        &self,
        label: &str,
        dtype: DType,
        shape: &[usize],
        region_len: usize,
        init: impl FnOnce(usize),
    ) -> Result<usize, StateError> {
        let _guard = self.register_lock.lock();
        let next = self.header(2).load(Ordering::Acquire) as usize;
        let offset = next.next_multiple_of(REGION_ALIGN);
        if offset + region_len > self.capacity() {
            return Err(StateError::SegmentFull {
                needed: region_len,
                capacity: self.capacity(),
            });
        }
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let line = format!("LABEL {offset} {label} {dtype} {}\n", dims.join(","));
        let dir_len = self.header(3).load(Ordering::Acquire) as usize;
        if DIR_START + dir_len + line.len() > DATA_START {
            return Err(StateError::SegmentFull {
                needed: line.len(),
                capacity: DATA_START - DIR_START,
            });
        }
        // SAFETY: bounds checked above; bytes beyond the published directory
        // length are not read by anyone until the length store below.
        unsafe {
            std::ptr::write_bytes(self.base_ptr().add(offset), 0, region_len);
        }
        init(offset);
        unsafe {
            std::ptr::copy_nonoverlapping(
                line.as_ptr(),
                self.base_ptr().add(DIR_START + dir_len),
                line.len(),
            );
        }
        self.header(2)
            .store((offset + region_len) as u64, Ordering::Release);
        self.header(3)
            .store((dir_len + line.len()) as u64, Ordering::Release);
        Ok(offset)
    }

    fn read_bytes(&self, start: usize, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        // SAFETY: callers keep `start + len` within the directory area.
        unsafe { std::ptr::copy_nonoverlapping(self.base_ptr().add(start), out.as_mut_ptr(), len) };
        out
    }

    pub(crate) fn directory(&self) -> Result<Vec<DirEntry>, StateError> {
        let dir_len = self.header(3).load(Ordering::Acquire) as usize;
        let bytes = self.read_bytes(DIR_START, dir_len);
        let text = String::from_utf8(bytes)
            .map_err(|_| StateError::Protocol("segment directory is not utf-8".into()))?;
        text.lines().map(parse_dir_line).collect()
    }
}

fn parse_dir_line(line: &str) -> Result<DirEntry, StateError> {
    let bad = || StateError::Protocol(format!("bad segment directory line: {line:?}"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some("LABEL") {
        return Err(bad());
    }
    let offset = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let label = parts.next().ok_or_else(bad)?.to_string();
    let dtype = parts.next().ok_or_else(bad)?.parse()?;
    let shape = parts
        .next()
        .ok_or_else(bad)?
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DirEntry {
        offset,
        label,
        dtype,
        shape,
    })
}

impl Drop for Segment {
    fn drop(&mut self) {
        if self.owner {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}
