//! Per-label storage cells.
//!
//! [`SeqRegion`] is a single-writer, multi-reader seqlock over a run of
//! 64-bit words laid out as `[version][seq][timestamp_ns][payload...]`. The
//! same layout is used on the heap (in-process backend) and inside a mapped
//! shared-memory segment. Every access goes through atomics, so a reader in
//! another thread or process never observes a torn payload: an odd version
//! means a write is in progress, and a version change across the payload copy
//! forces a retry.
//!
//! [`CacheSlot`] holds the latest frame received over a socket and is
//! replaced wholesale on every update.

use std::ptr::NonNull;
use std::sync::atomic::{fence, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::shm::Segment;

pub(crate) const HEADER_WORDS: usize = 3;

/// Retries a reader performs before reporting a torn read.
pub const MAX_READ_RETRIES: usize = 64;

pub(crate) fn payload_words(payload_bytes: usize) -> usize {
    payload_bytes.div_ceil(8)
}

pub(crate) fn region_bytes(payload_bytes: usize) -> usize {
    (HEADER_WORDS + payload_words(payload_bytes)) * 8
}

enum RegionOwner {
    Heap(#[allow(dead_code)] Box<[AtomicU64]>),
    Mapped(#[allow(dead_code)] Arc<Segment>),
}

pub(crate) struct SeqRegion {
    base: NonNull<AtomicU64>,
    words: usize,
    payload_bytes: usize,
    _owner: RegionOwner,
}

// SAFETY: all access to the region goes through `AtomicU64`, and the owner
// keeps the backing memory alive for the lifetime of the region.
unsafe impl Send for SeqRegion {}
unsafe impl Sync for SeqRegion {}

impl SeqRegion {
    pub(crate) fn heap(payload_bytes: usize) -> Self {
        let words = HEADER_WORDS + payload_words(payload_bytes);
        let boxed: Box<[AtomicU64]> = (0..words).map(|_| AtomicU64::new(0)).collect();
        let base = NonNull::new(boxed.as_ptr() as *mut AtomicU64).expect("non-null allocation");
        SeqRegion {
            base,
            words,
            payload_bytes,
            _owner: RegionOwner::Heap(boxed),
        }
    }

    /// # Safety
    ///
    /// `offset` must be 8-byte aligned and `offset + region_bytes(payload_bytes)`
    /// must lie inside the segment mapping.
    pub(crate) unsafe fn mapped(segment: Arc<Segment>, offset: usize, payload_bytes: usize) -> Self {
        let words = HEADER_WORDS + payload_words(payload_bytes);
        let ptr = segment.base_ptr().add(offset) as *mut AtomicU64;
        SeqRegion {
            base: NonNull::new(ptr).expect("mapped segment pointer"),
            words,
            payload_bytes,
            _owner: RegionOwner::Mapped(segment),
        }
    }

    #[inline]
    fn words(&self) -> &[AtomicU64] {
        // SAFETY: `base` points at `words` initialized atomics owned by `_owner`.
        unsafe { std::slice::from_raw_parts(self.base.as_ptr(), self.words) }
    }

    /// Sets the payload with `seq = 0` without bumping the sequence counter.
    pub(crate) fn initialize(&self, payload: &[u8], timestamp_ns: u64) {
        let w = self.words();
        w[0].store(0, Ordering::Relaxed);
        w[1].store(0, Ordering::Relaxed);
        w[2].store(timestamp_ns, Ordering::Relaxed);
        store_payload(&w[HEADER_WORDS..], payload);
        fence(Ordering::Release);
    }

    /// Publishes a new payload. Returns the committed `(seq, timestamp_ns)`;
    /// the timestamp never moves backwards.
    #[inline]
    pub(crate) fn commit(&self, payload: &[u8], timestamp_ns: u64) -> (u64, u64) {
        debug_assert_eq!(payload.len(), self.payload_bytes);
        let w = self.words();
        let busy = w[0].load(Ordering::Relaxed) | 1;
        w[0].store(busy, Ordering::Relaxed);
        fence(Ordering::Release);
        let seq = w[1].load(Ordering::Relaxed).wrapping_add(1);
        let ts = timestamp_ns.max(w[2].load(Ordering::Relaxed));
        w[1].store(seq, Ordering::Relaxed);
        w[2].store(ts, Ordering::Relaxed);
        store_payload(&w[HEADER_WORDS..], payload);
        w[0].store(busy.wrapping_add(1), Ordering::Release);
        (seq, ts)
    }

    /// Copies a consistent snapshot into `out`, returning `(timestamp_ns, seq)`,
    /// or `None` after [`MAX_READ_RETRIES`] failed attempts.
    #[inline]
    pub(crate) fn read_into(&self, out: &mut [u8]) -> Option<(u64, u64)> {
        debug_assert_eq!(out.len(), self.payload_bytes);
        let w = self.words();
        for _ in 0..MAX_READ_RETRIES {
            let v1 = w[0].load(Ordering::Acquire);
            if v1 & 1 == 1 {
                std::thread::yield_now();
                continue;
            }
            let seq = w[1].load(Ordering::Relaxed);
            let ts = w[2].load(Ordering::Relaxed);
            load_payload(&w[HEADER_WORDS..], out);
            fence(Ordering::Acquire);
            if w[0].load(Ordering::Relaxed) == v1 {
                return Some((ts, seq));
            }
        }
        None
    }

    #[inline]
    pub(crate) fn seq(&self) -> u64 {
        self.words()[1].load(Ordering::Acquire)
    }
}

#[inline]
fn store_payload(words: &[AtomicU64], payload: &[u8]) {
    for (word, chunk) in words.iter().zip(payload.chunks(8)) {
        let mut raw = [0u8; 8];
        raw[..chunk.len()].copy_from_slice(chunk);
        word.store(u64::from_le_bytes(raw), Ordering::Relaxed);
    }
}

#[inline]
fn load_payload(words: &[AtomicU64], out: &mut [u8]) {
    for (word, chunk) in words.iter().zip(out.chunks_mut(8)) {
        let raw = word.load(Ordering::Relaxed).to_le_bytes();
        chunk.copy_from_slice(&raw[..chunk.len()]);
    }
}

pub(crate) struct CachedFrame {
    pub(crate) seq: u64,
    pub(crate) timestamp_ns: u64,
    pub(crate) payload: Box<[u8]>,
}

/// Latest-value cache; each update swaps in a fresh frame.
pub(crate) struct CacheSlot {
    current: Mutex<Arc<CachedFrame>>,
}

impl CacheSlot {
    pub(crate) fn new(payload: &[u8], timestamp_ns: u64) -> Self {
        CacheSlot {
            current: Mutex::new(Arc::new(CachedFrame {
                seq: 0,
                timestamp_ns,
                payload: payload.into(),
            })),
        }
    }

    pub(crate) fn commit(&self, payload: &[u8], timestamp_ns: u64) -> (u64, u64) {
        let mut cur = self.current.lock();
        let seq = cur.seq.wrapping_add(1);
        let ts = timestamp_ns.max(cur.timestamp_ns);
        *cur = Arc::new(CachedFrame {
            seq,
            timestamp_ns: ts,
            payload: payload.into(),
        });
        (seq, ts)
    }

    /// Replaces the cached frame with one received from a remote publisher.
    pub(crate) fn store(&self, frame: CachedFrame) {
        *self.current.lock() = Arc::new(frame);
    }

    pub(crate) fn latest(&self) -> Arc<CachedFrame> {
        self.current.lock().clone()
    }

    pub(crate) fn read_into(&self, out: &mut [u8]) -> (u64, u64) {
        let frame = self.latest();
        out.copy_from_slice(&frame.payload);
        (frame.timestamp_ns, frame.seq)
    }

    pub(crate) fn seq(&self) -> u64 {
        self.current.lock().seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;

    #[test]
    fn commit_then_read() {
        let r = SeqRegion::heap(12);
        r.initialize(&[0u8; 12], 5);
        let mut out = [0u8; 12];
        assert_eq!(r.read_into(&mut out), Some((5, 0)));
        let payload: Vec<u8> = (1..=12).collect();
        assert_eq!(r.commit(&payload, 9), (1, 9));
        assert_eq!(r.commit(&payload, 3), (2, 9), "timestamps never regress");
        assert_eq!(r.read_into(&mut out), Some((9, 2)));
        assert_eq!(&out[..], &payload[..]);
    }

    #[test]
    fn concurrent_reads_are_never_torn() {
        let r = Arc::new(SeqRegion::heap(64));
        let stop = Arc::new(AtomicBool::new(false));
        let writer = {
            let (r, stop) = (r.clone(), stop.clone());
            std::thread::spawn(move || {
                let mut k = 0u8;
                while !stop.load(Ordering::Relaxed) {
                    k = k.wrapping_add(1);
                    r.commit(&[k; 64], 0);
                }
            })
        };
        let mut out = [0u8; 64];
        let mut ok = 0;
        for _ in 0..20_000 {
            if r.read_into(&mut out).is_some() {
                assert!(out.iter().all(|&b| b == out[0]), "torn snapshot {out:?}");
                ok += 1;
            }
        }
        stop.store(true, Ordering::Relaxed);
        writer.join().unwrap();
        assert!(ok > 0);
    }
}
