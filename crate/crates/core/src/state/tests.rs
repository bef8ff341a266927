use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;

use super::*;

static SEGMENT_COUNTER: AtomicU64 = AtomicU64::new(0);

pub(crate) fn unique_segment(tag: &str) -> String {
    format!(
        "statebus-test-{tag}-{}-{}",
        std::process::id(),
        SEGMENT_COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

#[test]
fn register_zero_fills() {
    let s = StateSpace::in_process();
    s.register_zeros("q", DType::F32, &[12]).unwrap();
    let a = s.read("q").unwrap();
    assert_eq!(a.data, Values::F32(vec![0.0; 12]));
    assert_eq!(a.seq, 0);
    assert_eq!(a.shape, vec![12]);
}

#[test]
fn register_twice_is_duplicate() {
    let s = StateSpace::in_process();
    s.register_zeros("q", DType::F32, &[12]).unwrap();
    assert!(matches!(
        s.register_zeros("q", DType::F32, &[12]),
        Err(StateError::DuplicateLabel(l)) if l == "q"
    ));
}

#[test]
fn register_with_init_is_verbatim() {
    let s = StateSpace::in_process();
    let quat = Values::F32(vec![1.0, 0.0, 0.0, 0.0]);
    s.register("quat", DType::F32, &[4], Some(&quat)).unwrap();
    assert_eq!(s.read("quat").unwrap().data, quat);
}

#[test]
fn register_rejects_bad_shapes_and_init() {
    let s = StateSpace::in_process();
    assert!(matches!(
        s.register_zeros("a", DType::F64, &[]),
        Err(StateError::ShapeInvalid { .. })
    ));
    assert!(matches!(
        s.register_zeros("a", DType::F64, &[3, 0]),
        Err(StateError::ShapeInvalid { .. })
    ));
    let bad = Values::F64(vec![1.0]);
    assert!(matches!(
        s.register("a", DType::F64, &[2], Some(&bad)),
        Err(StateError::LengthMismatch { .. })
    ));
    assert!(matches!(
        s.register("a", DType::F32, &[1], Some(&bad)),
        Err(StateError::DTypeMismatch { .. })
    ));
    assert!(!s.contains("a"));
}

#[test]
fn write_read_and_seq() {
    let s = StateSpace::in_process();
    s.register_zeros("q", DType::F32, &[12]).unwrap();
    assert_eq!(s.write("q", &[0.1f32; 12]).unwrap(), 1);
    let a = s.read("q").unwrap();
    assert_eq!(a.data, Values::F32(vec![0.1; 12]));
    assert_eq!(a.seq, 1);
    assert_eq!(s.write("q", &[0.2f32; 12]).unwrap(), 2);
    let b = s.read("q").unwrap();
    assert_eq!(b.seq, 2);
    assert!(b.timestamp_ns >= a.timestamp_ns);
}

#[test]
fn write_errors() {
    let s = StateSpace::in_process();
    s.register_zeros("q", DType::F32, &[12]).unwrap();
    assert!(matches!(
        s.write("q", &[0.0f32; 11]),
        Err(StateError::LengthMismatch { expected: 12, got: 11, .. })
    ));
    assert!(matches!(
        s.write("q", &[0.0f64; 12]),
        Err(StateError::DTypeMismatch { .. })
    ));
    assert!(matches!(s.read("nope"), Err(StateError::UnknownLabel(l)) if l == "nope"));
    assert!(matches!(s.write("nope", &[1.0f32]), Err(StateError::UnknownLabel(_))));
    assert_eq!(s.seq("q").unwrap(), 0, "failed writes do not commit");
}

#[test]
fn f64_conversion_and_stamped_writes() {
    let s = StateSpace::in_process();
    s.register_zeros("c", DType::I32, &[2]).unwrap();
    s.write_f64("c", &[3.0, -2.0]).unwrap();
    assert_eq!(s.read_as::<i32>("c").unwrap(), vec![3, -2]);
    s.write_f64_at("c", &[1.0, 1.0], 1_000).unwrap();
    let a = s.read("c").unwrap();
    // the stamp is the max of the supplied time and the previous stamp
    assert!(a.timestamp_ns >= 1_000);
    s.write_f64_at("c", &[1.0, 1.0], 5).unwrap();
    assert_eq!(s.read("c").unwrap().timestamp_ns, a.timestamp_ns);
}

#[test]
fn apply_map_permutes() {
    let s = StateSpace::in_process();
    s.register("src", DType::F64, &[3], Some(&Values::F64(vec![10.0, 20.0, 30.0])))
        .unwrap();
    s.register_zeros("dst", DType::F64, &[3]).unwrap();
    let seq = s.apply_map(&IndexMap::gather("src", "dst", vec![2, 0, 1])).unwrap();
    assert_eq!(seq, 1);
    assert_eq!(s.read_f64("dst").unwrap(), vec![30.0, 10.0, 20.0]);
}

#[test]
fn apply_map_errors() {
    let s = StateSpace::in_process();
    s.register_zeros("src", DType::F64, &[3]).unwrap();
    s.register_zeros("dst", DType::F64, &[2]).unwrap();
    assert!(matches!(
        s.apply_map(&IndexMap::gather("src", "dst", vec![0, 3])),
        Err(StateError::GatherOutOfBounds { index: 3, source_len: 3 })
    ));
    assert!(matches!(
        s.apply_map(&IndexMap::gather("src", "dst", vec![0, 1, 2])),
        Err(StateError::LengthMismatch { .. })
    ));
    assert!(matches!(
        s.apply_map(&IndexMap::gather("nope", "dst", vec![0, 1])),
        Err(StateError::UnknownLabel(_))
    ));
}

#[test]
fn identity_map_is_bit_identical() {
    let s = StateSpace::in_process();
    let raw = vec![-0.0, f64::NAN, 1e-310, -7.25, f64::INFINITY, 0.1 + 0.2];
    s.register("src", DType::F64, &[6], Some(&Values::F64(raw.clone())))
        .unwrap();
    s.register_zeros("dst", DType::F64, &[6]).unwrap();
    s.apply_map(&IndexMap::identity("src", "dst", 6)).unwrap();
    let out = s.read("dst").unwrap().data;
    assert!(out.bit_eq(&Values::F64(raw)));

    let f = vec![-0.0f32, 3.5, f32::MIN_POSITIVE];
    s.register("fs", DType::F32, &[3], Some(&Values::F32(f.clone())))
        .unwrap();
    s.register_zeros("fd", DType::F32, &[3]).unwrap();
    s.apply_map(&IndexMap::identity("fs", "fd", 3)).unwrap();
    assert!(s.read("fd").unwrap().data.bit_eq(&Values::F32(f)));
}

#[test]
fn affine_map_converts_dtypes() {
    let s = StateSpace::in_process();
    s.register("deg", DType::F32, &[2], Some(&Values::F32(vec![90.0, 180.0])))
        .unwrap();
    s.register_zeros("rad", DType::F64, &[2]).unwrap();
    let k = std::f64::consts::PI / 180.0;
    s.apply_map(&IndexMap::identity("deg", "rad", 2).with_affine(vec![k, k], vec![0.0, 0.0]))
        .unwrap();
    let rad = s.read_f64("rad").unwrap();
    assert!((rad[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    assert!((rad[1] - std::f64::consts::PI).abs() < 1e-12);
}

/// Writer at ~500 Hz, reader at ~50 Hz for one second. The oracle keeps every
/// committed payload by seq; each snapshot must equal the payload committed
/// under its seq, and seqs must never go backwards.
fn concurrent_membership(writer: StateSpace, reader: StateSpace) {
    let committed = Arc::new(parking_lot::Mutex::new(std::collections::HashMap::new()));
    committed.lock().insert(0u64, vec![0.0f64; 8]);
    let stop = Arc::new(AtomicBool::new(false));
    let w = {
        let (committed, stop) = (committed.clone(), stop.clone());
        thread::spawn(move || {
            let mut k = 0u64;
            while !stop.load(Ordering::Relaxed) {
                k += 1;
                let payload: Vec<f64> = (0..8).map(|i| (k * 8 + i) as f64).collect();
                let mut log = committed.lock();
                let seq = writer.write("v", &payload).unwrap();
                log.insert(seq, payload);
                drop(log);
                thread::sleep(Duration::from_millis(2));
            }
        })
    };
    let start = Instant::now();
    let mut last_seq = 0;
    let mut reads = 0;
    while start.elapsed() < Duration::from_secs(1) {
        let snap = reader.read("v").unwrap();
        assert!(snap.seq >= last_seq);
        last_seq = snap.seq;
        let values = snap.data.to_f64();
        let log = committed.lock();
        assert_eq!(log.get(&snap.seq), Some(&values), "snapshot not a committed write");
        drop(log);
        reads += 1;
        thread::sleep(Duration::from_millis(20));
    }
    stop.store(true, Ordering::Relaxed);
    w.join().unwrap();
    assert!(reads >= 30);
    assert!(last_seq > 0);
}

#[test]
fn concurrent_reads_match_committed_writes_inproc() {
    let s = StateSpace::in_process();
    s.register_zeros("v", DType::F64, &[8]).unwrap();
    concurrent_membership(s.clone(), s);
}

#[test]
fn concurrent_reads_match_committed_writes_shm() {
    let name = unique_segment("membership");
    let w = StateSpace::shared_memory(&name).unwrap();
    w.register_zeros("v", DType::F64, &[8]).unwrap();
    let r = StateSpace::attach_shared_memory(&name).unwrap();
    concurrent_membership(w, r);
}

#[test]
fn shm_attach_sees_labels_and_values() {
    let name = unique_segment("attach");
    let w = StateSpace::shared_memory(&name).unwrap();
    w.register("q", DType::F32, &[3], Some(&Values::F32(vec![1.0, 2.0, 3.0])))
        .unwrap();
    let r = StateSpace::attach_shared_memory(&name).unwrap();
    assert_eq!(r.read_as::<f32>("q").unwrap(), vec![1.0, 2.0, 3.0]);
    assert_eq!(r.meta("q").unwrap().shape, vec![3]);
    w.register_zeros("late", DType::U8, &[2, 2]).unwrap();
    assert!(!r.contains("late"));
    assert_eq!(r.sync_segment().unwrap(), 1);
    w.write("late", &[1u8, 2, 3, 4]).unwrap();
    let late = r.read("late").unwrap();
    assert_eq!(late.data, Values::U8(vec![1, 2, 3, 4]));
    assert_eq!(late.seq, 1);
    // writes from the attached side are visible to the creator too
    r.write("q", &[9.0f32, 9.0, 9.0]).unwrap();
    assert_eq!(w.read_as::<f32>("q").unwrap(), vec![9.0; 3]);
}

#[test]
fn shm_segment_removed_with_owner() {
    let name = unique_segment("unlink");
    let path = segment_path(&name);
    {
        let _w = StateSpace::shared_memory(&name).unwrap();
        assert!(path.exists());
    }
    assert!(!path.exists());
    assert!(StateSpace::attach_shared_memory(&name).is_err());
    assert!(StateSpace::shared_memory("bad/name").is_err());
}

#[test]
fn shm_high_rate_snapshots_are_never_mixed() {
    let name = unique_segment("torn");
    let w = StateSpace::shared_memory(&name).unwrap();
    w.register_zeros("k", DType::F64, &[64]).unwrap();
    let readers: Vec<StateSpace> = (0..3)
        .map(|_| StateSpace::attach_shared_memory(&name).unwrap())
        .collect();
    let stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let (w, stop) = (w.clone(), stop.clone());
        thread::spawn(move || {
            let mut k = 0.0;
            while !stop.load(Ordering::Relaxed) {
                k += 1.0;
                w.write("k", &[k; 64]).unwrap();
            }
        })
    };
    let handles: Vec<_> = readers
        .into_iter()
        .map(|r| {
            thread::spawn(move || {
                let mut buf = vec![0u8; 64 * 8];
                for _ in 0..20_000 {
                    match r.read_into("k", &mut buf) {
                        Ok(_) => {
                            let first = &buf[..8];
                            assert!(buf.chunks(8).all(|c| c == first), "mixed snapshot");
                        }
                        Err(StateError::TornRead(_)) => {}
                        Err(e) => panic!("{e}"),
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    stop.store(true, Ordering::Relaxed);
    writer.join().unwrap();
}

#[test]
fn socket_peer_receives_latest_values() {
    let hub = StateSpace::socket_hub("127.0.0.1:0").unwrap();
    hub.register_zeros("q", DType::F32, &[4]).unwrap();
    hub.write("q", &[1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let addr = hub.local_endpoint().unwrap().to_string();
    let peer = StateSpace::socket_connect(&addr).unwrap();
    assert!(peer.wait_for_seq("q", 1, Duration::from_secs(2)));
    assert_eq!(peer.read_as::<f32>("q").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    for k in 0..50 {
        hub.write("q", &[k as f32; 4]).unwrap();
    }
    assert!(peer.wait_for_seq("q", 51, Duration::from_secs(2)));
    let last = peer.read("q").unwrap();
    assert_eq!(last.seq, 51);
    assert_eq!(last.data, Values::F32(vec![49.0; 4]));
    // labels registered after the connection are announced too
    hub.register_zeros("late", DType::I64, &[1]).unwrap();
    hub.write("late", &[-5i64]).unwrap();
    assert!(peer.wait_for_seq("late", 1, Duration::from_secs(2)));
    assert_eq!(peer.read_as::<i64>("late").unwrap(), vec![-5]);
}

#[test]
fn socket_peer_publishes_back_to_hub() {
    let hub = StateSpace::socket_hub("127.0.0.1:0").unwrap();
    let addr = hub.local_endpoint().unwrap().to_string();
    let peer = StateSpace::socket_connect(&addr).unwrap();
    peer.register_zeros("cmd", DType::F64, &[2]).unwrap();
    peer.write("cmd", &[0.5, -0.5]).unwrap();
    assert!(hub.wait_for_seq("cmd", 1, Duration::from_secs(2)));
    assert_eq!(hub.read_f64("cmd").unwrap(), vec![0.5, -0.5]);
}

#[test]
fn socket_schema_mismatch_is_ignored() {
    let hub = StateSpace::socket_hub("127.0.0.1:0").unwrap();
    hub.register_zeros("q", DType::F32, &[4]).unwrap();
    hub.write("q", &[1.0f32; 4]).unwrap();
    let addr = hub.local_endpoint().unwrap().to_string();
    // A peer that registered "q" differently keeps its own values.
    let peer = StateSpace::socket_connect(&addr).unwrap();
    assert!(peer.wait_for_seq("q", 1, Duration::from_secs(2)));
    let _ = peer;
    let other = StateSpace::socket_hub("127.0.0.1:0").unwrap();
    other.register_zeros("q", DType::F64, &[4]).unwrap();
    other.write("q", &[1.0f64; 4]).unwrap();
    let addr2 = other.local_endpoint().unwrap().to_string();
    let p2 = StateSpace::socket_connect(&addr2).unwrap();
    p2.register_zeros("x", DType::F32, &[1]).unwrap();
    assert!(p2.wait_for_seq("q", 1, Duration::from_secs(2)));
    assert_eq!(p2.meta("q").unwrap().dtype, DType::F64);
}

#[test]
fn socket_peer_reports_backend_down() {
    let hub = StateSpace::socket_hub("127.0.0.1:0").unwrap();
    let addr = hub.local_endpoint().unwrap().to_string();
    let peer = StateSpace::socket_connect(&addr).unwrap();
    peer.register_zeros("cmd", DType::F64, &[1]).unwrap();
    peer.write("cmd", &[1.0]).unwrap();
    drop(hub);
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        match peer.write("cmd", &[2.0]) {
            Err(StateError::BackendDown(_)) => break,
            Ok(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            other => panic!("expected BackendDown, got {other:?}"),
        }
    }
}

#[test]
fn socket_connect_to_nothing_fails() {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    drop(l);
    assert!(matches!(
        StateSpace::socket_connect(&addr),
        Err(StateError::BackendDown(_))
    ));
}

#[derive(Debug, Clone)]
enum Op {
    Write(Vec<f64>),
    Read,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            prop::collection::vec(-1e6f64..1e6, 5).prop_map(Op::Write),
            Just(Op::Read)
        ],
        1..40,
    )
}

fn run_script(writer: &StateSpace, reader: &StateSpace, script: &[Op]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut expected_seq = 0;
    for op in script {
        match op {
            Op::Write(v) => {
                expected_seq = writer.write("x", v).unwrap();
            }
            Op::Read => {
                assert!(reader.wait_for_seq("x", expected_seq, Duration::from_secs(2)));
                out.push(reader.read_f64("x").unwrap());
            }
        }
    }
    assert!(reader.wait_for_seq("x", expected_seq, Duration::from_secs(2)));
    out.push(reader.read_f64("x").unwrap());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backends_agree_on_scripts(script in ops()) {
        let inproc = StateSpace::in_process();
        inproc.register_zeros("x", DType::F64, &[5]).unwrap();
        let a = run_script(&inproc, &inproc, &script);

        let name = unique_segment("prop");
        let shm = StateSpace::shared_memory(&name).unwrap();
        shm.register_zeros("x", DType::F64, &[5]).unwrap();
        let shm_reader = StateSpace::attach_shared_memory(&name).unwrap();
        let b = run_script(&shm, &shm_reader, &script);

        let hub = StateSpace::socket_hub("127.0.0.1:0").unwrap();
        hub.register_zeros("x", DType::F64, &[5]).unwrap();
        let addr = hub.local_endpoint().unwrap().to_string();
        let peer = StateSpace::socket_connect(&addr).unwrap();
        prop_assert!(peer.wait_for_seq("x", 0, Duration::from_secs(2)));
        let c = run_script(&hub, &peer, &script);

        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        // read-after-write: the final read is the final write
        let last_write = script.iter().rev().find_map(|op| match op {
            Op::Write(v) => Some(v.clone()),
            Op::Read => None,
        }).unwrap_or_else(|| vec![0.0; 5]);
        prop_assert_eq!(a.last().unwrap(), &last_write);
    }

    #[test]
    fn permutation_round_trip(values in prop::collection::vec(-1e9f64..1e9, 1..24), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = values.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let s = StateSpace::in_process();
        s.register("a", DType::F64, &[n], Some(&Values::F64(values.clone()))).unwrap();
        s.register_zeros("b", DType::F64, &[n]).unwrap();
        let fwd = IndexMap::gather("a", "b", perm);
        s.apply_map(&fwd).unwrap();
        s.write("a", &vec![0.0; n]).unwrap();
        s.apply_map(&fwd.inverse().unwrap()).unwrap();
        prop_assert!(s.read("a").unwrap().data.bit_eq(&Values::F64(values)));
    }
}
