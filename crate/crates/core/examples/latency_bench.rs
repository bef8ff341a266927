//! Recv/Send latency on every backend plus end-to-end latency against a
//! threaded sim platform, printed as one table.
//!
//! `cargo run --release --example latency_bench -- [samples]`

use statebus::bench::{bench_e2e, bench_recv, bench_send, render_table, BenchRig, E2eOptions, LatencyReport, DEFAULT_WARMUP, BENCH_CMD_LABEL, BENCH_STATE_LABEL};
use statebus::platform::{make_platform, register_workflow_labels, PlatformKind, PlatformOptions, PlatformSpec};
use statebus::state::{BackendKind, StateSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let backends = [
        BackendKind::InProcess,
        BackendKind::SharedMemory {
            segment_name: format!("statebus-bench-{}", std::process::id()),
        },
        BackendKind::Socket {
            endpoint: "127.0.0.1:0".into(),
        },
    ];
    let mut reports = Vec::new();
    for backend in &backends {
        let rig = BenchRig::new(backend)?;
        let producer = rig.spawn_producer(500.0);
        let mut samples = bench_recv(&rig.reader, BENCH_STATE_LABEL, n, DEFAULT_WARMUP)?;
        samples.extend(bench_send(&rig.reader, BENCH_CMD_LABEL, n, DEFAULT_WARMUP)?);
        producer.stop()?;
        reports.push(LatencyReport::new(backend.short_name(), 500.0).with_samples(&samples));
    }

    let space = StateSpace::in_process();
    let spec = PlatformSpec::uniform("arm", &["j0", "j1", "j2"], 40.0, 2.0, 50.0, (-3.0, 3.0));
    register_workflow_labels(&space, spec.dof())?;
    let platform = make_platform(&PlatformOptions::new(PlatformKind::Sim), &spec, &space)?;
    let e2e = bench_e2e(&space, platform, &E2eOptions::default())?;
    let mut report = LatencyReport::new("inproc", spec.state_rate_hz).with_samples(&e2e.samples);
    report.platform = Some("sim".into());
    report.inferred_offset_ns = Some(e2e.offset_ns);
    reports.push(report);

    print!("{}", render_table(&reports));
    println!("inferred clock offset: {} ns", e2e.offset_ns);
    Ok(())
}
