//! The same writes and reads over the in-process, shared-memory and socket
//! backends, plus a second process-style view attaching to each.

use std::time::Duration;

use statebus::state::{DType, IndexMap, StateSpace};

fn exercise(name: &str, publisher: &StateSpace, open_view: impl Fn() -> StateSpace) -> Result<(), Box<dyn std::error::Error>> {
    publisher.register_zeros("imu", DType::F32, &[4])?;
    publisher.register_zeros("imu_reordered", DType::F32, &[4])?;
    let view = open_view();
    publisher.write("imu", &[1.0f32, 0.0, 0.0, 0.0])?;
    publisher.write("imu", &[0.7f32, 0.1, 0.2, 0.68])?;
    // wxyz -> xyzw as a gather
    publisher.apply_map(&IndexMap::gather("imu", "imu_reordered", vec![1, 2, 3, 0]))?;

    view.wait_for_seq("imu_reordered", 1, Duration::from_secs(2));
    let snap = view.read("imu")?;
    println!(
        "{name:>7}: imu={:?} seq={} reordered={:?}",
        snap.data.to_f64(),
        snap.seq,
        view.read_f64("imu_reordered")?
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inproc = StateSpace::in_process();
    exercise("inproc", &inproc, || inproc.clone())?;

    let seg = format!("statebus-example-{}", std::process::id());
    let shm = StateSpace::shared_memory(&seg)?;
    exercise("shm", &shm, || StateSpace::attach_shared_memory(&seg).expect("attach"))?;

    let hub = StateSpace::socket_hub("127.0.0.1:0")?;
    let addr = hub.local_endpoint().expect("bound").to_string();
    exercise("socket", &hub, || StateSpace::socket_connect(&addr).expect("connect"))?;
    Ok(())
}
