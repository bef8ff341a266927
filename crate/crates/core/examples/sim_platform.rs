//! A threaded sim platform at 500 Hz driven by 50 Hz identity control, the
//! same graph on the loopback platform, and a deterministic lockstep run.

use statebus::blocks::{Executor, IdentityControl, Node};
use statebus::platform::{make_platform, register_workflow_labels, PlatformKind, PlatformOptions, PlatformSpec};
use statebus::state::StateSpace;

fn run(opts: PlatformOptions, ticks: u64) -> Result<(), Box<dyn std::error::Error>> {
    let spec = PlatformSpec::uniform("leg", &["hip", "knee", "ankle"], 40.0, 2.0, 30.0, (-2.0, 2.0));
    let space = StateSpace::in_process();
    register_workflow_labels(&space, spec.dof())?;
    space.write_f64("q", &[0.1, -0.4, 0.3])?;
    let p = make_platform(&opts, &spec, &space)?;
    let mut graph = Node::zip(vec![
        Node::leaf(p.recv),
        Node::leaf(IdentityControl::new("hold", "q", "q_des")),
        Node::leaf(p.send),
    ]);
    let report = Executor::new(50.0).max_ticks(ticks).checked(true).run(&mut graph, &space)?;
    println!("{:?}: {report}", opts.kind);
    println!("  q = {:?}", space.read_f64("q")?);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run(PlatformOptions::new(PlatformKind::Sim), 50)?;
    run(PlatformOptions::new(PlatformKind::Loopback), 50)?;
    run(PlatformOptions::new(PlatformKind::Sim).lockstep(10), 50)?;
    Ok(())
}
