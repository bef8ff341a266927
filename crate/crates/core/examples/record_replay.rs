//! Records a sine-driven sim run, replays the command stream into a fresh
//! sim, and compares the two joint trajectories.

use statebus::blocks::{Executor, Node, Sine};
use statebus::platform::{make_platform, register_workflow_labels, PlatformKind, PlatformOptions, PlatformSpec};
use statebus::replay::{analyze, Recorder, Replayer, Trajectory, UnfoldOptions};
use statebus::state::StateSpace;

const COMMANDS: [&str; 5] = ["q_des", "dq_des", "tau_ff", "kp", "kd"];

fn sim(space: &StateSpace) -> Result<statebus::platform::Platform, Box<dyn std::error::Error>> {
    let spec = PlatformSpec::uniform("arm", &["a", "b"], 25.0, 1.0, 10.0, (-2.0, 2.0));
    register_workflow_labels(space, spec.dof())?;
    Ok(make_platform(&PlatformOptions::new(PlatformKind::Sim).lockstep(10), &spec, space)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("statebus-rr-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (original, replayed) = (dir.join("original.uctrj"), dir.join("replayed.uctrj"));
    let mut labels: Vec<String> = COMMANDS.iter().map(|s| s.to_string()).collect();
    labels.push("q".into());

    let space = StateSpace::in_process();
    let p = sim(&space)?;
    let mut graph = Node::zip(vec![
        Node::leaf(p.recv),
        Node::leaf(Sine::new("wave", "q_des", 0.8, 0.5, 0.02)),
        Node::leaf(p.send),
        Node::leaf(Recorder::new(&space, &labels, &original)?),
    ]);
    Executor::new(1000.0).max_ticks(200).run(&mut graph, &space)?;

    let space = StateSpace::in_process();
    let p = sim(&space)?;
    let commands: Vec<String> = COMMANDS.iter().map(|s| s.to_string()).collect();
    let mut graph = Node::zip(vec![
        Node::leaf(p.recv),
        Node::leaf(Replayer::from_trajectory(Trajectory::load(&original)?, &space, Some(&commands))?),
        Node::leaf(p.send),
        Node::leaf(Recorder::new(&space, &labels, &replayed)?),
    ]);
    Executor::new(1000.0).max_ticks(1000).run(&mut graph, &space)?;

    let report = analyze(&Trajectory::load(&original)?, &Trajectory::load(&replayed)?, Some(5), UnfoldOptions::default())?;
    print!("{}", report.to_text());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
