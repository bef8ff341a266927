//! loop / zip / chain over scripted blocks, with the step trace printed.

use statebus::blocks::testing::ScriptedBlock;
use statebus::blocks::{Counter, Executor, Node, Predicate};
use statebus::state::{DType, StateSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let space = StateSpace::in_process();
    space.register_zeros("steps", DType::I64, &[1])?;

    // chain(zip(a, b), loop(counter until steps >= 3))
    let mut graph = Node::chain(vec![
        Node::zip(vec![
            Node::leaf(ScriptedBlock::done_at("a", 2)),
            Node::leaf(ScriptedBlock::done_at("b", 4)),
        ]),
        Node::loop_until(Node::leaf(Counter::new("count", "steps", None)), Predicate::parse("steps >= 3")?),
    ]);
    println!("depth {}", graph.depth());

    let report = Executor::new(1000.0).max_ticks(100).trace(true).run(&mut graph, &space)?;
    println!("{report}");
    print!("{}", report.trace.expect("tracing on").to_text());
    Ok(())
}
