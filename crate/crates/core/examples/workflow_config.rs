//! Parses the sample locomotion workflow, prints its canonical form, and runs
//! it against both platforms by changing one config field.

use std::path::Path;

use statebus::blocks::Executor;
use statebus::config::{build_workflow, open_space, BlockRegistry, WorkflowConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut cfg = WorkflowConfig::load(&dir.join("locomotion_sim.wf"))?;
    println!("graph depth {}\n{}", cfg.graph.depth(), cfg.to_text());

    for kind in ["sim", "loopback"] {
        cfg.set("platform.kind", kind)?;
        let space = open_space(&cfg.run, None)?;
        let mut w = build_workflow(&cfg, &BlockRegistry::with_builtins(), space, &dir)?;
        let report = Executor::new(cfg.run.rate_hz).max_ticks(120).checked(true).run(&mut w.root, &w.space)?;
        println!("{kind:>8}: {report}");
        println!("          stand_ticks = {:?}", w.space.read_f64("stand_ticks")?);
    }
    Ok(())
}
