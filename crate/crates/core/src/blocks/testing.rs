//! Helpers for exercising combinators without touching real state.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{BlockError, ControlBlock, StateIo};

/// A block that reports done on its `done_at`-th step (counting from 1) and
/// then starts over. `None` never finishes. The shared counter records total
/// steps across restarts and `log` the within-run index of every step.
pub struct ScriptedBlock {
    name: String,
    done_at: Option<usize>,
    step_in_run: usize,
    pub total_steps: Arc<AtomicUsize>,
    pub log: Arc<Mutex<Vec<usize>>>,
}

impl ScriptedBlock {
    pub fn new(name: &str, done_at: Option<usize>) -> Self {
        ScriptedBlock {
            name: name.to_string(),
            done_at,
            step_in_run: 0,
            total_steps: Arc::new(AtomicUsize::new(0)),
            log: Arc::default(),
        }
    }

    pub fn done_at(name: &str, k: usize) -> Self {
        Self::new(name, Some(k))
    }

    pub fn endless(name: &str) -> Self {
        Self::new(name, None)
    }
}

impl ControlBlock for ScriptedBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &[]
    }
    fn writes(&self) -> &[String] {
        &[]
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, _io: &StateIo<'_>) -> Result<bool, BlockError> {
        self.total_steps.fetch_add(1, Ordering::Relaxed);
        self.step_in_run += 1;
        self.log.lock().push(self.step_in_run);
        let done = self.done_at.is_some_and(|k| self.step_in_run >= k);
        if done {
            self.step_in_run = 0;
        }
        Ok(done)
    }
    fn restart(&mut self) {
        self.step_in_run = 0;
    }
}
