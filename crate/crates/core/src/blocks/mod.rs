//! Control blocks and the loop / zip / chain combinators.
//!
//! A [`ControlBlock`] is a step function over the state space that returns a
//! termination flag. Blocks are composed into a tree of [`Node`]s and driven
//! at a fixed rate by an [`Executor`]. All stepping happens on one thread;
//! blocks communicate only through the [`StateSpace`].

mod builtin;
mod executor;
mod graph;
mod predicate;
pub mod testing;

use thiserror::Error;

use crate::state::{ArrayMeta, Element, IndexMap, StateArray, StateError, StateSpace, Values};

pub use builtin::{Counter, FnBlock, IdentityControl, Sine};
pub use executor::{Executor, RunError, RunReport};
pub use graph::{step_block, Issue, Node, StepTrace};
pub use predicate::{Predicate, PredicateError};

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("block {block:?}: {source}")]
    State {
        block: String,
        #[source]
        source: StateError,
    },
    #[error("block {block:?} {} undeclared label {label:?}", if *.write { "wrote" } else { "read" })]
    UndeclaredAccess {
        block: String,
        label: String,
        write: bool,
    },
    #[error("block {block:?} panicked: {message}")]
    Panic { block: String, message: String },
    #[error("block {block:?} failed: {source}")]
    Failed {
        block: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("invalid rate {0} Hz")]
    RateInvalid(f64),
    #[error("graph failed validation: {}", issues_text(.0))]
    Invalid(Vec<Issue>),
}

fn issues_text(issues: &[Issue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl BlockError {
    pub fn failed(block: &str, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        BlockError::Failed {
            block: block.to_string(),
            source: source.into(),
        }
    }

    /// Name of the block that raised the error, when there is one.
    pub fn block(&self) -> Option<&str> {
        match self {
            BlockError::State { block, .. }
            | BlockError::UndeclaredAccess { block, .. }
            | BlockError::Panic { block, .. }
            | BlockError::Failed { block, .. } => Some(block),
            _ => None,
        }
    }
}

/// A steppable unit of control logic.
///
/// `step` must only touch the labels listed in `reads` and `writes`. Unless
/// the block reports itself stateful, stepping it twice from identical values
/// of `reads` must produce identical writes and done flags.
pub trait ControlBlock: Send {
    fn name(&self) -> &str;
    fn reads(&self) -> &[String];
    fn writes(&self) -> &[String];

    fn is_stateful(&self) -> bool {
        false
    }

    /// Advances the block by one tick; `Ok(true)` means its sequence ended.
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError>;

    /// Rewinds the block to the start of its call sequence.
    fn restart(&mut self) {}

    /// Releases resources at the end of a run.
    fn close(&mut self, _io: &StateIo<'_>) -> Result<(), BlockError> {
        Ok(())
    }
}

/// The view of the state space handed to a block while it steps.
///
/// In checked mode every access is compared with the block's declared labels
/// and an undeclared one fails with [`BlockError::UndeclaredAccess`].
pub struct StateIo<'a> {
    space: &'a StateSpace,
    block: &'a str,
    reads: &'a [String],
    writes: &'a [String],
    checked: bool,
    tick: u64,
}

impl<'a> StateIo<'a> {
    pub fn new(
        space: &'a StateSpace,
        block: &'a str,
        reads: &'a [String],
        writes: &'a [String],
        checked: bool,
        tick: u64,
    ) -> Self {
        StateIo {
            space,
            block,
            reads,
            writes,
            checked,
            tick,
        }
    }

    /// Tick index of the current executor cycle.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn block_name(&self) -> &str {
        self.block
    }

    pub fn now_ns(&self) -> u64 {
        self.space.now_ns()
    }

    fn err(&self, source: StateError) -> BlockError {
        BlockError::State {
            block: self.block.to_string(),
            source,
        }
    }

    fn check(&self, label: &str, write: bool) -> Result<(), BlockError> {
        let declared = if write { self.writes } else { self.reads };
        if self.checked && !declared.iter().any(|l| l == label) {
            return Err(BlockError::UndeclaredAccess {
                block: self.block.to_string(),
                label: label.to_string(),
                write,
            });
        }
        Ok(())
    }

    pub fn meta(&self, label: &str) -> Result<ArrayMeta, BlockError> {
        self.space.meta(label).map_err(|e| self.err(e))
    }

    pub fn seq(&self, label: &str) -> Result<u64, BlockError> {
        self.check(label, false)?;
        self.space.seq(label).map_err(|e| self.err(e))
    }

    pub fn read(&self, label: &str) -> Result<StateArray, BlockError> {
        self.check(label, false)?;
        self.space.read(label).map_err(|e| self.err(e))
    }

    pub fn read_f64(&self, label: &str) -> Result<Vec<f64>, BlockError> {
        self.check(label, false)?;
        self.space.read_f64(label).map_err(|e| self.err(e))
    }

    pub fn read_as<T: Element>(&self, label: &str) -> Result<Vec<T>, BlockError> {
        self.check(label, false)?;
        self.space.read_as(label).map_err(|e| self.err(e))
    }

    /// Raw snapshot copy; returns `(timestamp_ns, seq)`.
    pub fn read_into(&self, label: &str, out: &mut [u8]) -> Result<(u64, u64), BlockError> {
        self.check(label, false)?;
        self.space.read_into(label, out).map_err(|e| self.err(e))
    }

    pub fn write<T: Element>(&self, label: &str, values: &[T]) -> Result<u64, BlockError> {
        self.check(label, true)?;
        self.space.write(label, values).map_err(|e| self.err(e))
    }

    pub fn write_f64(&self, label: &str, values: &[f64]) -> Result<u64, BlockError> {
        self.check(label, true)?;
        self.space.write_f64(label, values).map_err(|e| self.err(e))
    }

    pub fn write_f64_at(&self, label: &str, values: &[f64], timestamp_ns: u64) -> Result<u64, BlockError> {
        self.check(label, true)?;
        self.space
            .write_f64_at(label, values, timestamp_ns)
            .map_err(|e| self.err(e))
    }

    pub fn write_values(&self, label: &str, values: &Values) -> Result<u64, BlockError> {
        self.check(label, true)?;
        self.space.write_values(label, values).map_err(|e| self.err(e))
    }

    pub fn apply_map(&self, map: &IndexMap) -> Result<u64, BlockError> {
        self.check(&map.source_label, false)?;
        self.check(&map.target_label, true)?;
        self.space.apply_map(map).map_err(|e| self.err(e))
    }
}
