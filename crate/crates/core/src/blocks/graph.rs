use std::collections::{HashMap, HashSet};
use std::fmt;
use std::panic::{self, AssertUnwindSafe};

use super::{BlockError, ControlBlock, Predicate, StateIo};
use crate::state::StateSpace;

/// Execution tree node.
pub enum Node {
    Leaf(Box<dyn ControlBlock>),
    /// Steps `child` every tick, restarting it whenever it finishes, until
    /// `until` holds after a step.
    Loop { child: Box<Node>, until: Predicate },
    /// Steps every child once per tick in declaration order; done as soon as
    /// any child is done.
    Zip(Vec<Node>),
    /// Steps the current child once per tick and moves to the next one on the
    /// tick after it finishes.
    Chain { children: Vec<Node>, cursor: usize },
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Leaf(b) => write!(f, "block({})", b.name()),
            Node::Loop { child, until } => write!(f, "loop({child:?} until {:?})", until.expr()),
            Node::Zip(cs) => f.debug_tuple("zip").field(cs).finish(),
            Node::Chain { children, .. } => f.debug_tuple("chain").field(children).finish(),
        }
    }
}

/// Ordered `(tick, block_name)` record of every leaf step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepTrace {
    pub entries: Vec<(u64, String)>,
}

impl StepTrace {
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(_, n)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Newline-delimited `tick,block_name` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(t, n)| format!("{t},{n}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Option<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (t, n) = l.split_once(',')?;
                Some((t.trim().parse().ok()?, n.trim().to_string()))
            })
            .collect::<Option<Vec<_>>>()?;
        Some(StepTrace { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    UnknownLabel { block: String, label: String },
    EmptyComposite { kind: &'static str },
    DuplicateWriter { label: String, blocks: Vec<String> },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::UnknownLabel { block, label } => {
                write!(f, "{block} references unregistered label {label:?}")
            }
            Issue::EmptyComposite { kind } => write!(f, "{kind} has no children"),
            Issue::DuplicateWriter { label, blocks } => {
                write!(f, "{label:?} written by several zip children: {}", blocks.join(", "))
            }
        }
    }
}

pub(crate) struct StepCtx<'a> {
    pub space: &'a StateSpace,
    pub tick: u64,
    pub checked: bool,
    pub trace: Option<&'a mut StepTrace>,
}

impl Node {
    pub fn leaf(block: impl ControlBlock + 'static) -> Self {
        Node::Leaf(Box::new(block))
    }

    pub fn loop_until(child: Node, until: Predicate) -> Self {
        Node::Loop {
            child: Box::new(child),
            until,
        }
    }

    pub fn zip(children: Vec<Node>) -> Self {
        Node::Zip(children)
    }

    pub fn chain(children: Vec<Node>) -> Self {
        Node::Chain {
            children,
            cursor: 0,
        }
    }

    /// Nesting depth counting composites only; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Loop { child, .. } => 1 + child.depth(),
            Node::Zip(cs) | Node::Chain { children: cs, .. } => {
                1 + cs.iter().map(Node::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn for_each_block(&self, f: &mut dyn FnMut(&dyn ControlBlock)) {
        match self {
            Node::Leaf(b) => f(b.as_ref()),
            Node::Loop { child, .. } => child.for_each_block(f),
            Node::Zip(cs) | Node::Chain { children: cs, .. } => {
                cs.iter().for_each(|c| c.for_each_block(f))
            }
        }
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_block(&mut |b| out.push(b.name().to_string()));
        out
    }

    pub(crate) fn step(&mut self, ctx: &mut StepCtx<'_>) -> Result<bool, BlockError> {
        match self {
            Node::Leaf(block) => step_leaf(block.as_mut(), ctx),
            Node::Loop { child, until } => {
                if child.step(ctx)? {
                    child.restart();
                }
                until.eval(ctx.space).map_err(|source| BlockError::State {
                    block: format!("until {:?}", until.expr()),
                    source,
                })
            }
            Node::Zip(children) => {
                let mut done = children.is_empty();
                for c in children.iter_mut() {
                    done |= c.step(ctx)?;
                }
                Ok(done)
            }
            Node::Chain { children, cursor } => {
                let Some(current) = children.get_mut(*cursor) else {
                    return Ok(true);
                };
                if current.step(ctx)? {
                    *cursor += 1;
                }
                Ok(*cursor >= children.len())
            }
        }
    }

    /// Rewinds the subtree to the beginning of its call sequence.
    pub fn restart(&mut self) {
        match self {
            Node::Leaf(b) => b.restart(),
            Node::Loop { child, .. } => child.restart(),
            Node::Zip(cs) => cs.iter_mut().for_each(Node::restart),
            Node::Chain { children, cursor } => {
                *cursor = 0;
                children.iter_mut().for_each(Node::restart);
            }
        }
    }

    /// Closes every block, returning the first error after trying them all.
    pub fn close(&mut self, space: &StateSpace, checked: bool) -> Result<(), BlockError> {
        let mut first = None;
        self.close_into(space, checked, &mut first);
        first.map_or(Ok(()), Err)
    }

    fn close_into(&mut self, space: &StateSpace, checked: bool, first: &mut Option<BlockError>) {
        match self {
            Node::Leaf(b) => {
                if let Err(e) = with_io(b.as_mut(), space, checked, 0, |b, io| b.close(io)) {
                    first.get_or_insert(e);
                }
            }
            Node::Loop { child, .. } => child.close_into(space, checked, first),
            Node::Zip(cs) | Node::Chain { children: cs, .. } => {
                cs.iter_mut().for_each(|c| c.close_into(space, checked, first))
            }
        }
    }

    /// Static checks against `space`; an empty list means the graph can run.
    pub fn validate(&self, space: &StateSpace) -> Vec<Issue> {
        let mut issues = Vec::new();
        self.validate_into(space, &mut issues);
        issues
    }

    fn validate_into(&self, space: &StateSpace, issues: &mut Vec<Issue>) {
        let mut unknown = |block: &str, label: &String| {
            if !space.contains(label) {
                let issue = Issue::UnknownLabel {
                    block: block.to_string(),
                    label: label.clone(),
                };
                if !issues.contains(&issue) {
                    issues.push(issue);
                }
            }
        };
        match self {
            Node::Leaf(b) => {
                for l in b.reads().iter().chain(b.writes()) {
                    unknown(b.name(), l);
                }
            }
            Node::Loop { child, until } => {
                let name = format!("until {:?}", until.expr());
                for l in until.reads() {
                    unknown(&name, l);
                }
                child.validate_into(space, issues);
            }
            Node::Zip(cs) | Node::Chain { children: cs, .. } => {
                let kind = if matches!(self, Node::Zip(_)) { "zip" } else { "chain" };
                if cs.is_empty() {
                    issues.push(Issue::EmptyComposite { kind });
                }
                for c in cs {
                    c.validate_into(space, issues);
                }
                if kind == "zip" {
                    duplicate_writers(cs, issues);
                }
            }
        }
    }
}

fn duplicate_writers(children: &[Node], issues: &mut Vec<Issue>) {
    let mut writers: HashMap<String, Vec<String>> = HashMap::new();
    let mut order = Vec::new();
    for c in children {
        let mut labels: HashMap<String, String> = HashMap::new();
        c.for_each_block(&mut |b| {
            for l in b.writes() {
                labels.entry(l.clone()).or_insert_with(|| b.name().to_string());
            }
        });
        let mut labels: Vec<_> = labels.into_iter().collect();
        labels.sort();
        for (label, block) in labels {
            let e = writers.entry(label.clone()).or_default();
            if e.is_empty() {
                order.push(label);
            }
            e.push(block);
        }
    }
    let mut seen = HashSet::new();
    for label in order {
        let blocks = &writers[&label];
        if blocks.len() > 1 && seen.insert(label.clone()) {
            issues.push(Issue::DuplicateWriter {
                label,
                blocks: blocks.clone(),
            });
        }
    }
}

fn step_leaf(block: &mut dyn ControlBlock, ctx: &mut StepCtx<'_>) -> Result<bool, BlockError> {
    if let Some(trace) = ctx.trace.as_deref_mut() {
        trace.entries.push((ctx.tick, block.name().to_string()));
    }
    step_block(block, ctx.space, ctx.checked, ctx.tick)
}

/// Steps one block outside an executor, converting a panic into
/// [`BlockError::Panic`].
pub fn step_block(
    block: &mut dyn ControlBlock,
    space: &StateSpace,
    checked: bool,
    tick: u64,
) -> Result<bool, BlockError> {
    with_io(block, space, checked, tick, |b, io| {
        match panic::catch_unwind(AssertUnwindSafe(|| b.step(io))) {
            Ok(r) => r,
            Err(payload) => Err(BlockError::Panic {
                block: io.block_name().to_string(),
                message: panic_message(payload.as_ref()),
            }),
        }
    })
}

fn with_io<R>(
    block: &mut dyn ControlBlock,
    space: &StateSpace,
    checked: bool,
    tick: u64,
    f: impl FnOnce(&mut dyn ControlBlock, &StateIo<'_>) -> R,
) -> R {
    let name = block.name().to_string();
    let reads = block.reads().to_vec();
    let writes = block.writes().to_vec();
    let io = StateIo::new(space, &name, &reads, &writes, checked, tick);
    f(block, &io)
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}
