use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::blocks::{ControlBlock, Counter, IdentityControl, Issue, Node, Predicate, Sine};
use crate::platform::{
    make_platform, register_workflow_labels, CloseBlock, PlatformError, PlatformOptions, PlatformSpec, Probe, RecvBlock,
    SendBlock,
};
use crate::replay::{Recorder, ReplayError, Replayer};
use crate::state::{StateError, StateSpace, Values};

use super::{BackendChoice, ModeChoice, NodeSpec, Pos, RunSection, WorkflowConfig};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{pos}: unknown block type {kind:?} (known: {known})")]
    UnknownBlock { kind: String, pos: Pos, known: String },
    #[error("{pos}: block {kind}: {message}")]
    Param { kind: String, pos: Pos, message: String },
    #[error("state {label:?}: {source}")]
    State {
        label: String,
        #[source]
        source: StateError,
    },
    #[error("platform spec {path}: {source}")]
    Spec {
        path: String,
        #[source]
        source: PlatformError,
    },
    #[error("platform: {0}")]
    Platform(#[from] PlatformError),
    #[error("{pos}: {source}")]
    Replay {
        pos: Pos,
        #[source]
        source: ReplayError,
    },
    #[error("graph does not validate: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
}

impl BuildError {
    pub fn is_schema_mismatch(&self) -> bool {
        matches!(
            self,
            BuildError::Replay {
                source: ReplayError::SchemaMismatch { .. },
                ..
            }
        )
    }
}

/// Parameters of one `block(...)` node. Every parameter must be consumed by
/// the factory; leftovers are reported as unknown.
pub struct Params {
    pub kind: String,
    pub pos: Pos,
    items: Vec<(String, String, bool)>,
}

impl Params {
    pub fn new(kind: &str, pos: Pos, items: &[(String, String)]) -> Self {
        Params {
            kind: kind.to_string(),
            pos,
            items: items.iter().map(|(k, v)| (k.clone(), v.clone(), false)).collect(),
        }
    }

    pub fn error(&self, message: impl Into<String>) -> BuildError {
        BuildError::Param {
            kind: self.kind.clone(),
            pos: self.pos,
            message: message.into(),
        }
    }

    pub fn get(&mut self, key: &str) -> Option<String> {
        self.items.iter_mut().find(|(k, _, _)| k == key).map(|(_, v, used)| {
            *used = true;
            v.clone()
        })
    }

    pub fn require(&mut self, key: &str) -> Result<String, BuildError> {
        self.get(key).ok_or_else(|| self.error(format!("missing parameter {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, BuildError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.error(format!("invalid value {v:?} for {key:?}"))),
        }
    }

    /// Comma-separated list.
    pub fn list(&mut self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// The `name` parameter, defaulting to the block type.
    pub fn name(&mut self) -> String {
        self.get("name").unwrap_or_else(|| self.kind.clone())
    }

    fn finish(&self) -> Result<(), BuildError> {
        let unused: Vec<&str> = self.items.iter().filter(|(_, _, u)| !u).map(|(k, _, _)| k.as_str()).collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(self.error(format!("unknown parameter(s) {}", unused.join(", "))))
        }
    }
}

/// Everything a block factory may draw on.
pub struct BuildContext {
    pub space: StateSpace,
    pub rate_hz: f64,
    /// Directory of the config file.
    pub base_dir: PathBuf,
    pub recv: Option<RecvBlock>,
    pub send: Option<SendBlock>,
    pub close: Option<CloseBlock>,
    pub has_platform: bool,
}

impl BuildContext {
    pub fn new(space: StateSpace, rate_hz: f64, base_dir: &Path) -> Self {
        BuildContext {
            space,
            rate_hz,
            base_dir: base_dir.to_path_buf(),
            recv: None,
            send: None,
            close: None,
            has_platform: false,
        }
    }
}

type Factory = Box<dyn Fn(&mut Params, &mut BuildContext) -> Result<Box<dyn ControlBlock>, BuildError> + Send + Sync>;

/// Block types addressable from `block(<type> ...)`.
pub struct BlockRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for BlockRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

fn take_platform_block<B: ControlBlock + 'static>(
    slot: Option<B>,
    has_platform: bool,
    p: &Params,
) -> Result<Box<dyn ControlBlock>, BuildError> {
    match slot {
        Some(b) => Ok(Box::new(b)),
        None if !has_platform => Err(p.error("needs a [platform] section")),
        None => Err(p.error("the platform provides only one instance")),
    }
}

impl BlockRegistry {
    pub fn empty() -> Self {
        BlockRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// counter, identity_control, sine, recorder, replayer and the platform's
    /// recv, send and close.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("counter", |p, _| {
            let name = p.name();
            let label = p.require("label")?;
            let limit = p.parse("limit")?;
            Ok(Box::new(Counter::new(&name, &label, limit)))
        });
        r.register("identity_control", |p, _| {
            let name = p.name();
            let src = p.get("src").unwrap_or_else(|| "q".into());
            let dst = p.get("dst").unwrap_or_else(|| "q_des".into());
            Ok(Box::new(IdentityControl::new(&name, &src, &dst)))
        });
        r.register("sine", |p, ctx| {
            let name = p.name();
            let label = p.require("label")?;
            let mut s = Sine::new(
                &name,
                &label,
                p.parse("amplitude")?.unwrap_or(1.0),
                p.parse("freq")?.unwrap_or(1.0),
                p.parse("dt")?.unwrap_or(1.0 / ctx.rate_hz),
            );
            s.center = p.parse("center")?.unwrap_or(0.0);
            s.ticks = p.parse("ticks")?;
            Ok(Box::new(s))
        });
        r.register("recorder", |p, ctx| {
            let name = p.name();
            let labels = p.list("labels").ok_or_else(|| p.error("missing parameter \"labels\""))?;
            let path = PathBuf::from(p.require("path")?);
            let rec = Recorder::new(&ctx.space, &labels, &path).map_err(|source| BuildError::Replay { pos: p.pos, source })?;
            Ok(Box::new(rec.named(&name)))
        });
        r.register("replayer", |p, ctx| {
            let name = p.name();
            let path = PathBuf::from(p.require("path")?);
            let only = p.list("labels");
            let traj = crate::replay::Trajectory::load(&path).map_err(|source| BuildError::Replay { pos: p.pos, source })?;
            let rep = Replayer::from_trajectory(traj, &ctx.space, only.as_deref())
                .map_err(|source| BuildError::Replay { pos: p.pos, source })?;
            Ok(Box::new(rep.named(&name)))
        });
        r.register("recv", |p, ctx| take_platform_block(ctx.recv.take(), ctx.has_platform, p));
        r.register("send", |p, ctx| take_platform_block(ctx.send.take(), ctx.has_platform, p));
        r.register("close", |p, ctx| take_platform_block(ctx.close.take(), ctx.has_platform, p));
        r
    }

    pub fn register(
        &mut self,
        kind: &str,
        factory: impl Fn(&mut Params, &mut BuildContext) -> Result<Box<dyn ControlBlock>, BuildError> + Send + Sync + 'static,
    ) {
        self.factories.insert(kind.to_string(), Box::new(factory));
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build_node(&self, spec: &NodeSpec, ctx: &mut BuildContext) -> Result<Node, BuildError> {
        Ok(match spec {
            NodeSpec::Block { kind, params, pos } => {
                let factory = self.factories.get(kind).ok_or_else(|| BuildError::UnknownBlock {
                    kind: kind.clone(),
                    pos: *pos,
                    known: self.kinds().join(", "),
                })?;
                let mut p = Params::new(kind, *pos, params);
                let block = factory(&mut p, ctx)?;
                p.finish()?;
                Node::Leaf(block)
            }
            NodeSpec::Loop { child, until, pos } => {
                let pred = Predicate::parse(until).map_err(|e| BuildError::Param {
                    kind: "loop".into(),
                    pos: *pos,
                    message: e.to_string(),
                })?;
                Node::loop_until(self.build_node(child, ctx)?, pred)
            }
            NodeSpec::Zip { children, .. } => {
                Node::zip(children.iter().map(|c| self.build_node(c, ctx)).collect::<Result<_, _>>()?)
            }
            NodeSpec::Chain { children, .. } => {
                Node::chain(children.iter().map(|c| self.build_node(c, ctx)).collect::<Result<_, _>>()?)
            }
        })
    }
}

/// Opens the state space selected by `run`. `shm_name` overrides the
/// configured segment name.
pub fn open_space(run: &RunSection, shm_name: Option<&str>) -> Result<StateSpace, StateError> {
    match run.backend {
        BackendChoice::InProcess => Ok(StateSpace::in_process()),
        BackendChoice::SharedMemory => {
            let name = shm_name
                .map(String::from)
                .or_else(|| run.shm_name.clone())
                .unwrap_or_else(|| format!("statebus-{}", std::process::id()));
            StateSpace::shared_memory(&name)
        }
        BackendChoice::Socket => StateSpace::socket_hub(run.endpoint.as_deref().unwrap_or("127.0.0.1:0")),
    }
}

pub struct PlatformInfo {
    pub state_label: String,
    pub cmd_label: String,
    pub probe: Arc<Probe>,
    pub spec: PlatformSpec,
}

pub struct BuiltWorkflow {
    pub space: StateSpace,
    pub root: Node,
    pub platform: Option<PlatformInfo>,
}

/// Registers the config's states in `space`, binds the platform if any,
/// builds the graph and validates it.
pub fn build_workflow(
    cfg: &WorkflowConfig,
    registry: &BlockRegistry,
    space: StateSpace,
    base_dir: &Path,
) -> Result<BuiltWorkflow, BuildError> {
    for s in &cfg.states {
        let init = Values::from_f64(s.dtype, &s.initial_values());
        space
            .register(&s.label, s.dtype, &s.shape, Some(&init))
            .map_err(|source| BuildError::State {
                label: s.label.clone(),
                source,
            })?;
    }
    let mut ctx = BuildContext::new(space.clone(), cfg.run.rate_hz, base_dir);
    let mut info = None;
    if let Some(p) = &cfg.platform {
        let path = base_dir.join(&p.spec);
        let spec = PlatformSpec::load(&path).map_err(|source| BuildError::Spec {
            path: path.display().to_string(),
            source,
        })?;
        register_workflow_labels(&space, spec.dof()).map_err(|source| BuildError::State {
            label: "q".into(),
            source,
        })?;
        let mut opts = PlatformOptions::new(p.kind).echo_delay(p.echo_delay);
        if p.mode == ModeChoice::Lockstep {
            opts = opts.lockstep(p.substeps);
        }
        if let Some(j) = &p.joints {
            opts = opts.workflow_joints(j.clone());
        }
        let platform = make_platform(&opts, &spec, &space)?;
        info = Some(PlatformInfo {
            state_label: platform.state_label().to_string(),
            cmd_label: platform.cmd_label().to_string(),
            probe: platform.probe.clone(),
            spec,
        });
        let crate::platform::Platform { recv, send, close, .. } = platform;
        ctx.recv = Some(recv);
        ctx.send = Some(send);
        ctx.close = Some(close);
        ctx.has_platform = true;
    }
    let root = registry.build_node(&cfg.graph, &mut ctx)?;
    let issues = root.validate(&space);
    if !issues.is_empty() {
        return Err(BuildError::Invalid(issues));
    }
    Ok(BuiltWorkflow {
        space,
        root,
        platform: info,
    })
}
