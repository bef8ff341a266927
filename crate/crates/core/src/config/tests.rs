use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::blocks::{Executor, FnBlock};
use crate::state::StateSpace;

const MINIMAL: &str = "\
[run]
rate = 50

[states]
ticks i64 [1]

[graph]
block(counter label=ticks)
";

#[test]
fn minimal_config() {
    let c = WorkflowConfig::parse(MINIMAL).unwrap();
    assert_eq!(c.run.rate_hz, 50.0);
    assert_eq!(c.states.len(), 1);
    assert_eq!(c.states[0].init, Init::Zeros);
    assert_eq!(c.graph, NodeSpec::block("counter", &[("label", "ticks")]));
    assert_eq!(c.graph.depth(), 0);
    assert!(c.platform.is_none());
}

#[test]
fn typo_in_node_kind() {
    let text = "[graph]\nchain(\n  lop(block(counter label=x) until \"x > 1\")\n)\n";
    let e = WorkflowConfig::parse(text).unwrap_err();
    assert_eq!((e.line, e.col), (3, 3));
    assert!(e.message.contains("\"lop\""), "{e}");
}

const NESTED: &str = r#"
# three levels
[run]
rate = 100
ticks = 40
backend = shm
shm_name = "my seg"

[states]
a f64 [1]
b f32 [2,2] = [1, 2.5, -3, 4e-3]   # trailing comment
done bool [1] = 0

[graph]
chain(
  zip(
    loop(
      block(counter name=ca label=a)
      until "a[0] >= 3 && !done"
    )
    block(identity_control src=a dst="a copy #1")
  )
  block(sine label=b amplitude=2 freq=0.5)
)
"#;

#[test]
fn nested_round_trip() {
    let c = WorkflowConfig::parse(NESTED).unwrap();
    assert_eq!(c.graph.depth(), 3);
    assert_eq!(c.run.backend, BackendChoice::SharedMemory);
    assert_eq!(c.run.shm_name.as_deref(), Some("my seg"));
    assert_eq!(c.states[1].init, Init::Values(vec![1.0, 2.5, -3.0, 4e-3]));
    let NodeSpec::Chain { children, .. } = &c.graph else { panic!() };
    let NodeSpec::Zip { children: zc, .. } = &children[0] else { panic!() };
    assert_eq!(zc[1], NodeSpec::block("identity_control", &[("src", "a"), ("dst", "a copy #1")]));
    let printed = c.to_text();
    let again = WorkflowConfig::parse(&printed).unwrap();
    assert_eq!(again, c);
    assert_eq!(again.to_text(), printed);
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    assert!(squash(&printed).contains("until \"a[0] >= 3 && !done\""));
}

#[test]
fn positioned_errors() {
    let cases: &[(&str, (usize, usize), &str)] = &[
        ("[graph]\nzip(\n", (2, 5), "end of graph"),
        ("[runn]\n", (1, 2), "unknown section"),
        ("[run]\nrat = 5\n[graph]\nblock(x)", (2, 1), "unknown key"),
        ("[run]\nrate = -5\n[graph]\nblock(x)", (2, 1), "positive"),
        ("[states]\nq f65 [3]\n[graph]\nblock(x)", (2, 3), "unknown dtype"),
        ("[states]\nq f64 [3, 0]\n[graph]\nblock(x)", (2, 11), "invalid dimension"),
        ("[states]\nq f64 [3] = [1, 2]\n[graph]\nblock(x)", (2, 13), "expected 3"),
        ("[states]\nq f64 [1] = 1x\n[graph]\nblock(x)", (2, 13), "invalid number"),
        ("x = 1\n", (1, 1), "section header"),
        ("[run]\n", (1, 1), "missing [graph]"),
        ("[graph]\nzip()\n", (2, 1), "at least one child"),
        ("[graph]\nblock(a) block(b)\n", (2, 10), "after the root"),
        ("[graph]\nblock(a k=1 k=2)\n", (2, 13), "duplicate parameter"),
        ("[graph]\nloop(block(a) until \"x >\")\n", (2, 25), "predicate"),
        ("[graph]\nloop(block(a) \"x\")\n", (2, 15), "until"),
        ("[graph]\nblock(a k=\"open)\n", (2, 11), "unterminated"),
        ("[platform]\nkind = sim\n[graph]\nblock(a)", (1, 1), "needs a spec"),
        ("[platform]\nkind = robot\nspec = x\n[graph]\nblock(a)", (2, 1), "unknown platform kind"),
        ("[platform]\nkind = sim\nspec = x\nspeed = 3\n[graph]\nblock(a)", (4, 1), "unknown key"),
        ("[graph]\nblock(a)\n[graph]\n", (3, 1), "duplicate section"),
    ];
    for (text, (line, col), needle) in cases {
        let e = WorkflowConfig::parse(text).unwrap_err();
        assert_eq!((e.line, e.col), (*line, *col), "{text:?}: {e}");
        let message = e.message.to_lowercase();
        assert!(message.contains(needle) || e.to_string().contains(needle), "{text:?}: {e}");
    }
}

#[test]
fn overrides() {
    let mut c = WorkflowConfig::parse("[platform]\nkind = sim\nspec = a.platform\n[graph]\nblock(recv)\n").unwrap();
    c.set("run.rate", "200").unwrap();
    c.set("run.ticks", "7").unwrap();
    c.set("platform.kind", "loopback").unwrap();
    c.set("platform.mode", "lockstep").unwrap();
    assert_eq!((c.run.rate_hz, c.run.ticks), (200.0, Some(7)));
    let p = c.platform.as_ref().unwrap();
    assert_eq!((p.kind, p.mode), (PlatformKind::Loopback, ModeChoice::Lockstep));
    assert!(c.set("run.speed", "1").is_err());
    assert!(c.set("rate", "1").is_err());
    assert!(c.set("graph.x", "1").is_err());
    let mut bare = WorkflowConfig::parse(MINIMAL).unwrap();
    assert!(bare.set("platform.kind", "sim").is_err());
}

fn build(text: &str, registry: &BlockRegistry) -> Result<BuiltWorkflow, BuildError> {
    let c = WorkflowConfig::parse(text).unwrap();
    build_workflow(&c, registry, StateSpace::in_process(), Path::new("."))
}

#[test]
fn builds_and_runs_minimal() {
    let mut w = build(
        "[states]\nticks i64 [1]\n[graph]\nloop(block(counter label=ticks) until \"ticks >= 5\")\n",
        &BlockRegistry::with_builtins(),
    )
    .unwrap();
    let r = Executor::new(1e6).max_ticks(100).run(&mut w.root, &w.space).unwrap();
    assert_eq!(r.ticks, 5);
    assert_eq!(w.space.read_f64("ticks").unwrap(), vec![5.0]);
}

#[test]
fn build_errors() {
    let reg = BlockRegistry::with_builtins();
    let e = build("[graph]\nzip(\n  block(countr label=x)\n)\n", &reg).err().unwrap();
    assert!(matches!(&e, BuildError::UnknownBlock { kind, pos, .. } if kind == "countr" && (pos.line, pos.col) == (3, 3)), "{e}");
    assert!(e.to_string().contains("counter"));
    let e = build("[states]\nx f64 [1]\n[graph]\nblock(counter label=x speed=2)\n", &reg).err().unwrap();
    assert!(e.to_string().contains("unknown parameter(s) speed"), "{e}");
    let e = build("[graph]\nblock(counter)\n", &reg).err().unwrap();
    assert!(e.to_string().contains("missing parameter \"label\""), "{e}");
    let e = build("[graph]\nblock(recv)\n", &reg).err().unwrap();
    assert!(e.to_string().contains("[platform]"), "{e}");
    let e = build("[states]\nq f64 [1]\n[graph]\nblock(identity_control src=q dst=nowhere)\n", &reg)
        .err()
        .unwrap();
    assert!(matches!(e, BuildError::Invalid(_)), "{e}");
    let e = build("[states]\nx f64 [1]\n[graph]\nblock(counter label=x limit=abc)\n", &reg).err().unwrap();
    assert!(e.to_string().contains("invalid value"), "{e}");
}

#[test]
fn custom_blocks_register() {
    let mut reg = BlockRegistry::empty();
    reg.register("double", |p, _| {
        let label = p.require("label")?;
        let l2 = label.clone();
        Ok(Box::new(FnBlock::new(&p.name(), &[&label], &[&label], move |io| {
            let v: Vec<f64> = io.read_f64(&l2)?.iter().map(|x| x * 2.0).collect();
            io.write_f64(&l2, &v)?;
            Ok(false)
        })))
    });
    assert_eq!(reg.kinds(), vec!["double"]);
    let mut w = build("[states]\nx f64 [2] = [1, 3]\n[graph]\nblock(double label=x)\n", &reg).unwrap();
    Executor::new(1e6).max_ticks(3).run(&mut w.root, &w.space).unwrap();
    assert_eq!(w.space.read_f64("x").unwrap(), vec![8.0, 24.0]);
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn value() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z0-9_.,-]{1,6}", "[ a-z#()=\"\\\\]{0,6}"]
}

fn node() -> impl Strategy<Value = NodeSpec> {
    let leaf = (word(), prop::collection::btree_map(word(), value(), 0..3)).prop_map(|(kind, params)| NodeSpec::Block {
        kind,
        params: params.into_iter().collect(),
        pos: Pos::default(),
    });
    leaf.prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            (inner.clone(), word(), 0..100i32).prop_map(|(child, label, k)| NodeSpec::Loop {
                child: Box::new(child),
                until: format!("{label}[0] >= {k} || !{label}"),
                pos: Pos::default(),
            }),
            prop::collection::vec(inner.clone(), 1..4).prop_map(|children| NodeSpec::Zip {
                children,
                pos: Pos::default()
            }),
            prop::collection::vec(inner, 1..4).prop_map(|children| NodeSpec::Chain {
                children,
                pos: Pos::default()
            }),
        ]
    })
}

fn config() -> impl Strategy<Value = WorkflowConfig> {
    let state = (word(), 0..6usize, prop::collection::vec(1..4usize, 1..3), 0..3u8, -1e3..1e3f64).prop_map(
        |(label, d, shape, init, x)| {
            let len: usize = shape.iter().product();
            StateDecl {
                label,
                dtype: DType::ALL[d],
                init: match init {
                    0 => Init::Zeros,
                    1 => Init::Fill(x),
                    _ => Init::Values((0..len).map(|i| x * i as f64).collect()),
                },
                shape,
                pos: Pos::default(),
            }
        },
    );
    (
        node(),
        prop::collection::btree_map(word(), state, 0..4),
        1e-3..1e4f64,
        proptest::option::of(0..10_000u64),
        any::<bool>(),
        0..3u8,
    )
        .prop_map(|(graph, states, rate_hz, ticks, with_platform, backend)| WorkflowConfig {
            run: RunSection {
                rate_hz,
                ticks,
                backend: [BackendChoice::InProcess, BackendChoice::SharedMemory, BackendChoice::Socket][backend as usize],
                checked: ticks.is_none(),
                ..Default::default()
            },
            states: states
                .into_iter()
                .map(|(label, s)| StateDecl { label, ..s })
                .collect(),
            platform: with_platform.then(|| {
                let mut p = PlatformSection::new(PlatformKind::Loopback, "specs/a b.platform");
                p.echo_delay = 2;
                p.joints = Some(vec!["j1".into(), "j0".into()]);
                p
            }),
            graph,
        })
}

proptest! {
    #[test]
    fn print_parse_fixpoint(c in config()) {
        let text = c.to_text();
        let back = WorkflowConfig::parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }
}
