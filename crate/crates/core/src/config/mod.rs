//! Text workflow configs.
//!
//! A config is line oriented with four sections:
//!
//! ```text
//! [run]
//! rate = 50
//! ticks = 500
//! backend = inproc
//!
//! [states]
//! phase f64 [1] = 0
//! gains f32 [2,2] = [1, 0, 0, 1]
//!
//! [platform]
//! kind = sim
//! spec = quadruped.platform
//!
//! [graph]
//! zip(
//!   block(recv)
//!   loop(
//!     block(counter label=phase)
//!     until "phase[0] >= 10"
//!   )
//!   block(send)
//! )
//! ```
//!
//! `#` starts a comment outside quoted strings. Unknown sections, keys and
//! node kinds are errors. [`WorkflowConfig::to_text`] prints a canonical
//! form that parses back to an equal config.

mod registry;

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::blocks::Predicate;
use crate::platform::PlatformKind;
use crate::state::DType;

pub use registry::{build_workflow, open_space, BlockRegistry, BuildContext, BuildError, BuiltWorkflow, Params, PlatformInfo};

/// Position of a config item, 1-based.
///
/// Positions are diagnostics only: any two compare equal, so a config and its
/// reprinted form are equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

fn err<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        col,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    InProcess,
    SharedMemory,
    Socket,
}

impl BackendChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendChoice::InProcess => "inproc",
            BackendChoice::SharedMemory => "shm",
            BackendChoice::Socket => "socket",
        }
    }
}

impl FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(BackendChoice::InProcess),
            "shm" => Ok(BackendChoice::SharedMemory),
            "socket" => Ok(BackendChoice::Socket),
            _ => Err(format!("unknown backend {s:?} (expected inproc, shm or socket)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub rate_hz: f64,
    pub ticks: Option<u64>,
    pub backend: BackendChoice,
    pub shm_name: Option<String>,
    pub endpoint: Option<String>,
    pub checked: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            rate_hz: 50.0,
            ticks: None,
            backend: BackendChoice::InProcess,
            shm_name: None,
            endpoint: None,
            checked: true,
        }
    }
}

impl RunSection {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "rate" => {
                let r: f64 = parse_num(value)?;
                if !(r.is_finite() && r > 0.0) {
                    return Err(format!("rate must be positive, got {value}"));
                }
                self.rate_hz = r;
            }
            "ticks" => self.ticks = Some(parse_num(value)?),
            "backend" => self.backend = value.parse()?,
            "shm_name" => self.shm_name = Some(value.to_string()),
            "endpoint" => self.endpoint = Some(value.to_string()),
            "checked" => self.checked = parse_num(value)?,
            _ => return Err(format!("unknown key {key:?} in [run]")),
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Threaded,
    Lockstep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformSection {
    pub kind: PlatformKind,
    /// Spec file, relative to the config file's directory.
    pub spec: String,
    pub mode: ModeChoice,
    pub substeps: usize,
    pub echo_delay: usize,
    pub joints: Option<Vec<String>>,
}

impl PlatformSection {
    pub fn new(kind: PlatformKind, spec: &str) -> Self {
        PlatformSection {
            kind,
            spec: spec.to_string(),
            mode: ModeChoice::Threaded,
            substeps: 1,
            echo_delay: 0,
            joints: None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "kind" => self.kind = value.parse().map_err(|_| format!("unknown platform kind {value:?} (expected sim or loopback)"))?,
            "spec" => self.spec = value.to_string(),
            "mode" => {
                self.mode = match value {
                    "threaded" => ModeChoice::Threaded,
                    "lockstep" => ModeChoice::Lockstep,
                    _ => return Err(format!("unknown mode {value:?} (expected threaded or lockstep)")),
                }
            }
            "substeps" => {
                self.substeps = parse_num(value)?;
                if self.substeps == 0 {
                    return Err("substeps must be at least 1".into());
                }
            }
            "echo_delay" => self.echo_delay = parse_num(value)?,
            "joints" => self.joints = Some(value.split_whitespace().map(String::from).collect()),
            _ => return Err(format!("unknown key {key:?} in [platform]")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Fill(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDecl {
    pub label: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub init: Init,
    pub pos: Pos,
}

impl StateDecl {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn initial_values(&self) -> Vec<f64> {
        match &self.init {
            Init::Zeros => vec![0.0; self.len()],
            Init::Fill(v) => vec![*v; self.len()],
            Init::Values(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeSpec {
    Block {
        kind: String,
        params: Vec<(String, String)>,
        pos: Pos,
    },
    Loop {
        child: Box<NodeSpec>,
        until: String,
        pos: Pos,
    },
    Zip {
        children: Vec<NodeSpec>,
        pos: Pos,
    },
    Chain {
        children: Vec<NodeSpec>,
        pos: Pos,
    },
}

impl NodeSpec {
    pub fn block(kind: &str, params: &[(&str, &str)]) -> Self {
        NodeSpec::Block {
            kind: kind.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            pos: Pos::default(),
        }
    }

    /// Nesting depth of composites; a single block has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            NodeSpec::Block { .. } => 0,
            NodeSpec::Loop { child, .. } => 1 + child.depth(),
            NodeSpec::Zip { children, .. } | NodeSpec::Chain { children, .. } => {
                1 + children.iter().map(NodeSpec::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            NodeSpec::Block { pos, .. }
            | NodeSpec::Loop { pos, .. }
            | NodeSpec::Zip { pos, .. }
            | NodeSpec::Chain { pos, .. } => *pos,
        }
    }

    fn print(&self, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match self {
            NodeSpec::Block { kind, params, .. } => {
                let _ = write!(out, "{pad}block({kind}");
                for (k, v) in params {
                    let _ = write!(out, " {k}={}", quote(v));
                }
                out.push_str(")\n");
            }
            NodeSpec::Loop { child, until, .. } => {
                let _ = writeln!(out, "{pad}loop(");
                child.print(indent + 1, out);
                let _ = writeln!(out, "{pad}  until {}", quote_always(until));
                let _ = writeln!(out, "{pad})");
            }
            NodeSpec::Zip { children, .. } | NodeSpec::Chain { children, .. } => {
                let word = if matches!(self, NodeSpec::Zip { .. }) { "zip" } else { "chain" };
                let _ = writeln!(out, "{pad}{word}(");
                for c in children {
                    c.print(indent + 1, out);
                }
                let _ = writeln!(out, "{pad})");
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowConfig {
    pub run: RunSection,
    pub states: Vec<StateDecl>,
    pub platform: Option<PlatformSection>,
    pub graph: NodeSpec,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("override {key:?}: {message}")]
    Override { key: String, message: String },
}

impl WorkflowConfig {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Parser::default().parse(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }

    /// Applies a `section.key=value` override, e.g. `run.rate=100` or
    /// `platform.kind=loopback`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let fail = |message: String| ConfigError::Override {
            key: key.to_string(),
            message,
        };
        let (section, field) = key.split_once('.').ok_or_else(|| fail("expected section.key".into()))?;
        match section {
            "run" => self.run.set(field, value).map_err(fail),
            "platform" => match &mut self.platform {
                Some(p) => p.set(field, value).map_err(fail),
                None => Err(fail("config has no [platform] section".into())),
            },
            _ => Err(fail(format!("unknown section {section:?}"))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[run]\n");
        let r = &self.run;
        let _ = writeln!(out, "rate = {}", r.rate_hz);
        if let Some(t) = r.ticks {
            let _ = writeln!(out, "ticks = {t}");
        }
        let _ = writeln!(out, "backend = {}", r.backend.as_str());
        if let Some(n) = &r.shm_name {
            let _ = writeln!(out, "shm_name = {}", quote(n));
        }
        if let Some(e) = &r.endpoint {
            let _ = writeln!(out, "endpoint = {}", quote(e));
        }
        if !r.checked {
            out.push_str("checked = false\n");
        }
        if !self.states.is_empty() {
            out.push_str("\n[states]\n");
            for s in &self.states {
                let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
                let _ = write!(out, "{} {} [{}]", s.label, s.dtype, dims.join(","));
                match &s.init {
                    Init::Zeros => {}
                    Init::Fill(v) => {
                        let _ = write!(out, " = {v}");
                    }
                    Init::Values(vs) => {
                        let vs: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                        let _ = write!(out, " = [{}]", vs.join(", "));
                    }
                }
                out.push('\n');
            }
        }
        if let Some(p) = &self.platform {
            out.push_str("\n[platform]\n");
            let _ = writeln!(out, "kind = {}", p.kind);
            let _ = writeln!(out, "spec = {}", quote(&p.spec));
            if p.mode == ModeChoice::Lockstep {
                out.push_str("mode = lockstep\n");
            }
            if p.substeps != 1 {
                let _ = writeln!(out, "substeps = {}", p.substeps);
            }
            if p.echo_delay != 0 {
                let _ = writeln!(out, "echo_delay = {}", p.echo_delay);
            }
            if let Some(j) = &p.joints {
                let _ = writeln!(out, "joints = {}", j.join(" "));
            }
        }
        out.push_str("\n[graph]\n");
        self.graph.print(0, &mut out);
        out
    }
}

fn is_word_char(c: char) -> bool {
    !(c.is_whitespace() || matches!(c, '(' | ')' | '=' | '"' | '#'))
}

fn quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(is_word_char) {
        s.to_string()
    } else {
        quote_always(s)
    }
}

fn quote_always(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Strips a trailing `#` comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Reads a quoted string starting at `chars[start] == '"'`; returns the
/// unescaped text and the index after the closing quote.
fn read_string(chars: &[char], start: usize, line: usize) -> Result<(String, usize), ParseError> {
    let mut s = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '"' => return Ok((s, i + 1)),
            '\\' if i + 1 < chars.len() => {
                s.push(chars[i + 1]);
                i += 2;
            }
            c => {
                s.push(c);
                i += 1;
            }
        }
    }
    err(line, start + 1, "unterminated string")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Eq,
    Word(String),
    Str(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    /// Column just past the token.
    end: usize,
}

fn tokenize_line(line_no: usize, text: &str, out: &mut Vec<Token>) -> Result<(), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let tok = match c {
            '#' => break,
            _ if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' | ')' | '=' => {
                i += 1;
                match c {
                    '(' => Tok::Open,
                    ')' => Tok::Close,
                    _ => Tok::Eq,
                }
            }
            '"' => {
                let (s, next) = read_string(&chars, i, line_no)?;
                i = next;
                Tok::Str(s)
            }
            _ => {
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                Tok::Word(chars[start..i].iter().collect())
            }
        };
        out.push(Token {
            tok,
            line: line_no,
            col: start + 1,
            end: i + 1,
        });
    }
    Ok(())
}

struct GraphParser {
    toks: Vec<Token>,
    i: usize,
    end: (usize, usize),
}

impl GraphParser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.i)
    }

    fn next(&mut self, what: &str) -> Result<Token, ParseError> {
        match self.toks.get(self.i) {
            Some(t) => {
                self.i += 1;
                Ok(t.clone())
            }
            None => err(self.end.0, self.end.1, format!("unexpected end of graph, expected {what}")),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.next(what)?;
        if t.tok != tok {
            return err(t.line, t.col, format!("expected {what}"));
        }
        Ok(t)
    }

    fn node(&mut self) -> Result<NodeSpec, ParseError> {
        let t = self.next("a node")?;
        let pos = Pos { line: t.line, col: t.col };
        let Tok::Word(kind) = t.tok else {
            return err(t.line, t.col, "expected a node (block, loop, zip or chain)");
        };
        if !matches!(kind.as_str(), "block" | "loop" | "zip" | "chain") {
            return err(t.line, t.col, format!("unknown node kind {kind:?} (expected block, loop, zip or chain)"));
        }
        self.expect(Tok::Open, &format!("'(' after {kind}"))?;
        match kind.as_str() {
            "block" => {
                let t = self.next("a block type")?;
                let Tok::Word(block_kind) = t.tok else {
                    return err(t.line, t.col, "expected a block type");
                };
                let mut params: Vec<(String, String)> = Vec::new();
                loop {
                    let t = self.next("')' or key=value")?;
                    match t.tok {
                        Tok::Close => break,
                        Tok::Word(key) => {
                            self.expect(Tok::Eq, &format!("'=' after {key}"))?;
                            let v = self.next("a value")?;
                            let value = match v.tok {
                                Tok::Word(s) | Tok::Str(s) => s,
                                _ => return err(v.line, v.col, "expected a value"),
                            };
                            if params.iter().any(|(k, _)| *k == key) {
                                return err(t.line, t.col, format!("duplicate parameter {key:?}"));
                            }
                            params.push((key, value));
                        }
                        _ => return err(t.line, t.col, "expected ')' or key=value"),
                    }
                }
                Ok(NodeSpec::Block {
                    kind: block_kind,
                    params,
                    pos,
                })
            }
            "loop" => {
                let child = self.node()?;
                let t = self.next("until")?;
                if t.tok != Tok::Word("until".into()) {
                    return err(t.line, t.col, "expected 'until \"predicate\"'");
                }
                let t = self.next("a quoted predicate")?;
                let Tok::Str(until) = t.tok else {
                    return err(t.line, t.col, "expected a quoted predicate");
                };
                if let Err(e) = Predicate::parse(&until) {
                    return err(t.line, t.col + e.col, format!("predicate: {}", e.message));
                }
                self.expect(Tok::Close, "')' closing loop")?;
                Ok(NodeSpec::Loop {
                    child: Box::new(child),
                    until,
                    pos,
                })
            }
            _ => {
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some(Token { tok: Tok::Close, .. }) => {
                            self.i += 1;
                            break;
                        }
                        _ => children.push(self.node()?),
                    }
                }
                if children.is_empty() {
                    return err(pos.line, pos.col, format!("{kind} needs at least one child"));
                }
                Ok(if kind == "zip" {
                    NodeSpec::Zip { children, pos }
                } else {
                    NodeSpec::Chain { children, pos }
                })
            }
        }
    }
}

#[derive(Default)]
struct Parser {
    run: Option<RunSection>,
    states: Option<Vec<StateDecl>>,
    platform: Option<(Pos, Vec<(usize, String, String)>)>,
    graph: Option<(Pos, Vec<Token>)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Run,
    States,
    Platform,
    Graph,
}

fn key_value(line_no: usize, text: &str) -> Result<(String, String), ParseError> {
    let Some((k, v)) = text.split_once('=') else {
        return err(line_no, 1, "expected key = value");
    };
    let key = k.trim();
    if key.is_empty() || !key.chars().all(is_word_char) {
        return err(line_no, 1, format!("invalid key {key:?}"));
    }
    let v_trim = v.trim();
    let value_col = text.len() - v.trim_start().len() + 1;
    let value = if v_trim.starts_with('"') {
        let chars: Vec<char> = v_trim.chars().collect();
        let (s, next) = read_string(&chars, 0, line_no)?;
        if next != chars.len() {
            return err(line_no, value_col + next, "unexpected text after quoted value");
        }
        s
    } else {
        v_trim.to_string()
    };
    if value.is_empty() {
        return err(line_no, value_col, format!("missing value for {key:?}"));
    }
    Ok((key.to_string(), value))
}

fn state_line(line_no: usize, text: &str) -> Result<StateDecl, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let skip = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    let word = |i: &mut usize| {
        let start = *i;
        while *i < chars.len() && !chars[*i].is_whitespace() && !matches!(chars[*i], '[' | ']' | '=' | ',') {
            *i += 1;
        }
        (start + 1, chars[start..*i].iter().collect::<String>())
    };
    skip(&mut i);
    let (col, label) = word(&mut i);
    if label.is_empty() {
        return err(line_no, col, "expected a label");
    }
    skip(&mut i);
    let (col, dtype) = word(&mut i);
    let dtype: DType = match dtype.parse() {
        Ok(d) => d,
        Err(_) => return err(line_no, col, format!("unknown dtype {dtype:?}")),
    };
    skip(&mut i);
    let list = |i: &mut usize| -> Result<Vec<(usize, String)>, ParseError> {
        if chars.get(*i) != Some(&'[') {
            return err(line_no, *i + 1, "expected '['");
        }
        let close = match chars[*i..].iter().position(|&c| c == ']') {
            Some(p) => *i + p,
            None => return err(line_no, *i + 1, "missing ']'"),
        };
        let mut items = Vec::new();
        let mut start = *i + 1;
        for (k, &c) in chars.iter().enumerate().take(close + 1).skip(*i + 1) {
            if c == ',' || k == close {
                let item: String = chars[start..k].iter().collect();
                let lead = item.len() - item.trim_start().len();
                items.push((start + lead + 1, item.trim().to_string()));
                start = k + 1;
            }
        }
        *i = close + 1;
        if items.len() == 1 && items[0].1.is_empty() {
            items.clear();
        }
        Ok(items)
    };
    let mut shape = Vec::new();
    for (col, d) in list(&mut i)? {
        match d.parse::<usize>() {
            Ok(v) if v > 0 => shape.push(v),
            _ => return err(line_no, col, format!("invalid dimension {d:?}")),
        }
    }
    if shape.is_empty() {
        return err(line_no, i, "shape needs at least one dimension");
    }
    let len: usize = shape.iter().product();
    skip(&mut i);
    let init = if i >= chars.len() {
        Init::Zeros
    } else {
        if chars[i] != '=' {
            return err(line_no, i + 1, "expected '= init' or end of line");
        }
        i += 1;
        skip(&mut i);
        let num = |col: usize, s: &str| -> Result<f64, ParseError> {
            match s.parse::<f64>() {
                Ok(v) => Ok(v),
                Err(_) => err(line_no, col, format!("invalid number {s:?}")),
            }
        };
        let init = if chars.get(i) == Some(&'[') {
            let list_col = i + 1;
            let items = list(&mut i)?;
            if items.len() != len {
                return err(line_no, list_col, format!("expected {len} initial values, got {}", items.len()));
            }
            Init::Values(items.iter().map(|(c, s)| num(*c, s)).collect::<Result<_, _>>()?)
        } else {
            let (col, w) = word(&mut i);
            Init::Fill(num(col, &w)?)
        };
        skip(&mut i);
        if i < chars.len() {
            return err(line_no, i + 1, "unexpected text after initial value");
        }
        init
    };
    Ok(StateDecl {
        label,
        dtype,
        shape,
        init,
        pos: Pos { line: line_no, col: 1 },
    })
}

impl Parser {
    fn parse(mut self, text: &str) -> Result<WorkflowConfig, ParseError> {
        let mut section = Section::None;
        let mut last_line = 1;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            last_line = line_no;
            let body = strip_comment(raw);
            let trimmed = body.trim();
            if trimmed.is_empty() {
                continue;
            }
            let indent = body.len() - body.trim_start().len();
            if trimmed.starts_with('[') {
                section = self.header(line_no, indent + 1, trimmed)?;
                continue;
            }
            match section {
                Section::None => return err(line_no, indent + 1, "expected a section header like [run]"),
                Section::Run => {
                    let (k, v) = key_value(line_no, body)?;
                    let run = self.run.get_or_insert_with(RunSection::default);
                    if let Err(m) = run.set(&k, &v) {
                        return err(line_no, indent + 1, m);
                    }
                }
                Section::States => {
                    let decl = state_line(line_no, body)?;
                    let states = self.states.get_or_insert_with(Vec::new);
                    if states.iter().any(|s| s.label == decl.label) {
                        return err(line_no, indent + 1, format!("duplicate state {:?}", decl.label));
                    }
                    states.push(decl);
                }
                Section::Platform => {
                    let (k, v) = key_value(line_no, body)?;
                    let entries = &mut self.platform.as_mut().expect("header seen").1;
                    if entries.iter().any(|(_, key, _)| *key == k) {
                        return err(line_no, indent + 1, format!("duplicate key {k:?}"));
                    }
                    entries.push((line_no, k, v));
                }
                Section::Graph => tokenize_line(line_no, raw, &mut self.graph.as_mut().expect("header seen").1)?,
            }
        }
        let platform = match self.platform {
            None => None,
            Some((pos, entries)) => {
                let find = |key: &str| entries.iter().find(|(_, k, _)| k == key);
                if find("kind").is_none() {
                    return err(pos.line, pos.col, "[platform] needs a kind");
                }
                let Some((_, _, spec)) = find("spec") else {
                    return err(pos.line, pos.col, "[platform] needs a spec");
                };
                let mut p = PlatformSection::new(PlatformKind::Sim, spec);
                for (line, k, v) in &entries {
                    if let Err(m) = p.set(k, v) {
                        return err(*line, 1, m);
                    }
                }
                Some(p)
            }
        };
        let Some((gpos, toks)) = self.graph else {
            return err(last_line, 1, "missing [graph] section");
        };
        let end = toks.last().map_or((gpos.line, gpos.col), |t| (t.line, t.end));
        let mut gp = GraphParser { toks, i: 0, end };
        if gp.peek().is_none() {
            return err(gpos.line, gpos.col, "[graph] is empty");
        }
        let graph = gp.node()?;
        if let Some(t) = gp.peek() {
            return err(t.line, t.col, "unexpected text after the root node");
        }
        Ok(WorkflowConfig {
            run: self.run.unwrap_or_default(),
            states: self.states.unwrap_or_default(),
            platform,
            graph,
        })
    }

    fn header(&mut self, line: usize, col: usize, text: &str) -> Result<Section, ParseError> {
        let Some(name) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
            return err(line, col, "malformed section header");
        };
        let pos = Pos { line, col };
        let dup = |seen: bool| if seen { err(line, col, format!("duplicate section [{name}]")) } else { Ok(()) };
        match name.trim() {
            "run" => {
                dup(self.run.is_some())?;
                self.run = Some(RunSection::default());
                Ok(Section::Run)
            }
            "states" => {
                dup(self.states.is_some())?;
                self.states = Some(Vec::new());
                Ok(Section::States)
            }
            "platform" => {
                dup(self.platform.is_some())?;
                self.platform = Some((pos, Vec::new()));
                Ok(Section::Platform)
            }
            "graph" => {
                dup(self.graph.is_some())?;
                self.graph = Some((pos, Vec::new()));
                Ok(Section::Graph)
            }
            other => err(line, col + 1, format!("unknown section [{other}]")),
        }
    }
}

#[cfg(test)]
mod tests;
