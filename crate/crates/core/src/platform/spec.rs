use std::fmt::Write as _;
use std::path::Path;

use super::PlatformError;
use crate::state::IndexMap;

/// Static description of a robot platform in its own joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformSpec {
    pub name: String,
    pub joint_names: Vec<String>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    /// N·m, symmetric.
    pub torque_limit: Vec<f64>,
    /// `(lo, hi)` in rad.
    pub position_limits: Vec<(f64, f64)>,
    /// kg·m² per joint.
    pub inertia: Vec<f64>,
    /// Viscous damping, N·m·s per joint.
    pub damping: Vec<f64>,
    pub state_rate_hz: f64,
    /// Offset of the platform clock relative to the host clock.
    pub clock_offset_ns: i64,
}

pub const DEFAULT_INERTIA: f64 = 1.0;
pub const DEFAULT_DAMPING: f64 = 0.1;
pub const DEFAULT_STATE_RATE_HZ: f64 = 500.0;

impl PlatformSpec {
    /// Uniform joints with the default inertia, damping and state rate.
    pub fn uniform(name: &str, joints: &[&str], kp: f64, kd: f64, tau_max: f64, limits: (f64, f64)) -> Self {
        let n = joints.len();
        PlatformSpec {
            name: name.to_string(),
            joint_names: joints.iter().map(|s| s.to_string()).collect(),
            kp: vec![kp; n],
            kd: vec![kd; n],
            torque_limit: vec![tau_max; n],
            position_limits: vec![limits; n],
            inertia: vec![DEFAULT_INERTIA; n],
            damping: vec![DEFAULT_DAMPING; n],
            state_rate_hz: DEFAULT_STATE_RATE_HZ,
            clock_offset_ns: 0,
        }
    }

    pub fn dof(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let bad = |m: String| Err(PlatformError::SpecInvalid(format!("{}: {m}", self.name)));
        let n = self.dof();
        if n == 0 {
            return bad("no joints".into());
        }
        let lens = [
            ("kp", self.kp.len()),
            ("kd", self.kd.len()),
            ("torque_limit", self.torque_limit.len()),
            ("position_limits", self.position_limits.len()),
            ("inertia", self.inertia.len()),
            ("damping", self.damping.len()),
        ];
        for (field, len) in lens {
            if len != n {
                return bad(format!("{field} has {len} entries for {n} joints"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, j) in self.joint_names.iter().enumerate() {
            if !seen.insert(j) {
                return bad(format!("duplicate joint {j:?}"));
            }
            let (lo, hi) = self.position_limits[i];
            let ok = self.kp[i] >= 0.0
                && self.kd[i] >= 0.0
                && self.torque_limit[i] > 0.0
                && lo < hi
                && self.inertia[i] > 0.0
                && self.damping[i] >= 0.0
                && [self.kp[i], self.kd[i], self.torque_limit[i], lo, hi, self.inertia[i], self.damping[i]]
                    .iter()
                    .all(|v| v.is_finite());
            if !ok {
                return bad(format!("joint {j:?} has invalid gains or limits"));
            }
        }
        if !(self.state_rate_hz.is_finite() && self.state_rate_hz > 0.0) {
            return bad(format!("state_rate_hz {} must be positive", self.state_rate_hz));
        }
        Ok(())
    }

    /// Parses the spec file format:
    ///
    /// ```text
    /// [platform]
    /// name = biped
    /// state_rate_hz = 500
    /// inertia = 1.0
    /// damping = 0.1
    /// clock_offset_ns = 0
    ///
    /// [joints]
    /// # name kp kd tau_max lo hi
    /// hip_l 60 2 80 -1.2 1.2
    /// ```
    pub fn parse(text: &str) -> Result<Self, PlatformError> {
        let mut spec = PlatformSpec::uniform("platform", &[], 0.0, 0.0, 1.0, (-1.0, 1.0));
        let (mut inertia, mut damping) = (DEFAULT_INERTIA, DEFAULT_DAMPING);
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| PlatformError::Parse {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name.trim() {
                    s @ ("platform" | "joints") => section = Some(s.to_string()),
                    other => return Err(err(format!("unknown section [{other}]"))),
                }
                continue;
            }
            match section.as_deref() {
                Some("platform") => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
                    let (k, v) = (k.trim(), v.trim());
                    let num = || v.parse::<f64>().map_err(|_| err(format!("{k}: bad number {v:?}")));
                    match k {
                        "name" => spec.name = v.to_string(),
                        "state_rate_hz" => spec.state_rate_hz = num()?,
                        "inertia" => inertia = num()?,
                        "damping" => damping = num()?,
                        "clock_offset_ns" => {
                            spec.clock_offset_ns = v.parse().map_err(|_| err(format!("{k}: bad integer {v:?}")))?
                        }
                        other => return Err(err(format!("unknown key {other:?}"))),
                    }
                }
                Some("joints") => {
                    let cols: Vec<&str> = line.split_whitespace().collect();
                    if cols.len() != 6 {
                        return Err(err(format!(
                            "joint line needs 6 columns (name kp kd tau_max lo hi), got {}",
                            cols.len()
                        )));
                    }
                    let mut nums = [0.0; 5];
                    for (slot, c) in nums.iter_mut().zip(&cols[1..]) {
                        *slot = c.parse().map_err(|_| err(format!("bad number {c:?}")))?;
                    }
                    spec.joint_names.push(cols[0].to_string());
                    spec.kp.push(nums[0]);
                    spec.kd.push(nums[1]);
                    spec.torque_limit.push(nums[2]);
                    spec.position_limits.push((nums[3], nums[4]));
                }
                _ => return Err(err("content before the first section".into())),
            }
        }
        spec.inertia = vec![inertia; spec.dof()];
        spec.damping = vec![damping; spec.dof()];
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, PlatformError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlatformError::SpecInvalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Renders the spec in the file format. Per-joint inertia and damping are
    /// written as the value of the first joint.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[platform]\n");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "state_rate_hz = {}", self.state_rate_hz);
        let _ = writeln!(s, "inertia = {}", self.inertia.first().copied().unwrap_or(DEFAULT_INERTIA));
        let _ = writeln!(s, "damping = {}", self.damping.first().copied().unwrap_or(DEFAULT_DAMPING));
        let _ = writeln!(s, "clock_offset_ns = {}", self.clock_offset_ns);
        s.push_str("\n[joints]\n# name kp kd tau_max lo hi\n");
        for i in 0..self.dof() {
            let (lo, hi) = self.position_limits[i];
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                self.joint_names[i], self.kp[i], self.kd[i], self.torque_limit[i], lo, hi
            );
        }
        s
    }

    /// Reorders every per-joint field so that entry `i` comes from `gather[i]`.
    pub fn permuted(&self, gather: &[usize]) -> Self {
        fn pick<T: Clone>(v: &[T], g: &[usize]) -> Vec<T> {
            g.iter().map(|&i| v[i].clone()).collect()
        }
        PlatformSpec {
            joint_names: pick(&self.joint_names, gather),
            kp: pick(&self.kp, gather),
            kd: pick(&self.kd, gather),
            torque_limit: pick(&self.torque_limit, gather),
            position_limits: pick(&self.position_limits, gather),
            inertia: pick(&self.inertia, gather),
            damping: pick(&self.damping, gather),
            ..self.clone()
        }
    }
}

/// Joint-order correspondence between a workflow and a platform.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `platform[i] = workflow[to_platform.gather[i]]`.
    pub to_platform: IndexMap,
    /// `workflow[j] = platform[to_workflow.gather[j]]`.
    pub to_workflow: IndexMap,
    /// The platform spec with all per-joint fields in workflow order.
    pub workflow_view: PlatformSpec,
}

impl Alignment {
    pub fn is_identity(&self) -> bool {
        self.to_platform.gather.iter().enumerate().all(|(i, &g)| i == g)
    }
}

/// Matches joints by name. Both sides must name the same set of joints.
pub fn align_params(workflow_joints: &[String], platform: &PlatformSpec) -> Result<Alignment, PlatformError> {
    let missing: Vec<String> = workflow_joints
        .iter()
        .filter(|j| !platform.joint_names.contains(j))
        .cloned()
        .collect();
    let extra: Vec<String> = platform
        .joint_names
        .iter()
        .filter(|j| !workflow_joints.contains(j))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() || workflow_joints.len() != platform.dof() {
        return Err(PlatformError::JointMismatch { missing, extra });
    }
    let position = |names: &[String], j: &String| names.iter().position(|n| n == j).expect("checked above");
    let to_platform: Vec<usize> = platform
        .joint_names
        .iter()
        .map(|j| position(workflow_joints, j))
        .collect();
    let to_workflow: Vec<usize> = workflow_joints
        .iter()
        .map(|j| position(&platform.joint_names, j))
        .collect();
    Ok(Alignment {
        workflow_view: platform.permuted(&to_workflow),
        to_platform: IndexMap::gather("workflow", "platform", to_platform),
        to_workflow: IndexMap::gather("platform", "workflow", to_workflow),
    })
}
