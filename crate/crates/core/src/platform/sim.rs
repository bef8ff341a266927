use std::collections::VecDeque;

use super::{PlatformError, PlatformSpec};

/// Joint-space state of the simulated chain, in platform order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimJointState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub tau_applied: Vec<f64>,
    pub sim_time_ns: u64,
}

impl SimJointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        SimJointState {
            q,
            dq: vec![0.0; n],
            tau_applied: vec![0.0; n],
            sim_time_ns: 0,
        }
    }

    pub fn kinetic_energy(&self, spec: &PlatformSpec) -> f64 {
        self.dq
            .iter()
            .zip(&spec.inertia)
            .map(|(v, i)| 0.5 * i * v * v)
            .sum()
    }
}

fn check_finite(what: &'static str, v: &[f64], n: usize) -> Result<(), PlatformError> {
    if v.len() != n {
        return Err(PlatformError::SpecInvalid(format!("{what} has {} entries, expected {n}", v.len())));
    }
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(PlatformError::NonFiniteInput(what))
    }
}

/// One semi-implicit Euler step of independent PD-driven joints:
///
/// ```text
/// tau = clamp(kp (q_des - q) + kd (dq_des - dq) + tau_ff, ±torque_limit)
/// dq += (tau - damping dq) / inertia * dt
/// q  += dq * dt
/// ```
///
/// `q` is clamped to the position limits and `dq` zeroed at a stop.
pub fn sim_step(
    state: &SimJointState,
    spec: &PlatformSpec,
    q_des: &[f64],
    dq_des: &[f64],
    tau_ff: &[f64],
    dt: f64,
) -> Result<SimJointState, PlatformError> {
    let n = spec.dof();
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PlatformError::NonFiniteInput("dt"));
    }
    check_finite("q", &state.q, n)?;
    check_finite("dq", &state.dq, n)?;
    check_finite("q_des", q_des, n)?;
    check_finite("dq_des", dq_des, n)?;
    check_finite("tau_ff", tau_ff, n)?;
    check_finite("kp", &spec.kp, n)?;
    check_finite("kd", &spec.kd, n)?;
    let mut next = SimJointState {
        q: state.q.clone(),
        dq: state.dq.clone(),
        tau_applied: vec![0.0; n],
        sim_time_ns: state.sim_time_ns + (dt * 1e9).round() as u64,
    };
    for i in 0..n {
        let lim = spec.torque_limit[i];
        let demand = spec.kp[i] * (q_des[i] - state.q[i]) + spec.kd[i] * (dq_des[i] - state.dq[i]) + tau_ff[i];
        let tau = demand.clamp(-lim, lim);
        let dq = state.dq[i] + (tau - spec.damping[i] * state.dq[i]) / spec.inertia[i] * dt;
        let q = state.q[i] + dq * dt;
        let (lo, hi) = spec.position_limits[i];
        next.tau_applied[i] = tau;
        if q < lo || q > hi {
            next.q[i] = q.clamp(lo, hi);
            next.dq[i] = 0.0;
        } else {
            next.q[i] = q;
            next.dq[i] = dq;
        }
    }
    Ok(next)
}

/// Commanded targets in platform order.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub q_des: Vec<f64>,
    pub dq_des: Vec<f64>,
    pub tau_ff: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl Command {
    pub const ROWS: usize = 5;

    pub fn from_rows(packed: &[f64], dof: usize) -> Self {
        let row = |r: usize| packed[r * dof..(r + 1) * dof].to_vec();
        Command {
            q_des: row(0),
            dq_des: row(1),
            tau_ff: row(2),
            kp: row(3),
            kd: row(4),
        }
    }

    pub fn to_rows(&self) -> Vec<f64> {
        [&self.q_des, &self.dq_des, &self.tau_ff, &self.kp, &self.kd]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

/// The device behind a platform adapter, advanced one platform tick at a time.
pub(crate) trait Device: Send {
    /// `None` means no command has been sent yet.
    fn tick(&mut self, cmd: Option<&Command>, dt: f64) -> Result<(), PlatformError>;
    fn q(&self) -> &[f64];
    fn dq(&self) -> &[f64];
}

pub(crate) struct SimDevice {
    active: PlatformSpec,
    pub(crate) state: SimJointState,
}

impl SimDevice {
    pub(crate) fn new(spec: &PlatformSpec, q0: Vec<f64>) -> Self {
        let q = q0
            .iter()
            .zip(&spec.position_limits)
            .map(|(&q, &(lo, hi))| q.clamp(lo, hi))
            .collect();
        SimDevice {
            active: spec.clone(),
            state: SimJointState::at_rest(q),
        }
    }
}

impl Device for SimDevice {
    fn tick(&mut self, cmd: Option<&Command>, dt: f64) -> Result<(), PlatformError> {
        self.state = match cmd {
            Some(c) => {
                self.active.kp.clone_from(&c.kp);
                self.active.kd.clone_from(&c.kd);
                sim_step(&self.state, &self.active, &c.q_des, &c.dq_des, &c.tau_ff, dt)?
            }
            // passive: the PD terms cancel and only damping acts
            None => {
                let zeros = vec![0.0; self.state.q.len()];
                sim_step(&self.state, &self.active, &self.state.q, &self.state.dq, &zeros, dt)?
            }
        };
        Ok(())
    }
    fn q(&self) -> &[f64] {
        &self.state.q
    }
    fn dq(&self) -> &[f64] {
        &self.state.dq
    }
}

/// Echoes `q_des`/`dq_des` back as `q`/`dq` after `delay` platform ticks.
pub(crate) struct LoopbackDevice {
    delay: usize,
    queue: VecDeque<(Vec<f64>, Vec<f64>)>,
    q: Vec<f64>,
    dq: Vec<f64>,
}

impl LoopbackDevice {
    pub(crate) fn new(q0: Vec<f64>, delay: usize) -> Self {
        let n = q0.len();
        LoopbackDevice {
            delay,
            queue: VecDeque::with_capacity(delay + 1),
            q: q0,
            dq: vec![0.0; n],
        }
    }
}

impl Device for LoopbackDevice {
    fn tick(&mut self, cmd: Option<&Command>, _dt: f64) -> Result<(), PlatformError> {
        let Some(c) = cmd else { return Ok(()) };
        check_finite("q_des", &c.q_des, self.q.len())?;
        check_finite("dq_des", &c.dq_des, self.q.len())?;
        self.queue.push_back((c.q_des.clone(), c.dq_des.clone()));
        if self.queue.len() > self.delay {
            let (q, dq) = self.queue.pop_front().expect("nonempty");
            self.q = q;
            self.dq = dq;
        }
        Ok(())
    }
    fn q(&self) -> &[f64] {
        &self.q
    }
    fn dq(&self) -> &[f64] {
        &self.dq
    }
}
