use std::fmt;
use std::time::{Duration, Instant};

use super::graph::StepCtx;
use super::{BlockError, Node, StepTrace};
use crate::state::StateSpace;

/// Fixed-rate, single-threaded driver for an execution tree.
///
/// Tick `n` is due at `start + n * period`. A tick whose step finishes after
/// the next deadline counts as an overrun; the following tick then starts
/// immediately instead of being skipped.
#[derive(Debug, Clone)]
pub struct Executor {
    rate_hz: f64,
    max_ticks: Option<u64>,
    checked: bool,
    trace: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub ticks: u64,
    pub wall_time: Duration,
    pub overruns: u64,
    /// Longest single tick, measured from its deadline to the end of its step.
    pub max_tick_time: Duration,
    /// The root reported done (as opposed to hitting `max_ticks`).
    pub finished: bool,
    pub trace: Option<StepTrace>,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ticks={} wall_time={:.3}s overruns={} max_tick={:.1}us finished={}",
            self.ticks,
            self.wall_time.as_secs_f64(),
            self.overruns,
            self.max_tick_time.as_secs_f64() * 1e6,
            self.finished
        )
    }
}

/// A failed run together with what was executed before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: BlockError,
    pub report: RunReport,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} ticks)", self.error, self.report.ticks)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl Executor {
    pub fn new(rate_hz: f64) -> Self {
        Executor {
            rate_hz,
            max_ticks: None,
            checked: false,
            trace: false,
        }
    }

    pub fn max_ticks(mut self, n: u64) -> Self {
        self.max_ticks = Some(n);
        self
    }

    /// Enforce declared reads/writes on every access.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn period(&self) -> Result<Duration, BlockError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(BlockError::RateInvalid(self.rate_hz));
        }
        Ok(Duration::from_secs_f64(1.0 / self.rate_hz))
    }

    fn offset(&self, ticks: u64) -> Duration {
        Duration::from_secs_f64(ticks as f64 / self.rate_hz)
    }

    /// Validates `root`, then steps it once per period until it is done or
    /// `max_ticks` is reached. Every block is closed afterwards, including on
    /// failure.
    pub fn run(&self, root: &mut Node, space: &StateSpace) -> Result<RunReport, RunError> {
        let fail = |error, report| Err(RunError { error, report });
        if let Err(e) = self.period() {
            return fail(e, RunReport::default());
        }
        let issues = root.validate(space);
        if !issues.is_empty() {
            return fail(BlockError::Invalid(issues), RunReport::default());
        }
        let mut report = RunReport {
            trace: self.trace.then(StepTrace::default),
            ..RunReport::default()
        };
        let start = Instant::now();
        let mut failure = None;
        while self.max_ticks.is_none_or(|m| report.ticks < m) {
            let due = start + self.offset(report.ticks);
            let mut ctx = StepCtx {
                space,
                tick: report.ticks,
                checked: self.checked,
                trace: report.trace.as_mut(),
            };
            let result = root.step(&mut ctx);
            let end = Instant::now();
            report.ticks += 1;
            let deadline = start + self.offset(report.ticks);
            report.max_tick_time = report.max_tick_time.max(end.saturating_duration_since(due));
            if end > deadline {
                report.overruns += 1;
            }
            match result {
                Err(e) => {
                    failure = Some(e);
                    break;
                }
                Ok(true) => {
                    report.finished = true;
                    break;
                }
                Ok(false) => {}
            }
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
        }
        let closed = root.close(space, self.checked);
        report.wall_time = start.elapsed();
        match (failure, closed) {
            (Some(e), _) | (None, Err(e)) => fail(e, report),
            (None, Ok(())) => Ok(report),
        }
    }
}
