use super::{BlockError, ControlBlock, StateIo};

type StepFn = Box<dyn FnMut(&StateIo<'_>) -> Result<bool, BlockError> + Send>;

/// A block defined by a closure.
pub struct FnBlock {
    name: String,
    reads: Vec<String>,
    writes: Vec<String>,
    stateful: bool,
    f: StepFn,
}

impl FnBlock {
    pub fn new(
        name: &str,
        reads: &[&str],
        writes: &[&str],
        f: impl FnMut(&StateIo<'_>) -> Result<bool, BlockError> + Send + 'static,
    ) -> Self {
        FnBlock {
            name: name.to_string(),
            reads: reads.iter().map(|s| s.to_string()).collect(),
            writes: writes.iter().map(|s| s.to_string()).collect(),
            stateful: false,
            f: Box::new(f),
        }
    }

    pub fn stateful(mut self) -> Self {
        self.stateful = true;
        self
    }
}

impl ControlBlock for FnBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.reads
    }
    fn writes(&self) -> &[String] {
        &self.writes
    }
    fn is_stateful(&self) -> bool {
        self.stateful
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        (self.f)(io)
    }
}

/// `label := label + 1`, done once the value reaches `limit`.
pub struct Counter {
    name: String,
    labels: Vec<String>,
    limit: Option<f64>,
}

impl Counter {
    pub fn new(name: &str, label: &str, limit: Option<f64>) -> Self {
        Counter {
            name: name.to_string(),
            labels: vec![label.to_string()],
            limit,
        }
    }
}

impl ControlBlock for Counter {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.labels
    }
    fn writes(&self) -> &[String] {
        &self.labels
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        let mut v = io.read_f64(&self.labels[0])?;
        v.iter_mut().for_each(|x| *x += 1.0);
        io.write_f64(&self.labels[0], &v)?;
        Ok(self.limit.is_some_and(|l| v[0] >= l))
    }
}

/// Identity position control: copies `source` (e.g. `q`) into `target`
/// (e.g. `q_des`). Never done.
pub struct IdentityControl {
    name: String,
    reads: Vec<String>,
    writes: Vec<String>,
}

impl IdentityControl {
    pub fn new(name: &str, source: &str, target: &str) -> Self {
        IdentityControl {
            name: name.to_string(),
            reads: vec![source.to_string()],
            writes: vec![target.to_string()],
        }
    }
}

impl ControlBlock for IdentityControl {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.reads
    }
    fn writes(&self) -> &[String] {
        &self.writes
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        let v = io.read_f64(&self.reads[0])?;
        io.write_f64(&self.writes[0], &v)?;
        Ok(false)
    }
}

/// Writes `center + amplitude * sin(2 pi freq_hz k dt)` to every element of
/// `label` on its k-th step. Done after `ticks` steps if given.
pub struct Sine {
    name: String,
    writes: Vec<String>,
    pub center: f64,
    pub amplitude: f64,
    pub freq_hz: f64,
    pub dt: f64,
    pub ticks: Option<u64>,
    k: u64,
}

impl Sine {
    pub fn new(name: &str, label: &str, amplitude: f64, freq_hz: f64, dt: f64) -> Self {
        Sine {
            name: name.to_string(),
            writes: vec![label.to_string()],
            center: 0.0,
            amplitude,
            freq_hz,
            dt,
            ticks: None,
            k: 0,
        }
    }
}

impl ControlBlock for Sine {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &[]
    }
    fn writes(&self) -> &[String] {
        &self.writes
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        let len = io.meta(&self.writes[0])?.len();
        let t = self.k as f64 * self.dt;
        let v = self.center + self.amplitude * (std::f64::consts::TAU * self.freq_hz * t).sin();
        io.write_f64(&self.writes[0], &vec![v; len])?;
        self.k += 1;
        Ok(self.ticks.is_some_and(|n| self.k >= n))
    }
    fn restart(&mut self) {
        self.k = 0;
    }
}
