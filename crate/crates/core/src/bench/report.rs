use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use super::{BenchError, LatencySample, Op};

/// Summary statistics of one op, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpStats {
    pub n: usize,
    pub mean_ns: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_ns: f64,
    pub p50_ns: i64,
    pub p99_ns: i64,
    pub min_ns: i64,
    pub max_ns: i64,
}

impl OpStats {
    /// Percentiles use the nearest-rank definition.
    pub fn from_values(values: &[i64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(OpStats {
            n,
            mean_ns: mean,
            std_ns: var.sqrt(),
            p50_ns: nearest_rank(&sorted, 50.0),
            p99_ns: nearest_rank(&sorted, 99.0),
            min_ns: sorted[0],
            max_ns: sorted[n - 1],
        })
    }

    pub fn of(samples: &[LatencySample], op: Op) -> Option<Self> {
        let values: Vec<i64> = samples.iter().filter(|s| s.op == op).map(|s| s.value_ns).collect();
        Self::from_values(&values)
    }
}

fn nearest_rank(sorted: &[i64], p: f64) -> i64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub backend: String,
    pub platform: Option<String>,
    pub producer_rate_hz: f64,
    pub control_rate_hz: Option<f64>,
    pub duration: Duration,
    pub inferred_offset_ns: Option<i64>,
    pub recv: Option<OpStats>,
    pub send: Option<OpStats>,
    pub e2e: Option<OpStats>,
}

impl LatencyReport {
    pub fn new(backend: &str, producer_rate_hz: f64) -> Self {
        LatencyReport {
            backend: backend.to_string(),
            platform: None,
            producer_rate_hz,
            control_rate_hz: None,
            duration: Duration::ZERO,
            inferred_offset_ns: None,
            recv: None,
            send: None,
            e2e: None,
        }
    }

    /// Recomputes every op's statistics from raw samples.
    pub fn with_samples(mut self, samples: &[LatencySample]) -> Self {
        self.recv = OpStats::of(samples, Op::Recv);
        self.send = OpStats::of(samples, Op::Send);
        self.e2e = OpStats::of(samples, Op::EndToEnd);
        self
    }

    pub fn stats(&self, op: Op) -> Option<&OpStats> {
        match op {
            Op::Recv => self.recv.as_ref(),
            Op::Send => self.send.as_ref(),
            Op::EndToEnd => self.e2e.as_ref(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "backend: {}", self.backend);
        if let Some(p) = &self.platform {
            let _ = writeln!(out, "platform: {p}");
        }
        let _ = writeln!(out, "producer_rate_hz: {}", self.producer_rate_hz);
        if let Some(r) = self.control_rate_hz {
            let _ = writeln!(out, "control_rate_hz: {r}");
        }
        let _ = writeln!(out, "duration_s: {:.3}", self.duration.as_secs_f64());
        if let Some(o) = self.inferred_offset_ns {
            let _ = writeln!(out, "inferred_offset_ns: {o}");
        }
        for op in Op::ALL {
            if let Some(s) = self.stats(op) {
                let _ = writeln!(
                    out,
                    "{}: n={} mean_ns={:.1} std_ns={:.1} p50_ns={} p99_ns={} min_ns={} max_ns={}",
                    op.as_str(),
                    s.n,
                    s.mean_ns,
                    s.std_ns,
                    s.p50_ns,
                    s.p99_ns,
                    s.min_ns,
                    s.max_ns
                );
            }
        }
        out
    }
}

/// Rows Recv / Send / End-to-end, one column per report, cells as
/// `mean ± std (p50)` in microseconds.
pub fn render_table(reports: &[LatencyReport]) -> String {
    let cell = |s: Option<&OpStats>| match s {
        Some(s) => format!(
            "{:.2} ± {:.2} ({:.2})",
            s.mean_ns / 1e3,
            s.std_ns / 1e3,
            s.p50_ns as f64 / 1e3
        ),
        None => "-".to_string(),
    };
    let mut rows = vec![std::iter::once("µs, mean ± std (p50)".to_string())
        .chain(reports.iter().map(|r| match &r.platform {
            Some(p) => format!("{} / {p}", r.backend),
            None => r.backend.clone(),
        }))
        .collect::<Vec<_>>()];
    for op in Op::ALL {
        rows.push(
            std::iter::once(op.title().to_string())
                .chain(reports.iter().map(|r| cell(r.stats(op))))
                .collect(),
        );
    }
    let cols = reports.len() + 1;
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    out
}

pub fn write_raw_csv(path: &Path, samples: &[LatencySample]) -> Result<(), BenchError> {
    let mut text = String::from("op,tick,value_ns\n");
    for s in samples {
        let _ = writeln!(text, "{},{},{}", s.op.as_str(), s.tick, s.value_ns);
    }
    std::fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<LatencySample>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    if lines.next() != Some("op,tick,value_ns") {
        return Err(BenchError::Parse("missing header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || BenchError::Parse(format!("line {}: {line:?}", i + 2));
            let mut parts = line.split(',');
            let op = parts.next().ok_or_else(bad)?.parse()?;
            let tick = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let value_ns = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            Ok(LatencySample { op, tick, value_ns })
        })
        .collect()
}
