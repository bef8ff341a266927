use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ReplayError, Trajectory};

/// Which shifts the unfolded loss searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftRange {
    /// `j` in `[-J, J]` for both terms.
    #[default]
    Signed,
    /// `j` in `[0, J]`: the forward term shifts `T`, the backward term `T_hat`.
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UnfoldOptions {
    /// Use the squared per-frame norm instead of the plain L2 norm.
    pub squared: bool,
    pub shifts: ShiftRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mse {
    pub per_element: Vec<f64>,
    pub aggregate: f64,
}

impl Mse {
    /// Element indices ordered from largest to smallest error.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.per_element.len()).collect();
        idx.sort_by(|&a, &b| self.per_element[b].total_cmp(&self.per_element[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unfolded {
    pub loss: f64,
    pub forward_term: f64,
    pub backward_term: f64,
    /// argmin of `mean_i |T[i+j] - T_hat[i]|`.
    pub forward_shift: i64,
    /// argmin of `mean_i |T[i] - T_hat[i+j]|`.
    pub backward_shift: i64,
}

fn check_dims(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, ReplayError> {
    let dim = a.first().or(b.first()).map_or(0, Vec::len);
    for f in a.iter().chain(b) {
        if f.len() != dim {
            return Err(ReplayError::LengthMismatch {
                expected: dim,
                got: f.len(),
            });
        }
    }
    Ok(dim)
}

/// Per element `e`: mean over frames of `(a[i][e] - b[i][e])^2`; the
/// aggregate is the mean over elements.
pub fn stepwise_mse_series(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Mse, ReplayError> {
    if a.len() != b.len() {
        return Err(ReplayError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dim = check_dims(a, b)?;
    let n = a.len().max(1) as f64;
    let mut per_element = vec![0.0; dim];
    for (fa, fb) in a.iter().zip(b) {
        for (acc, (x, y)) in per_element.iter_mut().zip(fa.iter().zip(fb)) {
            *acc += (x - y) * (x - y);
        }
    }
    per_element.iter_mut().for_each(|v| *v /= n);
    let aggregate = per_element.iter().sum::<f64>() / dim.max(1) as f64;
    Ok(Mse {
        per_element,
        aggregate,
    })
}

pub fn stepwise_mse(t: &Trajectory, t_hat: &Trajectory, label: &str) -> Result<Mse, ReplayError> {
    let (a, b) = paired_series(t, t_hat, label)?;
    stepwise_mse_series(&a, &b)
}

fn frame_norm(x: &[f64], y: &[f64], squared: bool) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if squared {
        s
    } else {
        s.sqrt()
    }
}

/// `(1/n_j) * sum_i |x[i+j] - y[i]|` over the `n_j` indices where both exist.
fn shifted_term(x: &[Vec<f64>], y: &[Vec<f64>], j: i64, squared: bool) -> f64 {
    let lo = (-j).max(0) as usize;
    let hi = (y.len() as i64).min(x.len() as i64 - j).max(0) as usize;
    let mut sum = 0.0;
    for i in lo..hi {
        sum += frame_norm(&x[(i as i64 + j) as usize], &y[i], squared);
    }
    sum / (hi - lo) as f64
}

fn shifts(max_shift: usize, range: ShiftRange) -> impl Iterator<Item = i64> {
    let j = max_shift as i64;
    (0..=j).flat_map(move |k| {
        let neg = (range == ShiftRange::Signed && k > 0).then_some(-k);
        std::iter::once(k).chain(neg)
    })
}

fn best(x: &[Vec<f64>], y: &[Vec<f64>], max_shift: usize, opts: UnfoldOptions) -> (f64, i64) {
    let mut out = (f64::INFINITY, 0);
    for j in shifts(max_shift, opts.shifts) {
        let t = shifted_term(x, y, j, opts.squared);
        if t < out.0 {
            out = (t, j);
        }
    }
    out
}

/// The two-sided shift-minimized discrepancy
/// `min_j mean_i |T[i+j] - T_hat[i]| + min_j mean_i |T[i] - T_hat[i+j]|`,
/// each shifted sum restricted to the overlap and normalized by its length.
/// Ties go to the smallest `|j|`.
pub fn unfolded_loss_series(
    t: &[Vec<f64>],
    t_hat: &[Vec<f64>],
    max_shift: usize,
    opts: UnfoldOptions,
) -> Result<Unfolded, ReplayError> {
    let min_len = t.len().min(t_hat.len());
    if max_shift >= min_len {
        return Err(ReplayError::WindowTooLarge { max_shift, min_len });
    }
    check_dims(t, t_hat)?;
    let (forward_term, forward_shift) = best(t, t_hat, max_shift, opts);
    let (backward_term, backward_shift) = best(t_hat, t, max_shift, opts);
    Ok(Unfolded {
        loss: forward_term + backward_term,
        forward_term,
        backward_term,
        forward_shift,
        backward_shift,
    })
}

pub fn unfolded_loss(
    t: &Trajectory,
    t_hat: &Trajectory,
    label: &str,
    max_shift: usize,
    opts: UnfoldOptions,
) -> Result<Unfolded, ReplayError> {
    let (a, b) = paired_series(t, t_hat, label)?;
    unfolded_loss_series(&a, &b, max_shift, opts)
}

/// `min(n / 4, 50)` frames.
pub fn default_max_shift(n_frames: usize) -> usize {
    (n_frames / 4).min(50)
}

fn paired_series(t: &Trajectory, t_hat: &Trajectory, label: &str) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ReplayError> {
    let (ma, mb) = match (t.meta(label), t_hat.meta(label)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ReplayError::UnknownLabel(label.to_string())),
    };
    if ma.dtype != mb.dtype || ma.shape != mb.shape {
        return Err(ReplayError::SchemaMismatch {
            label: label.to_string(),
            recorded: format!("{} {:?}", ma.dtype, ma.shape),
            live: format!("{} {:?}", mb.dtype, mb.shape),
        });
    }
    Ok((
        t.series(label).expect("label present"),
        t_hat.series(label).expect("label present"),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGap {
    pub label: String,
    pub mse: Mse,
    pub unfolded: Unfolded,
    /// Ticks of the compared frames, taken from `T`.
    pub ticks: Vec<u64>,
    /// `abs_error[e][i] = |T[i][e] - T_hat[i][e]|`.
    pub abs_error: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub per_label: Vec<LabelGap>,
    pub n_frames_compared: usize,
    pub max_shift: usize,
    pub options: UnfoldOptions,
}

/// Compares every label the two trajectories share. Stepwise metrics use the
/// first `min(len)` frames; the unfolded loss uses both trajectories whole.
/// `max_shift` defaults to [`default_max_shift`], capped below the shorter
/// length.
pub fn analyze(
    t: &Trajectory,
    t_hat: &Trajectory,
    max_shift: Option<usize>,
    options: UnfoldOptions,
) -> Result<GapReport, ReplayError> {
    let common: Vec<&str> = t
        .labels
        .iter()
        .filter(|m| t_hat.meta(&m.label).is_some())
        .map(|m| m.label.as_str())
        .collect();
    if common.is_empty() {
        return Err(ReplayError::NoCommonLabels);
    }
    let n = t.len().min(t_hat.len());
    let max_shift = max_shift.unwrap_or_else(|| default_max_shift(n).min(n.saturating_sub(1)));
    let mut per_label = Vec::with_capacity(common.len());
    for label in common {
        let (a, b) = paired_series(t, t_hat, label)?;
        let mse = stepwise_mse_series(&a[..n], &b[..n])?;
        let unfolded = unfolded_loss_series(&a, &b, max_shift, options)?;
        let dim = mse.per_element.len();
        let abs_error = (0..dim)
            .map(|e| (0..n).map(|i| (a[i][e] - b[i][e]).abs()).collect())
            .collect();
        per_label.push(LabelGap {
            label: label.to_string(),
            mse,
            unfolded,
            ticks: t.frames[..n].iter().map(|f| f.tick).collect(),
            abs_error,
        });
    }
    Ok(GapReport {
        per_label,
        n_frames_compared: n,
        max_shift,
        options,
    })
}

impl GapReport {
    pub fn is_zero(&self) -> bool {
        self.per_label
            .iter()
            .all(|g| g.mse.aggregate == 0.0 && g.unfolded.loss == 0.0)
    }

    pub fn label(&self, label: &str) -> Option<&LabelGap> {
        self.per_label.iter().find(|g| g.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let norm = if self.options.squared { "squared L2" } else { "L2" };
        let range = match self.options.shifts {
            ShiftRange::Signed => "signed",
            ShiftRange::NonNegative => "non-negative",
        };
        let _ = writeln!(
            s,
            "frames compared: {}\nmax shift: {} ({range} shifts, {norm} frame norm)",
            self.n_frames_compared, self.max_shift
        );
        for g in &self.per_label {
            let u = &g.unfolded;
            let _ = writeln!(s, "\n[{}]", g.label);
            let _ = writeln!(s, "stepwise_mse = {:.6e}", g.mse.aggregate);
            let _ = writeln!(
                s,
                "unfolded_loss = {:.6e}  (forward {:.6e} at j={}, backward {:.6e} at j={})",
                u.loss, u.forward_term, u.forward_shift, u.backward_term, u.backward_shift
            );
            let _ = writeln!(s, "element  mse");
            for e in g.mse.ranked() {
                let _ = writeln!(s, "{e:>7}  {:.6e}", g.mse.per_element[e]);
            }
        }
        s
    }

    /// Writes `report.txt` and one `<label>.e<k>.csv` per element into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<Vec<PathBuf>, ReplayError> {
        std::fs::create_dir_all(dir).map_err(|e| ReplayError::io(dir, e))?;
        let mut written = Vec::new();
        let report = dir.join("report.txt");
        std::fs::write(&report, self.to_text()).map_err(|e| ReplayError::io(&report, e))?;
        written.push(report);
        for g in &self.per_label {
            for (e, series) in g.abs_error.iter().enumerate() {
                let mut csv = String::from("tick,abs_error\n");
                for (tick, v) in g.ticks.iter().zip(series) {
                    let _ = writeln!(csv, "{tick},{v}");
                }
                let path = dir.join(format!("{}.e{e}.csv", g.label));
                std::fs::write(&path, csv).map_err(|err| ReplayError::io(&path, err))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}
