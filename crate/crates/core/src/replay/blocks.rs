use std::path::Path;

use super::{Frame, ReplayError, Trajectory, TrajectoryWriter};
use crate::blocks::{BlockError, ControlBlock, StateIo};
use crate::state::{ArrayMeta, StateSpace};

/// Appends one frame of the selected labels per tick. Never done; the footer
/// is written when the block is closed.
pub struct Recorder {
    name: String,
    labels: Vec<String>,
    writer: Option<TrajectoryWriter>,
    sizes: Vec<usize>,
    buf: Vec<u8>,
}

impl Recorder {
    pub fn new(space: &StateSpace, labels: &[String], path: &Path) -> Result<Self, ReplayError> {
        if labels.is_empty() {
            return Err(ReplayError::SpecInvalid("recorder needs at least one label".into()));
        }
        let metas = labels
            .iter()
            .map(|l| space.meta(l).map_err(|_| ReplayError::UnknownLabel(l.clone())))
            .collect::<Result<Vec<ArrayMeta>, _>>()?;
        let sizes: Vec<usize> = metas.iter().map(ArrayMeta::byte_len).collect();
        Ok(Recorder {
            name: "recorder".into(),
            labels: labels.to_vec(),
            writer: Some(TrajectoryWriter::create(path, &metas)?),
            buf: vec![0; sizes.iter().sum()],
            sizes,
        })
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    fn finish(&mut self) -> Result<(), BlockError> {
        match self.writer.take() {
            Some(w) => w.finish().map(|_| ()).map_err(|e| BlockError::failed(&self.name, e)),
            None => Ok(()),
        }
    }
}

impl ControlBlock for Recorder {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &self.labels
    }
    fn writes(&self) -> &[String] {
        &[]
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        let mut at = 0;
        for (label, &size) in self.labels.iter().zip(&self.sizes) {
            io.read_into(label, &mut self.buf[at..at + size])?;
            at += size;
        }
        let ts = io.now_ns();
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| BlockError::failed(&self.name, "recording already finalized"))?;
        writer
            .append_raw(io.tick(), ts, &self.buf)
            .map_err(|e| BlockError::failed(&self.name, e))?;
        Ok(false)
    }
    fn close(&mut self, _io: &StateIo<'_>) -> Result<(), BlockError> {
        self.finish()
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

/// Writes frame k of a recording on its k-th step; done on the step that
/// writes the last frame, or on the first step of an empty recording.
pub struct Replayer {
    name: String,
    labels: Vec<String>,
    columns: Vec<usize>,
    frames: Vec<Frame>,
    cursor: usize,
}

impl Replayer {
    /// Replays every recorded label.
    pub fn open(path: &Path, space: &StateSpace) -> Result<Self, ReplayError> {
        Self::from_trajectory(Trajectory::load(path)?, space, None)
    }

    /// Replays only `only` (all labels when `None`). Each replayed label must
    /// be registered in `space` with the recorded dtype and shape.
    pub fn from_trajectory(traj: Trajectory, space: &StateSpace, only: Option<&[String]>) -> Result<Self, ReplayError> {
        let mut labels = Vec::new();
        let mut columns = Vec::new();
        if let Some(only) = only {
            for l in only {
                if traj.label_index(l).is_none() {
                    return Err(ReplayError::UnknownLabel(l.clone()));
                }
            }
        }
        for (i, m) in traj.labels.iter().enumerate() {
            if only.is_some_and(|o| !o.contains(&m.label)) {
                continue;
            }
            let live = space
                .meta(&m.label)
                .map_err(|_| ReplayError::UnknownLabel(m.label.clone()))?;
            if live != *m {
                return Err(ReplayError::SchemaMismatch {
                    label: m.label.clone(),
                    recorded: format!("{} {:?}", m.dtype, m.shape),
                    live: format!("{} {:?}", live.dtype, live.shape),
                });
            }
            labels.push(m.label.clone());
            columns.push(i);
        }
        Ok(Replayer {
            name: "replayer".into(),
            labels,
            columns,
            frames: traj.frames,
            cursor: 0,
        })
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl ControlBlock for Replayer {
    fn name(&self) -> &str {
        &self.name
    }
    fn reads(&self) -> &[String] {
        &[]
    }
    fn writes(&self) -> &[String] {
        &self.labels
    }
    fn is_stateful(&self) -> bool {
        true
    }
    fn step(&mut self, io: &StateIo<'_>) -> Result<bool, BlockError> {
        let Some(frame) = self.frames.get(self.cursor) else {
            return Ok(true);
        };
        for (label, &col) in self.labels.iter().zip(&self.columns) {
            io.write_values(label, &frame.values[col])?;
        }
        self.cursor += 1;
        Ok(self.cursor >= self.frames.len())
    }
    fn restart(&mut self) {
        self.cursor = 0;
    }
}
