use super::StateError;

/// Vectorized remapping from one array into another:
/// `target[i] = source[gather[i]] * scale[i] + offset[i]`.
///
/// With unit scale and zero offset the map is a pure gather and copies raw
/// element bytes, so values are preserved bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub source_label: String,
    pub target_label: String,
    pub gather: Vec<usize>,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl IndexMap {
    pub fn gather(source: &str, target: &str, gather: Vec<usize>) -> Self {
        let n = gather.len();
        IndexMap {
            source_label: source.to_string(),
            target_label: target.to_string(),
            gather,
            scale: vec![1.0; n],
            offset: vec![0.0; n],
        }
    }

    pub fn identity(source: &str, target: &str, len: usize) -> Self {
        Self::gather(source, target, (0..len).collect())
    }

    /// Adds a per-element affine transform, e.g. for unit conversion.
    pub fn with_affine(mut self, scale: Vec<f64>, offset: Vec<f64>) -> Self {
        self.scale = scale;
        self.offset = offset;
        self
    }

    pub fn len(&self) -> usize {
        self.gather.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gather.is_empty()
    }

    pub fn is_pure_gather(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.offset.iter().all(|&o| o == 0.0)
    }

    /// True when `gather` visits every source index exactly once.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.gather.len()];
        self.gather.iter().all(|&g| {
            g < seen.len() && !std::mem::replace(&mut seen[g], true)
        })
    }

    /// Inverse of a pure permutation map, with source and target swapped.
    pub fn inverse(&self) -> Option<IndexMap> {
        if !self.is_permutation() || !self.is_pure_gather() {
            return None;
        }
        let mut inv = vec![0; self.gather.len()];
        for (i, &g) in self.gather.iter().enumerate() {
            inv[g] = i;
        }
        Some(IndexMap::gather(&self.target_label, &self.source_label, inv))
    }

    pub(crate) fn check(&self, source_len: usize, target_len: usize) -> Result<(), StateError> {
        if self.scale.len() != self.gather.len() || self.offset.len() != self.gather.len() {
            return Err(StateError::LengthMismatch {
                label: self.target_label.clone(),
                expected: self.gather.len(),
                got: self.scale.len().min(self.offset.len()),
            });
        }
        if target_len != self.gather.len() {
            return Err(StateError::LengthMismatch {
                label: self.target_label.clone(),
                expected: target_len,
                got: self.gather.len(),
            });
        }
        if let Some(&index) = self.gather.iter().find(|&&g| g >= source_len) {
            return Err(StateError::GatherOutOfBounds { index, source_len });
        }
        Ok(())
    }

    /// Applies the map to a plain vector. Elements with unit scale and zero
    /// offset are copied untouched.
    pub fn apply_f64(&self, source: &[f64]) -> Vec<f64> {
        self.gather
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&g, (&s, &o))| {
                let v = source[g];
                if s == 1.0 && o == 0.0 {
                    v
                } else {
                    v * s + o
                }
            })
            .collect()
    }
}
