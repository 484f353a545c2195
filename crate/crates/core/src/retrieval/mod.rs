//! Segmentation by retrieval: a pool of labeled reference embeddings, exact
//! k-nearest-neighbor voting, online adaptation, incremental insertion and
//! upsampling of grid votes to full resolution.
//!
//! Distances are squared Euclidean. Neighbor lists are ordered by
//! `(distance, pool index)`, so insertion order breaks every tie.

mod adapt;
mod knn;
mod semisup;
mod table;
mod upsample;

pub use adapt::{online_adapt, AdaptReport};
pub use knn::{
    classify_cell, classify_grid, knn_brute_force, knn_grid, knn_query, majority_label, vote_fractions,
    Classification, LabelGrid, Neighbor, NeighborList, VoteGrid,
};
pub use semisup::{
    initial_pool, segment_embeddings_semisupervised, segment_video_semisupervised, SemiSupervisedConfig,
    DEFAULT_POOL_CAP, SEMISUPERVISED_K,
};
pub use table::{add_reference_incremental, IncrementalUpdate, InsertOutcome, NeighborTable};
pub use upsample::{interpolate_votes, upsample_labels, upsample_region};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{GridCoord, LabelMask};

/// Squared Euclidean distance, accumulated in index order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    User,
    Adaptation,
}

impl Provenance {
    pub fn to_byte(self) -> u8 {
        match self {
            Provenance::User => 0,
            Provenance::Adaptation => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Provenance::User),
            1 => Some(Provenance::Adaptation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub embedding: Vec<f64>,
    pub label: u32,
    pub origin: GridCoord,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SampleMeta {
    label: u32,
    origin: GridCoord,
    provenance: Provenance,
}

/// Ordered reference samples with contiguous embedding storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    dim: usize,
    embeddings: Vec<f64>,
    meta: Vec<SampleMeta>,
}

impl ReferencePool {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            embeddings: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Appends a sample and returns its index.
    pub fn push(&mut self, sample: ReferenceSample) -> Result<usize> {
        if sample.embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: sample.embedding.len(),
            });
        }
        if sample.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference embedding"));
        }
        self.embeddings.extend_from_slice(&sample.embedding);
        self.meta.push(SampleMeta {
            label: sample.label,
            origin: sample.origin,
            provenance: sample.provenance,
        });
        Ok(self.meta.len() - 1)
    }

    #[inline]
    pub fn embedding(&self, index: usize) -> &[f64] {
        &self.embeddings[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, index: usize) -> u32 {
        self.meta[index].label
    }

    pub fn origin(&self, index: usize) -> GridCoord {
        self.meta[index].origin
    }

    pub fn provenance(&self, index: usize) -> Provenance {
        self.meta[index].provenance
    }

    pub fn sample(&self, index: usize) -> ReferenceSample {
        let meta = self.meta[index];
        ReferenceSample {
            embedding: self.embedding(index).to_vec(),
            label: meta.label,
            origin: meta.origin,
            provenance: meta.provenance,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = ReferenceSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn max_label(&self) -> Option<u32> {
        self.meta.iter().map(|m| m.label).max()
    }

    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.meta.iter().map(|m| m.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.meta.iter().filter(|m| m.provenance == provenance).count()
    }

    /// Keeps the samples for which `keep(index)` holds, preserving order.
    pub(crate) fn retain_indices(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let dim = self.dim;
        let mut write = 0;
        for read in 0..self.meta.len() {
            if keep(read) {
                if write != read {
                    self.meta[write] = self.meta[read];
                    self.embeddings.copy_within(read * dim..(read + 1) * dim, write * dim);
                }
                write += 1;
            }
        }
        self.meta.truncate(write);
        self.embeddings.truncate(write * dim);
    }

    /// Multiplies every embedding by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.embeddings.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

/// Grid-cell labels of a full-resolution mask: the majority pixel label per
/// cell, exact ties to the smaller label.
pub fn cell_labels_from_mask(mask: &LabelMask, stride: usize) -> Vec<u32> {
    let (height, width) = (mask.height(), mask.width());
    let (rows, cols) = crate::video::grid_dims(height, width, stride);
    let mut out = Vec::with_capacity(rows * cols);
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for gr in 0..rows {
        for gc in 0..cols {
            counts.clear();
            for r in gr * stride..((gr + 1) * stride).min(height) {
                for c in gc * stride..((gc + 1) * stride).min(width) {
                    let label = mask.get(r, c);
                    match counts.iter_mut().find(|(l, _)| *l == label) {
                        Some((_, n)) => *n += 1,
                        None => counts.push((label, 1)),
                    }
                }
            }
            let best = counts
                .iter()
                .copied()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(l, _)| l)
                .unwrap_or(0);
            out.push(best);
        }
    }
    out
}
