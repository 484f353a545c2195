use rayon::prelude::*;

use super::knn::{classification_from_lists, knn_grid, majority_label, Classification, LabelGrid, NeighborList, VoteGrid};
use super::{squared_distance, ReferencePool, ReferenceSample};
use crate::embed::EmbeddingGrid;
use crate::error::{Error, Result};
use crate::video::GridCoord;

/// Cached k-nearest lists and majority labels for every cell of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    frame: usize,
    rows: usize,
    cols: usize,
    k: usize,
    lists: Vec<NeighborList>,
    labels: Vec<u32>,
}

/// Effect of one insertion on one table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsertOutcome {
    /// Cells whose majority label flipped.
    pub changed: Vec<usize>,
    /// Cells whose neighbor list changed (a superset of `changed`).
    pub touched: Vec<usize>,
    pub distance_evaluations: u64,
}

impl NeighborTable {
    /// A table for an empty pool: no neighbors, every cell labeled 0.
    pub fn empty(frame: usize, rows: usize, cols: usize, k: usize) -> Self {
        Self {
            frame,
            rows,
            cols,
            k,
            lists: vec![NeighborList::default(); rows * cols],
            labels: vec![0; rows * cols],
        }
    }

    /// Full rebuild against the current pool.
    pub fn build(pool: &ReferencePool, grid: &EmbeddingGrid, frame: usize, k: usize) -> Result<Self> {
        if pool.is_empty() {
            return Ok(Self::empty(frame, grid.rows(), grid.cols(), k));
        }
        let lists = knn_grid(pool, grid, k)?;
        let labels = lists.iter().map(|l| majority_label(l, pool)).collect();
        Ok(Self {
            frame,
            rows: grid.rows(),
            cols: grid.cols(),
            k,
            lists,
            labels,
        })
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lists(&self) -> &[NeighborList] {
        &self.lists
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_grid(&self) -> LabelGrid {
        LabelGrid {
            rows: self.rows,
            cols: self.cols,
            labels: self.labels.clone(),
        }
    }

    pub fn classification(&self, pool: &ReferencePool, num_labels: usize) -> Classification {
        classification_from_lists(&self.lists, pool, self.rows, self.cols, num_labels)
    }

    pub fn vote_grid(&self, pool: &ReferencePool, num_labels: usize) -> VoteGrid {
        let mut votes = VoteGrid::zeros(self.rows, self.cols, num_labels);
        for (i, list) in self.lists.iter().enumerate() {
            if !list.is_empty() {
                votes.set_from_list(i, list, pool);
            }
        }
        votes
    }

    pub fn coord(&self, cell: usize) -> GridCoord {
        GridCoord {
            frame: self.frame,
            row: cell / self.cols,
            col: cell % self.cols,
        }
    }

    /// Offers pool entry `index` (the newest sample) to every cell. One
    /// distance evaluation per cell, regardless of pool size.
    pub fn insert(&mut self, pool: &ReferencePool, index: usize, grid: &EmbeddingGrid) -> InsertOutcome {
        let reference = pool.embedding(index);
        let k = self.k;
        let flags: Vec<(bool, bool)> = self
            .lists
            .par_iter_mut()
            .zip(self.labels.par_iter_mut())
            .enumerate()
            .map(|(cell, (list, label))| {
                let d = squared_distance(grid.cell_at(cell), reference);
                if !list.offer(index as u32, d, k) {
                    return (false, false);
                }
                let new_label = majority_label(list, pool);
                let flipped = new_label != *label;
                *label = new_label;
                (true, flipped)
            })
            .collect();
        let mut outcome = InsertOutcome {
            distance_evaluations: flags.len() as u64,
            ..InsertOutcome::default()
        };
        for (cell, (touched, flipped)) in flags.into_iter().enumerate() {
            if touched {
                outcome.touched.push(cell);
            }
            if flipped {
                outcome.changed.push(cell);
            }
        }
        outcome
    }

    /// Structural checks that need no distance evaluations.
    pub fn check_consistency(&self, pool_len: usize) -> Result<()> {
        let expected = self.k.min(pool_len);
        for (cell, list) in self.lists.iter().enumerate() {
            if list.len() != expected {
                return Err(Error::InconsistentNeighbors(format!(
                    "frame {} cell {cell} holds {} neighbors, expected {expected}",
                    self.frame,
                    list.len()
                )));
            }
            if !list.is_sorted() || list.indices().any(|i| i >= pool_len) {
                return Err(Error::InconsistentNeighbors(format!(
                    "frame {} cell {cell} list is unsorted or points past the pool",
                    self.frame
                )));
            }
        }
        Ok(())
    }
}

/// Result of adding one reference to a pool with cached tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncrementalUpdate {
    pub index: usize,
    /// Cells whose majority label flipped.
    pub changed: Vec<GridCoord>,
    /// Cells whose neighbor list changed.
    pub touched: Vec<GridCoord>,
    pub distance_evaluations: u64,
}

/// Appends `sample` to the pool and updates every frame's table in place.
/// `tables[j]` must describe `embeddings[j]` against the pool before the call.
pub fn add_reference_incremental(
    tables: &mut [NeighborTable],
    pool: &mut ReferencePool,
    sample: ReferenceSample,
    embeddings: &[EmbeddingGrid],
) -> Result<IncrementalUpdate> {
    if tables.len() != embeddings.len() {
        return Err(Error::InconsistentNeighbors(format!(
            "{} tables for {} frames",
            tables.len(),
            embeddings.len()
        )));
    }
    if cfg!(debug_assertions) {
        for table in tables.iter() {
            table.check_consistency(pool.len())?;
        }
    }
    let index = pool.push(sample)?;
    let mut update = IncrementalUpdate {
        index,
        ..IncrementalUpdate::default()
    };
    for (table, grid) in tables.iter_mut().zip(embeddings) {
        let outcome = table.insert(pool, index, grid);
        update.distance_evaluations += outcome.distance_evaluations;
        update.changed.extend(outcome.changed.iter().map(|&c| table.coord(c)));
        update.touched.extend(outcome.touched.iter().map(|&c| table.coord(c)));
    }
    Ok(update)
}
