use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{squared_distance, ReferencePool};
use crate::embed::EmbeddingGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: u32,
    pub distance: f64,
}

impl Neighbor {
    #[inline]
    fn cmp_key(&self, distance: f64, index: u32) -> Ordering {
        self.distance.total_cmp(&distance).then(self.index.cmp(&index))
    }
}

/// The k nearest pool entries of one query, ascending by `(distance, index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList(Vec<Neighbor>);

impl NeighborList {
    pub fn with_capacity(k: usize) -> Self {
        Self(Vec::with_capacity(k))
    }

    pub fn as_slice(&self) -> &[Neighbor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn worst(&self) -> Option<&Neighbor> {
        self.0.last()
    }

    /// Inserts the candidate if it belongs among the k nearest. Returns whether
    /// the list changed.
    #[inline]
    pub fn offer(&mut self, index: u32, distance: f64, k: usize) -> bool {
        if self.0.len() >= k {
            match self.0.last() {
                Some(w) if w.cmp_key(distance, index) == Ordering::Greater => {}
                _ => return false,
            }
        }
        let at = self
            .0
            .partition_point(|n| n.cmp_key(distance, index) == Ordering::Less);
        self.0.insert(at, Neighbor { index, distance });
        self.0.truncate(k);
        true
    }

    pub fn is_sorted(&self) -> bool {
        self.0
            .windows(2)
            .all(|w| w[0].cmp_key(w[1].distance, w[1].index) == Ordering::Less)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|n| n.index as usize)
    }
}

fn check_query(pool: &ReferencePool, query: &[f64], k: usize) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if query.len() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            actual: query.len(),
        });
    }
    Ok(())
}

/// Reference search: every distance, full sort, first k.
pub fn knn_brute_force(pool: &ReferencePool, query: &[f64], k: usize) -> Result<NeighborList> {
    check_query(pool, query, k)?;
    let mut all: Vec<Neighbor> = (0..pool.len())
        .map(|i| Neighbor {
            index: i as u32,
            distance: squared_distance(query, pool.embedding(i)),
        })
        .collect();
    all.sort_by(|a, b| a.cmp_key(b.distance, b.index));
    all.truncate(k);
    Ok(NeighborList(all))
}

const ABANDON_BLOCK: usize = 16;

/// Accumulates the squared distance in the same order as
/// [`squared_distance`], giving up once the partial sum reaches `bound`.
#[inline]
fn distance_below(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(ABANDON_BLOCK).zip(b.chunks(ABANDON_BLOCK)) {
        for (x, y) in ca.iter().zip(cb) {
            let d = x - y;
            acc += d * d;
        }
        if acc >= bound {
            return None;
        }
    }
    Some(acc)
}

/// Exact kNN by a single scan with a bounded sorted list and early abandon.
///
/// Candidates are visited in index order, so a candidate whose partial sum
/// already equals the current k-th distance can never enter the list.
pub fn knn_query(pool: &ReferencePool, query: &[f64], k: usize) -> Result<NeighborList> {
    check_query(pool, query, k)?;
    Ok(scan(pool, query, k))
}

#[inline]
fn scan(pool: &ReferencePool, query: &[f64], k: usize) -> NeighborList {
    let mut list = NeighborList::with_capacity(k + 1);
    for i in 0..pool.len() {
        let e = pool.embedding(i);
        if list.len() < k {
            list.offer(i as u32, squared_distance(query, e), k);
        } else if let Some(d) = distance_below(query, e, list.0[k - 1].distance) {
            list.offer(i as u32, d, k);
        }
    }
    list
}

/// Neighbor lists for every cell of a grid, computed in parallel.
pub fn knn_grid(pool: &ReferencePool, grid: &EmbeddingGrid, k: usize) -> Result<Vec<NeighborList>> {
    if grid.cell_count() == 0 {
        return Ok(Vec::new());
    }
    check_query(pool, grid.cell_at(0), k)?;
    Ok((0..grid.cell_count())
        .into_par_iter()
        .map(|c| scan(pool, grid.cell_at(c), k))
        .collect())
}

/// Most frequent label among the neighbors, count ties to the smaller label.
pub fn majority_label(list: &NeighborList, pool: &ReferencePool) -> u32 {
    let mut counts: [(u32, u32); 8] = [(0, 0); 8];
    let mut spill: Vec<(u32, u32)> = Vec::new();
    let mut used = 0;
    for i in list.indices() {
        let label = pool.label(i);
        if let Some(slot) = counts[..used].iter_mut().find(|(l, _)| *l == label) {
            slot.1 += 1;
        } else if used < counts.len() {
            counts[used] = (label, 1);
            used += 1;
        } else if let Some(slot) = spill.iter_mut().find(|(l, _)| *l == label) {
            slot.1 += 1;
        } else {
            spill.push((label, 1));
        }
    }
    counts[..used]
        .iter()
        .chain(&spill)
        .copied()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(0)
}

/// Share of neighbors per label.
pub fn vote_fractions(list: &NeighborList, pool: &ReferencePool) -> BTreeMap<u32, f64> {
    let mut fractions = BTreeMap::new();
    let n = list.len() as f64;
    for i in list.indices() {
        *fractions.entry(pool.label(i)).or_insert(0.0) += 1.0;
    }
    fractions.values_mut().for_each(|v| *v /= n);
    fractions
}

pub fn classify_cell(pool: &ReferencePool, query: &[f64], k: usize) -> Result<(u32, BTreeMap<u32, f64>)> {
    let list = knn_query(pool, query, k)?;
    Ok((majority_label(&list, pool), vote_fractions(&list, pool)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u32>,
}

/// Dense per-cell vote fractions for labels `0..num_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGrid {
    rows: usize,
    cols: usize,
    num_labels: usize,
    data: Vec<f64>,
}

impl VoteGrid {
    pub fn zeros(rows: usize, cols: usize, num_labels: usize) -> Self {
        Self {
            rows,
            cols,
            num_labels,
            data: vec![0.0; rows * cols * num_labels],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.num_labels..(index + 1) * self.num_labels]
    }

    /// Overwrites one cell from its neighbor list.
    pub fn set_from_list(&mut self, index: usize, list: &NeighborList, pool: &ReferencePool) {
        let n = self.num_labels;
        let cell = &mut self.data[index * n..(index + 1) * n];
        cell.fill(0.0);
        let share = 1.0 / list.len() as f64;
        for i in list.indices() {
            cell[pool.label(i) as usize] += share;
        }
    }

    /// A vote grid where each cell puts all its weight on its label.
    pub fn one_hot(labels: &LabelGrid, num_labels: usize) -> Self {
        let mut votes = Self::zeros(labels.rows, labels.cols, num_labels);
        for (i, &l) in labels.labels.iter().enumerate() {
            votes.data[i * num_labels + l as usize] = 1.0;
        }
        votes
    }

    /// The same fractions over `num_labels` labels: extra labels get zero,
    /// dropped labels must have been zero.
    pub fn with_num_labels(&self, num_labels: usize) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, num_labels);
        let keep = num_labels.min(self.num_labels);
        for i in 0..self.rows * self.cols {
            out.data[i * num_labels..i * num_labels + keep].copy_from_slice(&self.cell(i)[..keep]);
        }
        out
    }

    pub fn from_cells(rows: usize, cols: usize, num_labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * num_labels {
            return Err(Error::DimensionMismatch {
                expected: rows * cols * num_labels,
                actual: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            num_labels,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: LabelGrid,
    pub votes: VoteGrid,
}

/// Classifies every cell of a grid.
pub fn classify_grid(pool: &ReferencePool, embeddings: &EmbeddingGrid, k: usize) -> Result<Classification> {
    let lists = knn_grid(pool, embeddings, k)?;
    let num_labels = pool.max_label().map_or(1, |m| m as usize + 1);
    Ok(classification_from_lists(&lists, pool, embeddings.rows(), embeddings.cols(), num_labels))
}

pub(crate) fn classification_from_lists(
    lists: &[NeighborList],
    pool: &ReferencePool,
    rows: usize,
    cols: usize,
    num_labels: usize,
) -> Classification {
    let mut votes = VoteGrid::zeros(rows, cols, num_labels);
    let labels = lists
        .iter()
        .enumerate()
        .map(|(i, list)| {
            votes.set_from_list(i, list, pool);
            majority_label(list, pool)
        })
        .collect();
    Classification {
        labels: LabelGrid { rows, cols, labels },
        votes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{Provenance, ReferenceSample};
    use crate::video::GridCoord;

    fn pool_1d(values: &[(f64, u32)]) -> ReferencePool {
        let mut pool = ReferencePool::new(1);
        for &(v, label) in values {
            pool.push(ReferenceSample {
                embedding: vec![v],
                label,
                origin: GridCoord { frame: 0, row: 0, col: 0 },
                provenance: Provenance::User,
            })
            .unwrap();
        }
        pool
    }

    #[test]
    fn nearest_of_two() {
        let pool = pool_1d(&[(0.0, 0), (10.0, 1)]);
        let list = knn_query(&pool, &[1.0], 1).unwrap();
        assert_eq!(list.as_slice(), &[Neighbor { index: 0, distance: 1.0 }]);
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let pool = pool_1d(&[(0.0, 0), (2.0, 1)]);
        let list = knn_query(&pool, &[1.0], 2).unwrap();
        assert_eq!(list.indices().collect::<Vec<_>>(), vec![0, 1]);
        let pool = pool_1d(&[(2.0, 1), (0.0, 0)]);
        let list = knn_query(&pool, &[1.0], 1).unwrap();
        assert_eq!(list.indices().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn k_larger_than_pool_truncates() {
        let pool = pool_1d(&[(0.0, 0), (1.0, 1), (2.0, 1)]);
        assert_eq!(knn_query(&pool, &[0.5], 5).unwrap().len(), 3);
        assert!(matches!(knn_query(&ReferencePool::new(1), &[0.0], 1), Err(Error::EmptyPool)));
        assert!(knn_query(&pool, &[0.0, 1.0], 1).is_err());
        assert!(knn_query(&pool, &[0.0], 0).is_err());
    }

    #[test]
    fn majority_vote_examples() {
        let pool = pool_1d(&[(0.0, 1), (0.1, 1), (0.2, 1), (0.3, 0), (0.4, 0), (9.0, 0)]);
        let (label, fractions) = classify_cell(&pool, &[0.0], 5).unwrap();
        assert_eq!(label, 1);
        assert_eq!(fractions.len(), 2);
        assert!((fractions[&1] - 0.6).abs() < 1e-12 && (fractions[&0] - 0.4).abs() < 1e-12);

        let (label, _) = classify_cell(&pool, &[0.39], 1).unwrap();
        assert_eq!(label, 0);

        let pool = pool_1d(&[(0.0, 0), (0.1, 2), (0.2, 0), (0.3, 2), (5.0, 1)]);
        let (label, fractions) = classify_cell(&pool, &[0.0], 4).unwrap();
        assert_eq!(label, 0);
        assert_eq!(fractions[&0], 0.5);
        assert_eq!(fractions[&2], 0.5);
    }

    #[test]
    fn offer_keeps_order() {
        let mut list = NeighborList::default();
        assert!(list.offer(3, 2.0, 3));
        assert!(list.offer(1, 2.0, 3));
        assert!(list.offer(5, 1.0, 3));
        assert!(!list.offer(7, 2.0, 3));
        assert!(list.offer(0, 2.0, 3));
        assert_eq!(list.indices().collect::<Vec<_>>(), vec![5, 0, 1]);
        assert!(list.is_sorted());
    }

    #[test]
    fn grid_classification() {
        let grid = EmbeddingGrid::new(2, 2, 1, 8, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let one = pool_1d(&[(5.0, 1)]);
        let c = classify_grid(&one, &grid, 5).unwrap();
        assert_eq!(c.labels.labels, vec![1; 4]);
        assert_eq!((c.labels.rows, c.labels.cols), (2, 2));

        let exact = pool_1d(&[(3.0, 2), (1.0, 0), (0.0, 1), (2.0, 1)]);
        let c = classify_grid(&exact, &grid, 1).unwrap();
        assert_eq!(c.labels.labels, vec![1, 0, 1, 2]);
        assert_eq!(c.votes.num_labels(), 3);
        assert_eq!(c.votes.cell(3), &[0.0, 0.0, 1.0]);
    }
}
