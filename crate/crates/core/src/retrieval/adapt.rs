use rand::seq::index;
use rand::Rng;

use super::knn::knn_grid;
use super::{Provenance, ReferencePool, ReferenceSample};
use crate::embed::EmbeddingGrid;
use crate::error::{Error, Result};
use crate::video::GridCoord;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptReport {
    /// Samples appended for this frame, in row-major cell order.
    pub added: Vec<ReferenceSample>,
    /// Adaptation samples dropped to respect the cap.
    pub evicted: usize,
}

/// Promotes every cell of `frame` whose k nearest references agree on a
/// single label. All neighbor searches use the pool as it was when the frame
/// started. If the pool then exceeds `cap`, adaptation samples are evicted
/// uniformly at random; user samples are never evicted.
pub fn online_adapt<R: Rng + ?Sized>(
    pool: &mut ReferencePool,
    embeddings: &EmbeddingGrid,
    frame: usize,
    k: usize,
    cap: usize,
    rng: &mut R,
) -> Result<AdaptReport> {
    if cap < pool.len() {
        return Err(Error::Config(format!("pool cap {cap} below current size {}", pool.len())));
    }
    let lists = knn_grid(pool, embeddings, k)?;
    let mut added = Vec::new();
    for (cell, list) in lists.iter().enumerate() {
        let mut labels = list.indices().map(|i| pool.label(i));
        let Some(first) = labels.next() else { continue };
        if labels.all(|l| l == first) {
            added.push(ReferenceSample {
                embedding: embeddings.cell_at(cell).to_vec(),
                label: first,
                origin: GridCoord {
                    frame,
                    row: cell / embeddings.cols(),
                    col: cell % embeddings.cols(),
                },
                provenance: Provenance::Adaptation,
            });
        }
    }
    for sample in &added {
        pool.push(sample.clone())?;
    }
    let evicted = evict(pool, cap, rng);
    Ok(AdaptReport { added, evicted })
}

fn evict<R: Rng + ?Sized>(pool: &mut ReferencePool, cap: usize, rng: &mut R) -> usize {
    if pool.len() <= cap {
        return 0;
    }
    let candidates: Vec<usize> = (0..pool.len())
        .filter(|&i| pool.provenance(i) == Provenance::Adaptation)
        .collect();
    let excess = (pool.len() - cap).min(candidates.len());
    let mut drop = vec![false; pool.len()];
    for pick in index::sample(rng, candidates.len(), excess) {
        drop[candidates[pick]] = true;
    }
    pool.retain_indices(|i| !drop[i]);
    excess
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn user(v: f64, label: u32) -> ReferenceSample {
        ReferenceSample {
            embedding: vec![v],
            label,
            origin: GridCoord::default(),
            provenance: Provenance::User,
        }
    }

    fn pool(values: &[(f64, u32)]) -> ReferencePool {
        let mut pool = ReferencePool::new(1);
        for &(v, l) in values {
            pool.push(user(v, l)).unwrap();
        }
        pool
    }

    #[test]
    fn split_vote_is_not_added() {
        // neighbors of 0.0: labels (1, 1, 1, 0, 1)
        let mut p = pool(&[(0.0, 1), (0.1, 1), (0.2, 1), (0.3, 0), (0.4, 1), (9.0, 0)]);
        let grid = EmbeddingGrid::new(1, 1, 1, 8, vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = online_adapt(&mut p, &grid, 1, 5, 100, &mut rng).unwrap();
        assert!(report.added.is_empty());
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn unanimous_cell_is_added() {
        let mut p = pool(&[(0.0, 1), (0.1, 1), (0.2, 1), (0.3, 1), (0.4, 1), (9.0, 0)]);
        let grid = EmbeddingGrid::new(1, 2, 1, 8, vec![0.05, 8.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = online_adapt(&mut p, &grid, 4, 5, 100, &mut rng).unwrap();
        assert_eq!(report.added.len(), 1);
        let s = &report.added[0];
        assert_eq!((s.label, s.provenance, s.origin), (1, Provenance::Adaptation, GridCoord { frame: 4, row: 0, col: 0 }));
        assert_eq!(p.len(), 7);
    }

    #[test]
    fn no_self_reinforcement_within_frame() {
        // the second cell would only become unanimous by seeing the first
        // cell's promoted sample
        let mut p = pool(&[(0.0, 1), (0.0, 1), (3.0, 0)]);
        let grid = EmbeddingGrid::new(1, 2, 1, 8, vec![0.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = online_adapt(&mut p, &grid, 1, 3, 100, &mut rng).unwrap();
        assert_eq!(report.added.len(), 0);
        let report = online_adapt(&mut p, &grid, 1, 2, 100, &mut rng).unwrap();
        assert_eq!(report.added.len(), 1);
    }

    #[test]
    fn cap_evicts_only_adaptation_samples() {
        let mut p = pool(&[(0.0, 1), (0.1, 1), (5.0, 0), (5.1, 0)]);
        let grid = EmbeddingGrid::new(1, 4, 1, 8, vec![0.0, 0.05, 5.0, 5.05]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cap = p.len();
        let report = online_adapt(&mut p, &grid, 1, 2, cap, &mut rng).unwrap();
        assert_eq!(report.added.len(), 4);
        assert_eq!(report.evicted, 4);
        assert_eq!(p.len(), cap);
        assert_eq!(p.count_provenance(Provenance::User), 4);

        let report = online_adapt(&mut p, &grid, 2, 2, 6, &mut rng).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(report.evicted, 2);
        assert_eq!(p.count_provenance(Provenance::User), 4);
        assert!(online_adapt(&mut p, &grid, 2, 2, 3, &mut rng).is_err());
    }
}
