use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adapt::online_adapt;
use super::knn::classify_grid;
use super::upsample::upsample_labels;
use super::{cell_labels_from_mask, Provenance, ReferencePool, ReferenceSample};
use crate::embed::{embed_video, EmbedConfig, EmbeddingGrid, HeadParams};
use crate::error::{Error, Result};
use crate::video::{GridCoord, LabelMask, VideoTensor};

pub const SEMISUPERVISED_K: usize = 5;
pub const DEFAULT_POOL_CAP: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SemiSupervisedConfig {
    pub embed: EmbedConfig,
    pub k: usize,
    pub adapt: bool,
    pub pool_cap: usize,
    /// Seeds eviction when the pool reaches its cap.
    pub seed: u64,
}

impl Default for SemiSupervisedConfig {
    fn default() -> Self {
        Self {
            embed: EmbedConfig::default(),
            k: SEMISUPERVISED_K,
            adapt: true,
            pool_cap: DEFAULT_POOL_CAP,
            seed: 0,
        }
    }
}

/// One user reference per grid cell of the annotated frame, labeled by the
/// cell's majority pixel label.
pub fn initial_pool(grid: &EmbeddingGrid, mask: &LabelMask, frame: usize) -> Result<ReferencePool> {
    let labels = cell_labels_from_mask(mask, grid.stride());
    if labels.len() != grid.cell_count() {
        return Err(Error::DimensionMismatch {
            expected: grid.cell_count(),
            actual: labels.len(),
        });
    }
    if labels.iter().all(|&l| l == 0) {
        return Err(Error::NoForegroundReference);
    }
    let mut pool = ReferencePool::new(grid.dim());
    for (cell, &label) in labels.iter().enumerate() {
        pool.push(ReferenceSample {
            embedding: grid.cell_at(cell).to_vec(),
            label,
            origin: GridCoord {
                frame,
                row: cell / grid.cols(),
                col: cell % grid.cols(),
            },
            provenance: Provenance::User,
        })?;
    }
    Ok(pool)
}

/// Propagates the frame-0 mask through precomputed embeddings. The returned
/// sequence starts with `first_mask` itself.
pub fn segment_embeddings_semisupervised(
    embeddings: &[EmbeddingGrid],
    first_mask: &LabelMask,
    config: &SemiSupervisedConfig,
) -> Result<Vec<LabelMask>> {
    let first = embeddings.first().ok_or(Error::TooFewFrames { required: 1, actual: 0 })?;
    if config.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (height, width) = (first_mask.height(), first_mask.width());
    let mut pool = initial_pool(first, first_mask, 0)?;
    if config.pool_cap < pool.len() {
        return Err(Error::Config(format!(
            "pool cap {} below the {} initial references",
            config.pool_cap,
            pool.len()
        )));
    }
    let num_labels = pool.max_label().map_or(1, |m| m as usize + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut masks = Vec::with_capacity(embeddings.len());
    masks.push(first_mask.clone());
    for (frame, grid) in embeddings.iter().enumerate().skip(1) {
        // user samples are never evicted, so the label range is fixed
        let classification = classify_grid(&pool, grid, config.k)?;
        debug_assert_eq!(classification.votes.num_labels(), num_labels);
        masks.push(upsample_labels(&classification.votes, grid.stride(), height, width)?);
        if config.adapt {
            online_adapt(&mut pool, grid, frame, config.k, config.pool_cap, &mut rng)?;
        }
    }
    Ok(masks)
}

pub fn segment_video_semisupervised(
    video: &VideoTensor,
    first_mask: &LabelMask,
    params: &HeadParams,
    config: &SemiSupervisedConfig,
) -> Result<Vec<LabelMask>> {
    first_mask.check_shape(video.height(), video.width())?;
    let embeddings = embed_video(video, params, &config.embed)?;
    segment_embeddings_semisupervised(&embeddings, first_mask, config)
}
