//! The interactive engine. Embeddings are computed once when a session
//! starts; each click adds one reference and updates every frame's cached
//! neighbor lists in place.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_video, embedding_hash, EmbedConfig, EmbeddingGrid, HeadParams};
use crate::error::{Error, Result};
use crate::metrics::frame_jaccard;
use crate::retrieval::{
    add_reference_incremental, classify_grid, online_adapt, upsample_labels, upsample_region, NeighborTable,
    Provenance, ReferencePool, ReferenceSample, VoteGrid, DEFAULT_POOL_CAP, SEMISUPERVISED_K,
};
use crate::video::{full_to_grid, Annotation, AnnotationKind, GridCoord, LabelMask, VideoTensor};

pub const INTERACTIVE_K: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub embed: EmbedConfig,
    pub k: usize,
    /// Number of objects K; labels run over `0..=K`.
    pub num_objects: u32,
    /// Runs online adaptation on the clicked frame after every click.
    pub adapt: bool,
    pub adapt_k: usize,
    pub pool_cap: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            embed: EmbedConfig::default(),
            k: INTERACTIVE_K,
            num_objects: 1,
            adapt: false,
            adapt_k: SEMISUPERVISED_K,
            pool_cap: DEFAULT_POOL_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub forward_passes: u64,
    pub clicks: usize,
    pub pool_size: usize,
    pub distance_evaluations: u64,
    pub last_click_evaluations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickOutcome {
    /// Grid cells whose label flipped, across all frames.
    pub changed_cells: usize,
    /// Frames with at least one flipped cell, ascending.
    pub changed_frames: Vec<usize>,
    pub distance_evaluations: u64,
}

impl ClickOutcome {
    fn merge(&mut self, other: ClickOutcome) {
        self.changed_cells += other.changed_cells;
        self.distance_evaluations += other.distance_evaluations;
        self.changed_frames.extend(other.changed_frames);
        self.changed_frames.sort_unstable();
        self.changed_frames.dedup();
    }
}

#[derive(Debug, Clone)]
pub struct InteractiveSession {
    config: SessionConfig,
    height: usize,
    width: usize,
    embeddings: Vec<EmbeddingGrid>,
    pool: ReferencePool,
    tables: Vec<NeighborTable>,
    votes: Vec<VoteGrid>,
    masks: Vec<LabelMask>,
    click_log: Vec<Annotation>,
    rng: ChaCha8Rng,
    stats: SessionStats,
}

/// Embeds every frame once and returns a session with an empty pool.
pub fn start_session(video: &VideoTensor, params: &HeadParams, config: SessionConfig) -> Result<InteractiveSession> {
    let embeddings = embed_video(video, params, &config.embed)?;
    let mut session = InteractiveSession::from_embeddings(embeddings, video.height(), video.width(), config)?;
    session.stats.forward_passes = 1;
    Ok(session)
}

impl InteractiveSession {
    /// A session over precomputed embeddings; counts no forward pass.
    pub fn from_embeddings(
        embeddings: Vec<EmbeddingGrid>,
        height: usize,
        width: usize,
        config: SessionConfig,
    ) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::TooFewFrames { required: 1, actual: 0 })?;
        if config.k == 0 || config.adapt_k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if config.num_objects == 0 {
            return Err(Error::Config("at least one object is required".into()));
        }
        let stride = first.stride();
        let dims = crate::video::grid_dims(height, width, stride);
        for g in &embeddings {
            if (g.rows(), g.cols()) != dims || g.dim() != first.dim() || g.stride() != stride {
                return Err(Error::DimensionMismatch {
                    expected: dims.0 * dims.1,
                    actual: g.rows() * g.cols(),
                });
            }
        }
        let mut session = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pool: ReferencePool::new(first.dim()),
            height,
            width,
            config,
            tables: Vec::new(),
            votes: Vec::new(),
            masks: Vec::new(),
            click_log: Vec::new(),
            stats: SessionStats::default(),
            embeddings,
        };
        session.clear_state();
        Ok(session)
    }

    fn num_labels(&self) -> usize {
        self.config.num_objects as usize + 1
    }

    fn stride(&self) -> usize {
        self.embeddings[0].stride()
    }

    fn clear_state(&mut self) {
        let (rows, cols) = (self.embeddings[0].rows(), self.embeddings[0].cols());
        let n = self.num_labels();
        self.pool = ReferencePool::new(self.embeddings[0].dim());
        self.tables = (0..self.embeddings.len())
            .map(|f| NeighborTable::empty(f, rows, cols, self.config.k))
            .collect();
        self.votes = vec![VoteGrid::zeros(rows, cols, n); self.embeddings.len()];
        self.masks = vec![LabelMask::background(self.height, self.width); self.embeddings.len()];
        self.click_log.clear();
        self.rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        self.stats.clicks = 0;
        self.stats.pool_size = 0;
        self.stats.last_click_evaluations = 0;
    }

    /// Drops every reference and click. Embeddings are kept.
    pub fn reset(&mut self) {
        self.clear_state();
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn frame_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn embeddings(&self) -> &[EmbeddingGrid] {
        &self.embeddings
    }

    pub fn embedding_hash(&self) -> u64 {
        embedding_hash(&self.embeddings)
    }

    pub fn pool(&self) -> &ReferencePool {
        &self.pool
    }

    pub fn tables(&self) -> &[NeighborTable] {
        &self.tables
    }

    pub fn click_log(&self) -> &[Annotation] {
        &self.click_log
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn total_cells(&self) -> usize {
        self.embeddings.iter().map(|g| g.cell_count()).sum()
    }

    /// True once the pool holds background and at least one object.
    pub fn has_sufficient_references(&self) -> bool {
        let labels = self.pool.distinct_labels();
        labels.first() == Some(&0) && labels.len() >= 2
    }

    /// Current full-resolution masks, or `InsufficientReferences` until the
    /// pool holds background and at least one object.
    pub fn masks(&self) -> Result<&[LabelMask]> {
        if !self.has_sufficient_references() {
            return Err(Error::InsufficientReferences);
        }
        Ok(&self.masks)
    }

    pub fn mask(&self, frame: usize) -> Result<&LabelMask> {
        let masks = self.masks()?;
        masks.get(frame).ok_or(Error::FrameOutOfRange {
            index: frame,
            frame_count: masks.len(),
        })
    }

    /// The classifier's current output regardless of pool composition. With
    /// a single label in the pool every pixel carries that label.
    pub fn current_masks(&self) -> &[LabelMask] {
        &self.masks
    }

    pub fn current_labels(&self, frame: usize) -> &[u32] {
        self.tables[frame].labels()
    }

    pub fn add_click(&mut self, annotation: Annotation) -> Result<ClickOutcome> {
        annotation.check_bounds(self.frame_count(), self.height, self.width)?;
        if annotation.label > self.config.num_objects {
            return Err(Error::LabelOutOfRange {
                label: annotation.label,
                max: self.config.num_objects,
            });
        }
        let (row, col) = full_to_grid(annotation.row, annotation.col, self.stride(), self.height, self.width)?;
        let sample = ReferenceSample {
            embedding: self.embeddings[annotation.frame].cell(row, col).to_vec(),
            label: annotation.label,
            origin: GridCoord {
                frame: annotation.frame,
                row,
                col,
            },
            provenance: Provenance::User,
        };
        let update = add_reference_incremental(&mut self.tables, &mut self.pool, sample, &self.embeddings)?;
        let mut touched: Vec<Vec<usize>> = vec![Vec::new(); self.frame_count()];
        for c in &update.touched {
            touched[c.frame].push(c.row * self.embeddings[c.frame].cols() + c.col);
        }
        let mut outcome = ClickOutcome {
            changed_cells: update.changed.len(),
            changed_frames: frames_of(&update.changed),
            distance_evaluations: update.distance_evaluations,
        };
        self.refresh(&touched)?;
        self.click_log.push(annotation);
        self.stats.clicks += 1;
        if self.config.adapt {
            outcome.merge(self.adapt_frame(annotation.frame)?);
        }
        self.stats.pool_size = self.pool.len();
        self.stats.distance_evaluations += outcome.distance_evaluations;
        self.stats.last_click_evaluations = outcome.distance_evaluations;
        Ok(outcome)
    }

    /// Re-derives votes and mask pixels for touched cells only.
    fn refresh(&mut self, touched: &[Vec<usize>]) -> Result<()> {
        let stride = self.stride();
        for (frame, cells) in touched.iter().enumerate() {
            if cells.is_empty() {
                continue;
            }
            let lists = self.tables[frame].lists();
            for &cell in cells {
                self.votes[frame].set_from_list(cell, &lists[cell], &self.pool);
            }
            upsample_region(&self.votes[frame], stride, &mut self.masks[frame], cells)?;
        }
        Ok(())
    }

    fn adapt_frame(&mut self, frame: usize) -> Result<ClickOutcome> {
        let before = self.pool.len();
        let before_labels: Vec<Vec<u32>> = self.tables.iter().map(|t| t.labels().to_vec()).collect();
        let report = online_adapt(
            &mut self.pool,
            &self.embeddings[frame],
            frame,
            self.config.adapt_k,
            self.config.pool_cap.max(before),
            &mut self.rng,
        )?;
        let cells = self.embeddings[frame].cell_count() as u64;
        let mut evaluations = cells * before as u64;
        if report.evicted > 0 {
            // indices shifted: rebuild
            for (f, grid) in self.embeddings.iter().enumerate() {
                self.tables[f] = NeighborTable::build(&self.pool, grid, f, self.config.k)?;
            }
            evaluations += (self.total_cells() * self.pool.len()) as u64;
            let all: Vec<Vec<usize>> = self.embeddings.iter().map(|g| (0..g.cell_count()).collect()).collect();
            self.refresh(&all)?;
        } else {
            let mut touched: Vec<Vec<usize>> = vec![Vec::new(); self.frame_count()];
            for index in before..self.pool.len() {
                for (f, (table, grid)) in self.tables.iter_mut().zip(&self.embeddings).enumerate() {
                    let out = table.insert(&self.pool, index, grid);
                    evaluations += out.distance_evaluations;
                    touched[f].extend(out.touched);
                }
            }
            for cells in &mut touched {
                cells.sort_unstable();
                cells.dedup();
            }
            self.refresh(&touched)?;
        }
        let mut changed_frames = Vec::new();
        let mut changed_cells = 0;
        for (f, old) in before_labels.iter().enumerate() {
            let n = old.iter().zip(self.tables[f].labels()).filter(|(a, b)| a != b).count();
            if n > 0 {
                changed_cells += n;
                changed_frames.push(f);
            }
        }
        Ok(ClickOutcome {
            changed_cells,
            changed_frames,
            distance_evaluations: evaluations,
        })
    }

    /// Dense clicks along a polyline of pixels on one frame: one annotation
    /// per grid cell the stroke passes through, at the first pixel that
    /// reached it.
    pub fn add_scribble(&mut self, frame: usize, points: &[(usize, usize)], label: u32) -> Result<ClickOutcome> {
        let mut pixels = Vec::new();
        for (i, &(r, c)) in points.iter().enumerate() {
            Annotation::click(frame, r, c, label).check_bounds(self.frame_count(), self.height, self.width)?;
            match i {
                0 => pixels.push((r, c)),
                _ => pixels.extend(line(points[i - 1], (r, c)).into_iter().skip(1)),
            }
        }
        let stride = self.stride();
        let mut seen = std::collections::HashSet::new();
        let mut outcome = ClickOutcome::default();
        for (r, c) in pixels {
            if seen.insert((r / stride, c / stride)) {
                let annotation = Annotation {
                    kind: AnnotationKind::ScribblePoint,
                    ..Annotation::click(frame, r, c, label)
                };
                outcome.merge(self.add_click(annotation)?);
            }
        }
        Ok(outcome)
    }

    /// Applies a click log in order.
    pub fn replay(&mut self, log: &[Annotation]) -> Result<()> {
        for &a in log {
            self.add_click(a)?;
        }
        Ok(())
    }

    /// From-scratch classification of every frame against the current pool.
    pub fn reclassify_full(&self) -> Result<Vec<LabelMask>> {
        if self.pool.is_empty() {
            return Ok(vec![LabelMask::background(self.height, self.width); self.frame_count()]);
        }
        self.embeddings
            .iter()
            .map(|g| {
                let c = classify_grid(&self.pool, g, self.config.k)?;
                upsample_labels(&c.votes.with_num_labels(self.num_labels()), g.stride(), self.height, self.width)
            })
            .collect()
    }
}

fn frames_of(coords: &[GridCoord]) -> Vec<usize> {
    let mut frames: Vec<usize> = coords.iter().map(|c| c.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// Bresenham line between two pixels, both endpoints included.
fn line((r0, c0): (usize, usize), (r1, c1): (usize, usize)) -> Vec<(usize, usize)> {
    let (mut r, mut c) = (r0 as i64, c0 as i64);
    let (r1, c1) = (r1 as i64, c1 as i64);
    let dr = (r1 - r).abs();
    let dc = -(c1 - c).abs();
    let (sr, sc) = ((r1 - r).signum(), (c1 - c).signum());
    let mut err = dr + dc;
    let mut out = Vec::new();
    loop {
        out.push((r as usize, c as usize));
        if r == r1 && c == c1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotStep {
    Clicked(Annotation),
    Done,
}

/// Picks the `n`-th (frame, row, col) in scan order for which `pred` holds.
fn nth_pixel(gt: &[LabelMask], n: usize, pred: impl Fn(usize, usize) -> bool) -> Option<(usize, usize, usize)> {
    let mut seen = 0;
    for (f, mask) in gt.iter().enumerate() {
        let w = mask.width();
        for (i, _) in mask.labels().iter().enumerate() {
            if pred(f, i) {
                if seen == n {
                    return Some((f, i / w, i % w));
                }
                seen += 1;
            }
        }
    }
    None
}

fn random_pixel<R: Rng + ?Sized>(
    gt: &[LabelMask],
    rng: &mut R,
    pred: impl Fn(usize, usize) -> bool + Copy,
) -> Option<(usize, usize, usize)> {
    let total: usize = gt
        .iter()
        .enumerate()
        .map(|(f, m)| (0..m.labels().len()).filter(|&i| pred(f, i)).count())
        .sum();
    if total == 0 {
        return None;
    }
    nth_pixel(gt, rng.random_range(0..total), pred)
}

fn check_gt(session: &InteractiveSession, gt: &[LabelMask]) -> Result<()> {
    if gt.len() != session.frame_count() {
        return Err(Error::LengthMismatch {
            predictions: session.frame_count(),
            ground_truth: gt.len(),
        });
    }
    for m in gt {
        m.check_shape(session.height(), session.width())?;
    }
    Ok(())
}

/// One uniformly random pixel per object `1..=K`, then one background
/// pixel, each clicked with its ground-truth label.
pub fn robot_initial<R: Rng + ?Sized>(
    session: &mut InteractiveSession,
    gt: &[LabelMask],
    rng: &mut R,
) -> Result<Vec<Annotation>> {
    check_gt(session, gt)?;
    let mut clicks = Vec::new();
    let objects = session.config().num_objects;
    for label in (1..=objects).chain(std::iter::once(0)) {
        let (f, r, c) =
            random_pixel(gt, rng, |f, i| gt[f].labels()[i] == label).ok_or(Error::MissingObject(label))?;
        let a = Annotation::click(f, r, c, label);
        session.add_click(a)?;
        clicks.push(a);
    }
    Ok(clicks)
}

/// Pixels where the current masks disagree with the ground truth.
pub fn wrong_pixel_count(session: &InteractiveSession, gt: &[LabelMask]) -> usize {
    session
        .current_masks()
        .iter()
        .zip(gt)
        .map(|(p, g)| p.labels().iter().zip(g.labels()).filter(|(a, b)| a != b).count())
        .sum()
}

/// Clicks one uniformly random wrong pixel with its ground-truth label.
pub fn robot_step<R: Rng + ?Sized>(session: &mut InteractiveSession, gt: &[LabelMask], rng: &mut R) -> Result<RobotStep> {
    check_gt(session, gt)?;
    let masks = session.current_masks();
    let Some((f, r, c)) = random_pixel(gt, rng, |f, i| masks[f].labels()[i] != gt[f].labels()[i]) else {
        return Ok(RobotStep::Done);
    };
    let a = Annotation::click(f, r, c, gt[f].get(r, c));
    session.add_click(a)?;
    Ok(RobotStep::Clicked(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickCurvePoint {
    pub clicks_per_frame: f64,
    pub mean_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRun {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Vec<ClickCurvePoint>>,
    pub mean: Vec<ClickCurvePoint>,
    /// Wrong pixels right after the initial clicks, per seed.
    pub wrong_after_initial: Vec<usize>,
    /// Wrong pixels after the full budget, per seed.
    pub wrong_final: Vec<usize>,
}

/// Mean J over all frames of the current masks.
pub fn session_mean_j(session: &InteractiveSession, gt: &[LabelMask]) -> Result<f64> {
    let k = session.config().num_objects;
    let mut sum = 0.0;
    for (p, g) in session.current_masks().iter().zip(gt) {
        sum += frame_jaccard(p, g, k)?;
    }
    Ok(sum / gt.len() as f64)
}

/// Runs the robot once per seed from a reset session, recording one curve
/// point per click. A robot with nothing left to fix holds its score for the
/// rest of the budget.
pub fn run_robot(session: &mut InteractiveSession, gt: &[LabelMask], budget: usize, seeds: &[u64]) -> Result<RobotRun> {
    check_gt(session, gt)?;
    let required = session.config().num_objects as usize + 1;
    if budget < required {
        return Err(Error::BudgetTooSmall { budget, required });
    }
    let frames = session.frame_count() as f64;
    let mut run = RobotRun {
        seeds: seeds.to_vec(),
        per_seed: Vec::new(),
        mean: Vec::new(),
        wrong_after_initial: Vec::new(),
        wrong_final: Vec::new(),
    };
    for &seed in seeds {
        session.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut curve = Vec::with_capacity(budget);
        let point = |session: &InteractiveSession, slot: usize| -> Result<ClickCurvePoint> {
            Ok(ClickCurvePoint {
                clicks_per_frame: slot as f64 / frames,
                mean_j: session_mean_j(session, gt)?,
            })
        };
        // initial clicks one at a time, so each gets its own point
        let objects = session.config().num_objects;
        for label in (1..=objects).chain(std::iter::once(0)) {
            let (f, r, c) =
                random_pixel(gt, &mut rng, |f, i| gt[f].labels()[i] == label).ok_or(Error::MissingObject(label))?;
            session.add_click(Annotation::click(f, r, c, label))?;
            curve.push(point(session, curve.len() + 1)?);
        }
        run.wrong_after_initial.push(wrong_pixel_count(session, gt));
        while curve.len() < budget {
            robot_step(session, gt, &mut rng)?;
            curve.push(point(session, curve.len() + 1)?);
        }
        run.wrong_final.push(wrong_pixel_count(session, gt));
        run.per_seed.push(curve);
    }
    if !seeds.is_empty() {
        run.mean = (0..budget)
            .map(|i| ClickCurvePoint {
                clicks_per_frame: run.per_seed[0][i].clicks_per_frame,
                mean_j: run.per_seed.iter().map(|c| c[i].mean_j).sum::<f64>() / seeds.len() as f64,
            })
            .collect();
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::AUGMENTED_DIM;
    use crate::synth::{easy_sequence_preset, generate_sequence};
    use crate::video::Frame;

    fn two_tone_video(frames: usize) -> (VideoTensor, Vec<LabelMask>) {
        let mut video = Vec::new();
        let mut masks = Vec::new();
        for f in 0..frames {
            let mut frame = Frame::filled(16, 16, [0.1, 0.1, 0.1]);
            let mut mask = LabelMask::background(16, 16);
            for r in 4..12 {
                for c in (2 + f)..(10 + f) {
                    frame.set_pixel(r, c, [0.9, 0.9, 0.2]);
                    mask.set(r, c, 1);
                }
            }
            video.push(frame);
            masks.push(mask);
        }
        (VideoTensor::new(video).unwrap(), masks)
    }

    fn appearance_only(stride: usize) -> SessionConfig {
        SessionConfig {
            embed: EmbedConfig {
                stride,
                lambda_space: 0.0,
                lambda_time: 0.0,
            },
            ..SessionConfig::default()
        }
    }

    #[test]
    fn start_caches_embeddings() {
        let (video, _) = two_tone_video(5);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let s = start_session(&video, &params, appearance_only(4)).unwrap();
        assert_eq!(s.embeddings().len(), 5);
        assert!(s.click_log().is_empty());
        assert_eq!(s.stats().forward_passes, 1);
        assert!(matches!(s.masks(), Err(Error::InsufficientReferences)));
        let t = start_session(&video, &params, appearance_only(4)).unwrap();
        assert_eq!(s.embedding_hash(), t.embedding_hash());
    }

    #[test]
    fn two_clicks_segment_uniform_object() {
        let (video, gt) = two_tone_video(4);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(1)).unwrap();
        let hash = s.embedding_hash();
        s.add_click(Annotation::click(0, 6, 5, 1)).unwrap();
        assert!(s.masks().is_err());
        s.add_click(Annotation::click(2, 0, 0, 0)).unwrap();
        assert_eq!(s.masks().unwrap(), gt.as_slice());
        assert_eq!(s.embedding_hash(), hash);
        assert_eq!(s.stats().forward_passes, 1);

        // re-clicking a correct cell changes nothing
        let before = s.masks().unwrap().to_vec();
        let out = s.add_click(Annotation::click(1, 6, 6, 1)).unwrap();
        assert_eq!(out.changed_cells, 0);
        let dup = s.add_click(Annotation::click(1, 6, 6, 1)).unwrap();
        assert_eq!(dup.changed_cells, 0);
        assert_eq!(s.masks().unwrap(), before.as_slice());
        assert_eq!(s.pool().len(), 4);
    }

    #[test]
    fn click_validation() {
        let (video, _) = two_tone_video(2);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(4)).unwrap();
        assert!(matches!(s.add_click(Annotation::click(0, 16, 0, 1)), Err(Error::OutOfBounds { .. })));
        assert!(matches!(s.add_click(Annotation::click(2, 0, 0, 1)), Err(Error::FrameOutOfRange { .. })));
        assert!(matches!(s.add_click(Annotation::click(0, 0, 0, 2)), Err(Error::LabelOutOfRange { .. })));
        assert_eq!(s.stats().clicks, 0);
    }

    #[test]
    fn click_cost_is_one_distance_per_cell() {
        let (video, _) = two_tone_video(3);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(4)).unwrap();
        for i in 0..6 {
            let out = s.add_click(Annotation::click(i % 3, 2 * i, 3 * i, (i % 2) as u32)).unwrap();
            assert_eq!(out.distance_evaluations, 48);
        }
    }

    #[test]
    fn masks_match_full_reclassification() {
        let (video, gt) = generate_sequence(&easy_sequence_preset(3)).unwrap();
        let params = crate::embed::head_init(9, AUGMENTED_DIM, 16, 8);
        let config = SessionConfig {
            k: 3,
            embed: EmbedConfig {
                stride: 8,
                ..EmbedConfig::default()
            },
            ..SessionConfig::default()
        };
        let mut s = start_session(&video, &params, config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        robot_initial(&mut s, &gt, &mut rng).unwrap();
        for _ in 0..10 {
            robot_step(&mut s, &gt, &mut rng).unwrap();
            assert_eq!(s.current_masks(), s.reclassify_full().unwrap().as_slice());
        }
    }

    #[test]
    fn replay_reproduces_masks() {
        let (video, gt) = generate_sequence(&easy_sequence_preset(4)).unwrap();
        let params = crate::embed::head_init(2, AUGMENTED_DIM, 16, 8);
        let config = SessionConfig {
            adapt: true,
            ..SessionConfig::default()
        };
        let mut s = start_session(&video, &params, config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        robot_initial(&mut s, &gt, &mut rng).unwrap();
        for _ in 0..5 {
            robot_step(&mut s, &gt, &mut rng).unwrap();
        }
        s.add_scribble(3, &[(0, 0), (20, 30)], 0).unwrap();
        let mut fresh = start_session(&video, &params, config).unwrap();
        fresh.replay(s.click_log()).unwrap();
        assert_eq!(fresh.current_masks(), s.current_masks());
        assert_eq!(fresh.pool(), s.pool());
    }

    #[test]
    fn reset_clears_references_only() {
        let (video, _) = two_tone_video(2);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(4)).unwrap();
        let hash = s.embedding_hash();
        s.add_click(Annotation::click(0, 5, 5, 1)).unwrap();
        s.reset();
        assert_eq!(s.pool().len(), 0);
        assert!(s.click_log().is_empty());
        assert_eq!(s.embedding_hash(), hash);
        assert_eq!(s.stats().forward_passes, 1);
    }

    #[test]
    fn scribble_adds_one_click_per_cell() {
        let (video, _) = two_tone_video(1);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(4)).unwrap();
        s.add_scribble(0, &[(1, 1), (1, 14)], 0).unwrap();
        assert_eq!(s.click_log().len(), 4);
        assert!(s.click_log().iter().all(|a| a.kind == AnnotationKind::ScribblePoint && a.row == 1));
        assert_eq!(line((3, 1), (3, 4)), vec![(3, 1), (3, 2), (3, 3), (3, 4)]);
        assert_eq!(line((2, 2), (0, 0)), vec![(2, 2), (1, 1), (0, 0)]);
        let l = line((0, 0), (3, 9));
        assert_eq!((l.len(), l[9]), (10, (3, 9)));
        assert!(l.windows(2).all(|w| w[0].0.abs_diff(w[1].0) <= 1 && w[1].1 == w[0].1 + 1));
    }

    #[test]
    fn robot_rules() {
        let (video, gt) = two_tone_video(3);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clicks = robot_initial(&mut s, &gt, &mut rng).unwrap();
        assert_eq!(clicks.len(), 2);
        assert_eq!(clicks[0].label, 1);
        assert_eq!(clicks[1].label, 0);
        assert_eq!(robot_step(&mut s, &gt, &mut rng).unwrap(), RobotStep::Done);

        let mut again = start_session(&video, &params, appearance_only(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(robot_initial(&mut again, &gt, &mut rng).unwrap(), clicks);

        // exactly one wrong pixel gets clicked
        let mut off = gt.clone();
        off[2].set(0, 15, 1);
        let mut s = start_session(&video, &params, appearance_only(1)).unwrap();
        s.add_click(Annotation::click(0, 5, 5, 1)).unwrap();
        s.add_click(Annotation::click(0, 0, 0, 0)).unwrap();
        let step = robot_step(&mut s, &off, &mut rng).unwrap();
        assert_eq!(step, RobotStep::Clicked(Annotation::click(2, 0, 15, 1)));
    }

    #[test]
    fn robot_initial_for_three_objects() {
        let (video, mut gt) = two_tone_video(2);
        gt[1].set(0, 0, 2);
        gt[0].set(15, 15, 3);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let config = SessionConfig {
            num_objects: 3,
            ..appearance_only(4)
        };
        let mut s = start_session(&video, &params, config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clicks = robot_initial(&mut s, &gt, &mut rng).unwrap();
        assert_eq!(clicks.len(), 4);
        assert_eq!(clicks[1], Annotation::click(1, 0, 0, 2));
        let config = SessionConfig {
            num_objects: 4,
            ..config
        };
        let mut s = start_session(&video, &params, config).unwrap();
        assert!(matches!(robot_initial(&mut s, &gt, &mut rng), Err(Error::MissingObject(4))));
    }

    #[test]
    fn run_robot_shapes() {
        let (video, gt) = two_tone_video(4);
        let params = HeadParams::identity(AUGMENTED_DIM);
        let mut s = start_session(&video, &params, appearance_only(4)).unwrap();
        assert!(matches!(run_robot(&mut s, &gt, 1, &[0]), Err(Error::BudgetTooSmall { .. })));
        let run = run_robot(&mut s, &gt, 2, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(run.per_seed.len(), 5);
        assert!(run.per_seed.iter().all(|c| c.len() == 2));
        assert_eq!(run.mean.len(), 2);
        assert_eq!(run.mean[1].clicks_per_frame, 0.5);
        let run = run_robot(&mut s, &gt, 8, &[0]).unwrap();
        assert_eq!(run.per_seed[0].len(), 8);
        assert!(run.per_seed[0].windows(2).all(|w| w[1].clicks_per_frame > w[0].clicks_per_frame));
        assert_eq!((run.wrong_after_initial.len(), run.wrong_final.len()), (1, 1));
    }
}
