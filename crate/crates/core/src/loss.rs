//! Metric-learning losses over head embeddings.
//!
//! The main loss works on pools: for each anchor only the closest positive
//! and the closest negative matter, so an object made of differently looking
//! parts is never forced into a single cluster.
//!
//! ```text
//! term(a) = max(0, min_p |f(a) - f(p)|^2 - min_n |f(a) - f(n)|^2 + alpha)
//! ```
//!
//! Argmin ties break to the lowest pool index. Anchors whose label is absent
//! from the pool frames are skipped and flagged.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::embed::{AugmentedFeatureGrid, EmbedConfig, HeadParams, augmented_video_features};
use crate::error::{Error, Result};
use crate::retrieval::{cell_labels_from_mask, squared_distance};
use crate::video::{LabelMask, VideoTensor};

/// Default slack between the closest positive and closest negative.
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_ANCHOR_COUNT: usize = 256;

/// A head input with its label and source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub label: u32,
    pub frame: usize,
}

/// Anchors plus one shared pool. The positive pool of an anchor is every pool
/// member with the same label, the negative pool everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    anchors: Vec<TrainSample>,
    pool: Vec<TrainSample>,
}

impl TripletBatch {
    pub fn new(anchors: Vec<TrainSample>, pool: Vec<TrainSample>) -> Result<Self> {
        let dim = anchors.first().map(|a| a.input.len());
        if let Some(dim) = dim {
            for sample in anchors.iter().chain(&pool) {
                if sample.input.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: sample.input.len(),
                    });
                }
            }
        }
        for (index, sample) in pool.iter().enumerate() {
            if anchors.iter().any(|a| a.frame == sample.frame) {
                return Err(Error::PoolFromAnchorFrame {
                    index,
                    frame: sample.frame,
                });
            }
        }
        Ok(Self { anchors, pool })
    }

    /// One anchor (label 1, frame 0) with explicit positive and negative pools
    /// (labels 1 and 0, frame 1), positives first.
    pub fn single(anchor: Vec<f64>, positives: Vec<Vec<f64>>, negatives: Vec<Vec<f64>>) -> Result<Self> {
        let sample = |input, label| TrainSample {
            input,
            label,
            frame: 1,
        };
        let pool = positives
            .into_iter()
            .map(|p| sample(p, 1))
            .chain(negatives.into_iter().map(|n| sample(n, 0)))
            .collect();
        Self::new(
            vec![TrainSample {
                input: anchor,
                label: 1,
                frame: 0,
            }],
            pool,
        )
    }

    pub fn anchors(&self) -> &[TrainSample] {
        &self.anchors
    }

    pub fn pool(&self) -> &[TrainSample] {
        &self.pool
    }

    /// Pool indices of the anchor's positive pool, in pool order.
    pub fn positive_indices(&self, anchor: usize) -> impl Iterator<Item = usize> + '_ {
        let label = self.anchors[anchor].label;
        (0..self.pool.len()).filter(move |&i| self.pool[i].label == label)
    }

    pub fn negative_indices(&self, anchor: usize) -> impl Iterator<Item = usize> + '_ {
        let label = self.anchors[anchor].label;
        (0..self.pool.len()).filter(move |&i| self.pool[i].label != label)
    }

    /// Same batch with the pool reordered by `order` (a permutation).
    pub fn with_pool_order(&self, order: &[usize]) -> Self {
        Self {
            anchors: self.anchors.clone(),
            pool: order.iter().map(|&i| self.pool[i].clone()).collect(),
        }
    }

    pub fn with_pool_sample(&self, sample: TrainSample) -> Self {
        let mut pool = self.pool.clone();
        pool.push(sample);
        Self {
            anchors: self.anchors.clone(),
            pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTerm {
    /// Hinged term, 0 when skipped.
    pub value: f64,
    /// `min_pos - min_neg + alpha` before the hinge.
    pub pre_hinge: f64,
    /// Position of the closest positive within the anchor's positive pool.
    pub argmin_positive: Option<usize>,
    /// Position of the closest negative within the anchor's negative pool.
    pub argmin_negative: usize,
    pub min_positive: Option<f64>,
    pub min_negative: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_anchor: Vec<AnchorTerm>,
}

impl LossReport {
    pub fn skipped_count(&self) -> usize {
        self.per_anchor.iter().filter(|t| t.skipped).count()
    }
}

/// Closest positive and negative for one anchor, as shared pool indices.
#[derive(Debug, Clone, Copy)]
struct Selection {
    positive: Option<(usize, usize, f64)>,
    negative: (usize, usize, f64),
}

struct Forward {
    dim: usize,
    hidden_dim: usize,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Forward {
    fn run(params: &HeadParams, samples: &[TrainSample]) -> Result<Self> {
        let (hidden_dim, dim) = (params.hidden_dim(), params.output_dim());
        for s in samples {
            if s.input.len() != params.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: params.input_dim(),
                    actual: s.input.len(),
                });
            }
        }
        let mut hidden = vec![0.0; samples.len() * hidden_dim];
        let mut out = vec![0.0; samples.len() * dim];
        hidden
            .par_chunks_mut(hidden_dim.max(1))
            .zip(out.par_chunks_mut(dim.max(1)))
            .zip(samples.par_iter())
            .for_each(|((h, o), s)| params.forward_into(&s.input, h, o));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embeddings"));
        }
        Ok(Self {
            dim,
            hidden_dim,
            hidden,
            out,
        })
    }

    fn embedding(&self, i: usize) -> &[f64] {
        &self.out[i * self.dim..(i + 1) * self.dim]
    }

    fn hidden(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }
}

fn select(batch: &TripletBatch, anchors: &Forward, pool: &Forward) -> Result<Vec<Selection>> {
    (0..batch.anchors.len())
        .into_par_iter()
        .map(|a| {
            let label = batch.anchors[a].label;
            let ea = anchors.embedding(a);
            let mut positive: Option<(usize, usize, f64)> = None;
            let mut negative: Option<(usize, usize, f64)> = None;
            let (mut pos_rank, mut neg_rank) = (0, 0);
            for (i, sample) in batch.pool.iter().enumerate() {
                let d = squared_distance(ea, pool.embedding(i));
                let (best, rank) = if sample.label == label {
                    (&mut positive, &mut pos_rank)
                } else {
                    (&mut negative, &mut neg_rank)
                };
                if best.is_none_or(|(_, _, b)| d < b) {
                    *best = Some((i, *rank, d));
                }
                *rank += 1;
            }
            let negative = negative.ok_or(Error::EmptyNegativePool { anchor: a })?;
            Ok(Selection { positive, negative })
        })
        .collect()
}

fn report(selections: &[Selection], alpha: f64) -> LossReport {
    let per_anchor: Vec<AnchorTerm> = selections
        .iter()
        .map(|s| {
            let (_, neg_rank, neg) = s.negative;
            match s.positive {
                Some((_, pos_rank, pos)) => {
                    let pre_hinge = pos - neg + alpha;
                    AnchorTerm {
                        value: pre_hinge.max(0.0),
                        pre_hinge,
                        argmin_positive: Some(pos_rank),
                        argmin_negative: neg_rank,
                        min_positive: Some(pos),
                        min_negative: neg,
                        skipped: false,
                    }
                }
                None => AnchorTerm {
                    value: 0.0,
                    pre_hinge: 0.0,
                    argmin_positive: None,
                    argmin_negative: neg_rank,
                    min_positive: None,
                    min_negative: neg,
                    skipped: true,
                },
            }
        })
        .collect();
    let total = per_anchor
        .iter()
        .filter(|t| !t.skipped)
        .map(|t| t.value)
        .sum();
    LossReport { total, per_anchor }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be a non-negative number, got {alpha}")));
    }
    Ok(())
}

/// Sum over anchors of the hinged pool-min triplet term.
pub fn proposed_loss(params: &HeadParams, batch: &TripletBatch, alpha: f64) -> Result<LossReport> {
    check_alpha(alpha)?;
    let anchors = Forward::run(params, &batch.anchors)?;
    let pool = Forward::run(params, &batch.pool)?;
    let selections = select(batch, &anchors, &pool)?;
    Ok(report(&selections, alpha))
}

/// Loss value and its gradient with respect to the flat head parameters.
///
/// The argmin members are treated as fixed, and terms at or below the hinge
/// contribute nothing.
pub fn loss_and_gradient(params: &HeadParams, batch: &TripletBatch, alpha: f64) -> Result<(LossReport, Vec<f64>)> {
    check_alpha(alpha)?;
    let anchors = Forward::run(params, &batch.anchors)?;
    let pool = Forward::run(params, &batch.pool)?;
    let selections = select(batch, &anchors, &pool)?;
    let report = report(&selections, alpha);

    let dim = params.output_dim();
    let mut anchor_grads = vec![0.0; batch.anchors.len() * dim];
    let mut pool_grads = vec![0.0; batch.pool.len() * dim];
    let mut touched_pool = vec![false; batch.pool.len()];
    for (a, (selection, term)) in selections.iter().zip(&report.per_anchor).enumerate() {
        let Some((p, _, _)) = selection.positive else {
            continue;
        };
        if term.pre_hinge <= 0.0 {
            continue;
        }
        let (n, _, _) = selection.negative;
        let (ea, ep, en) = (anchors.embedding(a), pool.embedding(p), pool.embedding(n));
        for k in 0..dim {
            anchor_grads[a * dim + k] += 2.0 * (en[k] - ep[k]);
            pool_grads[p * dim + k] += 2.0 * (ep[k] - ea[k]);
            pool_grads[n * dim + k] += 2.0 * (ea[k] - en[k]);
        }
        touched_pool[p] = true;
        touched_pool[n] = true;
    }

    let mut grad = vec![0.0; params.param_count()];
    let mut scratch = vec![0.0; params.hidden_dim()];
    for a in 0..batch.anchors.len() {
        let g = &anchor_grads[a * dim..(a + 1) * dim];
        if g.iter().any(|&v| v != 0.0) {
            backprop(params, &batch.anchors[a].input, anchors.hidden(a), g, &mut scratch, &mut grad);
        }
    }
    for i in (0..batch.pool.len()).filter(|&i| touched_pool[i]) {
        let g = &pool_grads[i * dim..(i + 1) * dim];
        backprop(params, &batch.pool[i].input, pool.hidden(i), g, &mut scratch, &mut grad);
    }
    Ok((report, grad))
}

pub fn loss_gradient(params: &HeadParams, batch: &TripletBatch, alpha: f64) -> Result<Vec<f64>> {
    loss_and_gradient(params, batch, alpha).map(|(_, g)| g)
}

/// Accumulates `d(g . f(x)) / d(params)` into `grad`, given the cached hidden
/// activations of `x`.
fn backprop(
    params: &HeadParams,
    input: &[f64],
    hidden: &[f64],
    grad_out: &[f64],
    dz: &mut [f64],
    grad: &mut [f64],
) {
    let (din, h, dout) = (params.input_dim(), params.hidden_dim(), params.output_dim());
    let w2 = params.w2();
    let (gw1, rest) = grad.split_at_mut(din * h);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h * dout);

    dz.fill(0.0);
    for o in 0..dout {
        let g = grad_out[o];
        if g == 0.0 {
            continue;
        }
        gb2[o] += g;
        let row = &w2[o * h..(o + 1) * h];
        let grow = &mut gw2[o * h..(o + 1) * h];
        for j in 0..h {
            grow[j] += g * hidden[j];
            dz[j] += g * row[j];
        }
    }
    for j in 0..h {
        let d = dz[j] * params.activation().derivative_from_output(hidden[j]);
        gb1[j] += d;
        let grow = &mut gw1[j * din..(j + 1) * din];
        for (gw, x) in grow.iter_mut().zip(input) {
            *gw += d * x;
        }
    }
}

/// One anchor, one positive, one negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Classic hinged triplet loss summed over triplets.
pub fn standard_triplet_loss(params: &HeadParams, triplets: &[Triplet], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut total = 0.0;
    for t in triplets {
        let ea = params.forward(&t.anchor);
        let ep = params.forward(&t.positive);
        let en = params.forward(&t.negative);
        let term = squared_distance(&ea, &ep) - squared_distance(&ea, &en) + alpha;
        if !term.is_finite() {
            return Err(Error::NonFinite("triplet term"));
        }
        total += term.max(0.0);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub same: bool,
}

/// `y d^2 + (1 - y) max(alpha - d, 0)^2` summed over pairs, with `d` the
/// (unsquared) embedding distance.
pub fn contrastive_loss(params: &HeadParams, pairs: &[Pair], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut total = 0.0;
    for pair in pairs {
        let d = squared_distance(&params.forward(&pair.a), &params.forward(&pair.b)).sqrt();
        if !d.is_finite() {
            return Err(Error::NonFinite("pair distance"));
        }
        total += if pair.same {
            d * d
        } else {
            (alpha - d).max(0.0).powi(2)
        };
    }
    Ok(total)
}

/// Precomputed head inputs and grid-cell labels of one annotated sequence.
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    features: Vec<AugmentedFeatureGrid>,
    cell_labels: Vec<Vec<u32>>,
}

impl TrainingSequence {
    pub fn new(video: &VideoTensor, masks: &[LabelMask], config: &EmbedConfig) -> Result<Self> {
        if masks.len() != video.frame_count() {
            return Err(Error::LengthMismatch {
                predictions: video.frame_count(),
                ground_truth: masks.len(),
            });
        }
        let features = augmented_video_features(video, config)?;
        let cell_labels = masks
            .iter()
            .map(|m| {
                m.check_shape(video.height(), video.width())?;
                Ok(cell_labels_from_mask(m, config.stride))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            features,
            cell_labels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[AugmentedFeatureGrid] {
        &self.features
    }

    pub fn cell_labels(&self, frame: usize) -> &[u32] {
        &self.cell_labels[frame]
    }

    fn can_anchor(&self, frame: usize) -> bool {
        let labels = &self.cell_labels[frame];
        labels.contains(&0) && labels.iter().any(|&l| l > 0)
    }

    fn sample(&self, frame: usize, cell: usize) -> TrainSample {
        TrainSample {
            input: self.features[frame].cell_at(cell).to_vec(),
            label: self.cell_labels[frame][cell],
            frame,
        }
    }
}

const FRAME_DRAW_ATTEMPTS: usize = 64;

/// Draws three distinct frames, takes up to `anchor_count` distinct anchor
/// cells from the first and pools every cell of the other two.
pub fn sample_training_batch<R: Rng + ?Sized>(
    sequence: &TrainingSequence,
    anchor_count: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    let frames = sequence.frame_count();
    if frames < 3 {
        return Err(Error::TooFewFrames {
            required: 3,
            actual: frames,
        });
    }
    if !(0..frames).any(|f| sequence.can_anchor(f)) {
        return Err(Error::NoAnchorFrame);
    }
    let mut picked = None;
    for _ in 0..FRAME_DRAW_ATTEMPTS {
        let draw = index::sample(rng, frames, 3).into_vec();
        if sequence.can_anchor(draw[0]) {
            picked = Some(draw);
            break;
        }
    }
    let draw = picked.ok_or(Error::NoAnchorFrame)?;
    let (anchor_frame, pool_frames) = (draw[0], [draw[1], draw[2]]);

    let cells = sequence.features[anchor_frame].cell_count();
    let anchors = index::sample(rng, cells, anchor_count.min(cells))
        .into_iter()
        .map(|cell| sequence.sample(anchor_frame, cell))
        .collect();
    let pool = pool_frames
        .iter()
        .flat_map(|&f| (0..sequence.features[f].cell_count()).map(move |cell| (f, cell)))
        .map(|(f, cell)| sequence.sample(f, cell))
        .collect();
    TripletBatch::new(anchors, pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{head_init, Activation};
    use crate::synth::{easy_sequence_preset, generate_sequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id1() -> HeadParams {
        HeadParams::identity(1)
    }

    fn single(anchor: f64, pos: &[f64], neg: &[f64]) -> TripletBatch {
        TripletBatch::single(
            vec![anchor],
            pos.iter().map(|&p| vec![p]).collect(),
            neg.iter().map(|&n| vec![n]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pool_loss_examples() {
        let r = proposed_loss(&id1(), &single(0.0, &[1.0], &[5.0]), 0.5).unwrap();
        assert_eq!(r.total, 0.0);

        let r = proposed_loss(&id1(), &single(0.0, &[3.0], &[2.0]), 0.5).unwrap();
        assert_eq!(r.total, 5.5);

        let r = proposed_loss(&id1(), &single(0.0, &[1.0, 3.0], &[2.0, 5.0]), 0.5).unwrap();
        assert_eq!(r.total, 0.0);
        let t = r.per_anchor[0];
        assert_eq!((t.argmin_positive, t.argmin_negative), (Some(0), 0));
        assert_eq!(t.pre_hinge, 1.0 - 4.0 + 0.5);
    }

    #[test]
    fn argmin_ties_break_low() {
        let r = proposed_loss(&id1(), &single(0.0, &[2.0, -2.0, 3.0], &[4.0, -1.0, 1.0]), 0.3).unwrap();
        let t = r.per_anchor[0];
        assert_eq!((t.argmin_positive, t.argmin_negative), (Some(0), 1));
    }

    #[test]
    fn empty_pools() {
        assert!(matches!(
            proposed_loss(&id1(), &single(0.0, &[1.0], &[]), 0.3),
            Err(Error::EmptyNegativePool { anchor: 0 })
        ));
        let r = proposed_loss(&id1(), &single(0.0, &[], &[1.0]), 0.3).unwrap();
        assert!(r.per_anchor[0].skipped);
        assert_eq!(r.total, 0.0);
        assert_eq!(r.skipped_count(), 1);
    }

    #[test]
    fn rejects_anchor_frame_in_pool() {
        let s = |frame| TrainSample {
            input: vec![0.0],
            label: 0,
            frame,
        };
        assert!(matches!(
            TripletBatch::new(vec![s(2)], vec![s(1), s(2)]),
            Err(Error::PoolFromAnchorFrame { index: 1, frame: 2 })
        ));
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(proposed_loss(&id1(), &single(0.0, &[1.0], &[2.0]), -0.1).is_err());
    }

    #[test]
    fn standard_triplet_examples() {
        let t = |a: f64, p: f64, n: f64| Triplet {
            anchor: vec![a],
            positive: vec![p],
            negative: vec![n],
        };
        assert_eq!(standard_triplet_loss(&id1(), &[t(0.0, 1.0, 5.0)], 0.5).unwrap(), 0.0);
        assert_eq!(standard_triplet_loss(&id1(), &[t(0.0, 3.0, 2.0)], 0.5).unwrap(), 5.5);
        assert_eq!(
            standard_triplet_loss(&id1(), &[t(0.0, 1.0, 5.0), t(0.0, 3.0, 2.0)], 0.5).unwrap(),
            5.5
        );
    }

    #[test]
    fn contrastive_examples() {
        let p = |a: f64, b: f64, same| Pair {
            a: vec![a],
            b: vec![b],
            same,
        };
        assert_eq!(contrastive_loss(&id1(), &[p(0.3, 0.3, true)], 0.5).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&id1(), &[p(0.0, 0.7, false)], 0.5).unwrap(), 0.0);
        let v = contrastive_loss(&id1(), &[p(0.0, 0.2, false)], 0.5).unwrap();
        assert!((v - 0.09).abs() < 1e-15, "{v}");
        let v = contrastive_loss(&id1(), &[p(0.0, 0.2, true)], 0.5).unwrap();
        assert!((v - 0.04).abs() < 1e-15);
    }

    #[test]
    fn flat_region_has_zero_gradient() {
        let head = head_init(4, 2, 3, 2);
        let batch = TripletBatch::single(vec![0.0, 0.0], vec![vec![0.0, 0.0]], vec![vec![0.5, 0.5]]).unwrap();
        // same input as the anchor: min positive distance 0, so alpha 0 hinges
        let (r, g) = loss_and_gradient(&head, &batch, 0.0).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_argmin_positive_leaves_gradient() {
        let head = head_init(5, 3, 4, 3);
        let batch = TripletBatch::single(
            vec![0.1, 0.2, 0.3],
            vec![vec![0.9, -0.4, 0.1], vec![1.5, 0.7, -0.8]],
            vec![vec![0.12, 0.21, 0.33], vec![-1.0, 0.0, 0.4]],
        )
        .unwrap();
        let (r, g) = loss_and_gradient(&head, &batch, 1.0).unwrap();
        assert!(r.total > 0.0);
        let closest = r.per_anchor[0].argmin_positive.unwrap();
        let dup = batch.pool()[closest].clone();
        let (r2, g2) = loss_and_gradient(&head, &batch.with_pool_sample(dup), 1.0).unwrap();
        assert_eq!(r.total, r2.total);
        assert_eq!(g, g2);
    }

    #[test]
    fn gradient_matches_finite_difference_on_tanh_head() {
        let mut head = head_init(11, 3, 5, 4);
        assert_eq!(head.activation(), Activation::Tanh);
        let batch = TripletBatch::single(
            vec![0.3, -0.2, 0.5],
            vec![vec![0.9, 0.4, 0.1], vec![-0.5, 0.7, 0.8]],
            vec![vec![0.35, -0.1, 0.45], vec![-1.0, 0.0, 0.4]],
        )
        .unwrap();
        let alpha = 2.0;
        let (_, g) = loss_and_gradient(&head, &batch, alpha).unwrap();
        let h = 1e-5;
        for i in 0..head.param_count() {
            let orig = head.as_flat()[i];
            head.as_flat_mut()[i] = orig + h;
            let up = proposed_loss(&head, &batch, alpha).unwrap().total;
            head.as_flat_mut()[i] = orig - h;
            let down = proposed_loss(&head, &batch, alpha).unwrap().total;
            head.as_flat_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn batch_sampling_rules() {
        let (video, masks) = generate_sequence(&easy_sequence_preset(1)).unwrap();
        let config = EmbedConfig::default();
        let seq = TrainingSequence::new(&video, &masks, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let batch = sample_training_batch(&seq, 256, &mut rng).unwrap();
            // 64x64 at stride 8: 64 cells, so 256 anchors truncate to 64
            assert_eq!(batch.anchors().len(), 64);
            assert_eq!(batch.pool().len(), 128);
            let anchor_frame = batch.anchors()[0].frame;
            let mut frames: Vec<usize> = batch.pool().iter().map(|s| s.frame).collect();
            frames.dedup();
            assert_eq!(frames.len(), 2);
            assert!(frames.iter().all(|&f| f != anchor_frame && f < 20));
            assert!(batch.anchors().iter().all(|a| a.frame == anchor_frame));
            for a in 0..batch.anchors().len() {
                let label = batch.anchors()[a].label;
                assert!(batch.positive_indices(a).all(|i| batch.pool()[i].label == label));
                assert!(batch.negative_indices(a).all(|i| batch.pool()[i].label != label));
            }
        }
        let small = sample_training_batch(&seq, 10, &mut rng).unwrap();
        assert_eq!(small.anchors().len(), 10);
    }

    #[test]
    fn sampling_needs_three_frames() {
        let (video, masks) = generate_sequence(&easy_sequence_preset(1)).unwrap();
        let short = VideoTensor::new(video.frames()[..2].to_vec()).unwrap();
        let seq = TrainingSequence::new(&short, &masks[..2], &EmbedConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_training_batch(&seq, 16, &mut rng),
            Err(Error::TooFewFrames { required: 3, actual: 2 })
        ));
    }
}
