//! Region similarity J and contour accuracy F.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::LabelMask;

fn check_pair(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::MaskMismatch {
            height: gt.height(),
            width: gt.width(),
            actual_height: pred.height(),
            actual_width: pred.width(),
        });
    }
    Ok(())
}

/// Intersection over union of the pixels labeled `object`. 1 when both
/// masks lack the object.
pub fn jaccard(pred: &LabelMask, gt: &LabelMask, object: u32) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p == object, g == object);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Object pixels with at least one 4-neighbor outside the object. Pixels on
/// the image border always qualify.
pub fn boundary_pixels(mask: &LabelMask, object: u32) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) != object {
                continue;
            }
            let outside = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < h && cc < w => mask.get(rr, cc) != object,
                _ => true,
            };
            out[r * w + c] = outside(r.checked_sub(1), Some(c))
                || outside(Some(r + 1), Some(c))
                || outside(Some(r), c.checked_sub(1))
                || outside(Some(r), Some(c + 1));
        }
    }
    out
}

/// Square (Chebyshev) dilation by `radius`, computed separably.
fn dilate(set: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(w - 1);
            rows[r * w + c] = set[r * w + lo..=r * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; h * w];
    for r in 0..h {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        for c in 0..w {
            out[r * w + c] = (lo..=hi).any(|rr| rows[rr * w + c]);
        }
    }
    out
}

fn matched_fraction(points: &[bool], reach: &[bool]) -> Option<f64> {
    let total = points.iter().filter(|&&b| b).count();
    if total == 0 {
        return None;
    }
    let hit = points.iter().zip(reach).filter(|&(&p, &r)| p && r).count();
    Some(hit as f64 / total as f64)
}

/// Boundary F-measure with tolerance-ball matching: a boundary pixel counts
/// as matched when a counterpart boundary pixel lies within Chebyshev
/// distance `tolerance`.
pub fn boundary_f(pred: &LabelMask, gt: &LabelMask, object: u32, tolerance: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let (h, w) = (gt.height(), gt.width());
    let pb = boundary_pixels(pred, object);
    let gb = boundary_pixels(gt, object);
    let precision = matched_fraction(&pb, &dilate(&gb, h, w, tolerance));
    let recall = matched_fraction(&gb, &dilate(&pb, h, w, tolerance));
    Ok(match (precision, recall) {
        (None, None) => 1.0,
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    })
}

/// `max(1, round(0.008 * diagonal))`.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((0.008 * diag).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub frame: usize,
    pub object: u32,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    /// Frame index of each entry in `per_frame_j` and `per_frame_f`.
    pub frames: Vec<usize>,
    pub per_frame_j: Vec<f64>,
    pub per_frame_f: Vec<f64>,
    pub per_object: Vec<ObjectScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Skip frame 0, e.g. when it supplied the annotation.
    pub exclude_first: bool,
    /// Boundary tolerance in pixels; `None` uses [`default_tolerance`].
    pub tolerance: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            exclude_first: false,
            tolerance: None,
        }
    }
}

/// Objects scored on one frame: ids in `1..=num_objects` present in the
/// ground truth, or in the prediction when the ground truth has none.
fn scored_objects(pred: &LabelMask, gt: &LabelMask, num_objects: u32) -> Vec<u32> {
    let present = |m: &LabelMask| -> Vec<u32> { (1..=num_objects).filter(|&o| m.count(o) > 0).collect() };
    let in_gt = present(gt);
    if in_gt.is_empty() {
        present(pred)
    } else {
        in_gt
    }
}

/// Mean J of one frame over its scored objects.
pub fn frame_jaccard(pred: &LabelMask, gt: &LabelMask, num_objects: u32) -> Result<f64> {
    check_pair(pred, gt)?;
    let objects = scored_objects(pred, gt, num_objects);
    if objects.is_empty() {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for &o in &objects {
        sum += jaccard(pred, gt, o)?;
    }
    Ok(sum / objects.len() as f64)
}

pub fn evaluate_sequence(
    preds: &[LabelMask],
    gts: &[LabelMask],
    num_objects: u32,
    options: EvalOptions,
) -> Result<SequenceScore> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            predictions: preds.len(),
            ground_truth: gts.len(),
        });
    }
    let start = usize::from(options.exclude_first);
    if preds.len() <= start {
        return Err(Error::TooFewFrames {
            required: start + 1,
            actual: preds.len(),
        });
    }
    let frames: Vec<usize> = (start..preds.len()).collect();
    let scored: Vec<Vec<ObjectScore>> = frames
        .par_iter()
        .map(|&frame| -> Result<Vec<ObjectScore>> {
            let (pred, gt) = (&preds[frame], &gts[frame]);
            check_pair(pred, gt)?;
            let tolerance = options.tolerance.unwrap_or_else(|| default_tolerance(gt.height(), gt.width()));
            scored_objects(pred, gt, num_objects)
                .into_iter()
                .map(|object| {
                    Ok(ObjectScore {
                        frame,
                        object,
                        j: jaccard(pred, gt, object)?,
                        f: boundary_f(pred, gt, object, tolerance)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut per_frame_j = Vec::with_capacity(frames.len());
    let mut per_frame_f = Vec::with_capacity(frames.len());
    for objects in &scored {
        if objects.is_empty() {
            per_frame_j.push(1.0);
            per_frame_f.push(1.0);
        } else {
            per_frame_j.push(mean(&objects.iter().map(|o| o.j).collect::<Vec<_>>()));
            per_frame_f.push(mean(&objects.iter().map(|o| o.f).collect::<Vec<_>>()));
        }
    }
    let mean_j = mean(&per_frame_j);
    let mean_f = mean(&per_frame_f);
    Ok(SequenceScore {
        frames,
        per_frame_j,
        per_frame_f,
        per_object: scored.into_iter().flatten().collect(),
        mean_j,
        mean_f,
        mean_jf: (mean_j + mean_f) / 2.0,
    })
}
