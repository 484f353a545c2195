use super::knn::VoteGrid;
use crate::error::{Error, Result};
use crate::video::{grid_dims, LabelMask};

/// Grid coordinate of a pixel center along one axis, clamped to the grid.
#[inline]
fn grid_position(pixel: usize, stride: usize, cells: usize) -> f64 {
    let g = (pixel as f64 + 0.5) / stride as f64 - 0.5;
    g.clamp(0.0, (cells - 1) as f64)
}

/// Bilinear interpolation of the per-label fractions at a fractional grid
/// position `(gy, gx)`. Positions outside the grid are clamped.
pub fn interpolate_votes(votes: &VoteGrid, gy: f64, gx: f64) -> Vec<f64> {
    let mut out = vec![0.0; votes.num_labels()];
    interpolate_into(votes, gy, gx, &mut out);
    out
}

fn interpolate_into(votes: &VoteGrid, gy: f64, gx: f64, out: &mut [f64]) {
    let (rows, cols) = (votes.rows(), votes.cols());
    let gy = gy.clamp(0.0, (rows - 1) as f64);
    let gx = gx.clamp(0.0, (cols - 1) as f64);
    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
    let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
    let corners = [
        (y0 * cols + x0, (1.0 - ty) * (1.0 - tx)),
        (y0 * cols + x1, (1.0 - ty) * tx),
        (y1 * cols + x0, ty * (1.0 - tx)),
        (y1 * cols + x1, ty * tx),
    ];
    out.fill(0.0);
    for (cell, w) in corners {
        for (o, v) in out.iter_mut().zip(votes.cell(cell)) {
            *o += w * v;
        }
    }
}

fn argmax(fractions: &[f64]) -> u32 {
    let mut best = 0;
    for (l, &v) in fractions.iter().enumerate() {
        if v > fractions[best] {
            best = l;
        }
    }
    best as u32
}

fn check_grid(votes: &VoteGrid, stride: usize, height: usize, width: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidStride { stride, height, width });
    }
    let expected = grid_dims(height, width, stride);
    if (votes.rows(), votes.cols()) != expected || votes.num_labels() == 0 {
        return Err(Error::DimensionMismatch {
            expected: expected.0 * expected.1,
            actual: votes.rows() * votes.cols(),
        });
    }
    Ok(())
}

fn fill_rows(votes: &VoteGrid, stride: usize, mask: &mut LabelMask, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) {
    let mut buf = vec![0.0; votes.num_labels()];
    for y in rows {
        let gy = grid_position(y, stride, votes.rows());
        for x in cols.clone() {
            let gx = grid_position(x, stride, votes.cols());
            interpolate_into(votes, gy, gx, &mut buf);
            mask.set(y, x, argmax(&buf));
        }
    }
}

/// Full-resolution labels from grid vote fractions: bilinear interpolation
/// with pixel centers at `(y + 0.5) / stride - 0.5`, then argmax with ties
/// to the smaller label.
pub fn upsample_labels(votes: &VoteGrid, stride: usize, height: usize, width: usize) -> Result<LabelMask> {
    check_grid(votes, stride, height, width)?;
    let mut mask = LabelMask::background(height, width);
    fill_rows(votes, stride, &mut mask, 0..height, 0..width);
    Ok(mask)
}

/// Recomputes only the pixels whose interpolation support includes one of
/// `cells` (row-major grid indices). The result equals a full
/// [`upsample_labels`] of `votes` provided `mask` already did everywhere else.
pub fn upsample_region(votes: &VoteGrid, stride: usize, mask: &mut LabelMask, cells: &[usize]) -> Result<()> {
    let (height, width) = (mask.height(), mask.width());
    check_grid(votes, stride, height, width)?;
    let span = |cell: usize, len: usize| {
        let lo = cell.saturating_sub(1) * stride;
        let hi = ((cell + 2) * stride).min(len);
        lo..hi
    };
    for &cell in cells {
        let (r, c) = (cell / votes.cols(), cell % votes.cols());
        fill_rows(votes, stride, mask, span(r, height), span(c, width));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::LabelGrid;

    fn one_hot(rows: usize, cols: usize, labels: Vec<u32>, n: usize) -> VoteGrid {
        VoteGrid::one_hot(&LabelGrid { rows, cols, labels }, n)
    }

    #[test]
    fn uniform_grid_gives_uniform_mask() {
        let votes = one_hot(2, 3, vec![2; 6], 3);
        let mask = upsample_labels(&votes, 4, 8, 11).unwrap();
        assert!(mask.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn stride_one_is_identity() {
        let labels = vec![0, 1, 2, 1, 1, 0];
        let votes = one_hot(2, 3, labels.clone(), 3);
        let mask = upsample_labels(&votes, 1, 2, 3).unwrap();
        assert_eq!(mask.labels(), labels.as_slice());
    }

    #[test]
    fn midpoint_tie_goes_to_smaller_label() {
        let votes = one_hot(1, 2, vec![1, 0], 2);
        let f = interpolate_votes(&votes, 0.0, 0.5);
        assert_eq!(f, vec![0.5, 0.5]);
        assert_eq!(argmax(&f), 0);
        let votes = one_hot(1, 2, vec![0, 1], 2);
        assert_eq!(argmax(&interpolate_votes(&votes, 0.0, 0.5)), 0);
    }

    #[test]
    fn boundary_falls_between_cells() {
        // (0|1) at stride 4: pixels 0..=3 sit at or left of cell 0's
        // center region, 4..=7 on cell 1's side
        let votes = one_hot(1, 2, vec![0, 1], 2);
        let mask = upsample_labels(&votes, 4, 1, 8).unwrap();
        assert_eq!(mask.labels(), &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let votes = one_hot(2, 2, vec![0; 4], 1);
        assert!(upsample_labels(&votes, 4, 16, 16).is_err());
        assert!(upsample_labels(&votes, 0, 2, 2).is_err());
    }

    #[test]
    fn region_update_matches_full() {
        let mut labels = vec![0; 20];
        let before = one_hot(4, 5, labels.clone(), 3);
        let mut mask = upsample_labels(&before, 3, 12, 14).unwrap();
        labels[7] = 2;
        labels[19] = 1;
        let after = one_hot(4, 5, labels, 3);
        upsample_region(&after, 3, &mut mask, &[7, 19]).unwrap();
        assert_eq!(mask, upsample_labels(&after, 3, 12, 14).unwrap());
    }
}
