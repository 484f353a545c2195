//! The embedding model: hand-crafted patch features per stride cell, the
//! normalized position and frame number appended, then a two-layer head
//! applied independently to every cell (a stack of 1x1 convolutions).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{grid_dims, Frame, VideoTensor};

/// Dimension of the base patch features.
pub const BASE_DIM: usize = 8;
/// Base features plus column, row and frame channels.
pub const AUGMENTED_DIM: usize = BASE_DIM + 3;

/// A row-major grid of equally sized vectors, one per stride cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    stride: usize,
    data: Vec<f64>,
}

/// Base patch features of one frame.
pub type FeatureGrid = VectorGrid;
/// Base features with the spatio-temporal channels appended.
pub type AugmentedFeatureGrid = VectorGrid;
/// Output of the head for one frame.
pub type EmbeddingGrid = VectorGrid;

impl VectorGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, stride: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * cols * dim,
                actual: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            dim,
            stride,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize, stride: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            stride,
            data: vec![0.0; rows * cols * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        self.cell_at(row * self.cols + col)
    }

    /// Cell by row-major index.
    #[inline]
    pub fn cell_at(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub stride: usize,
    pub lambda_space: f64,
    pub lambda_time: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            stride: 8,
            lambda_space: 1.0,
            lambda_time: 1.0,
        }
    }
}

/// Per-cell patch statistics: mean RGB, RGB standard deviation, and the mean
/// horizontal and vertical forward differences of intensity.
pub fn extract_base_features(frame: &Frame, stride: usize) -> Result<FeatureGrid> {
    let (height, width) = (frame.height(), frame.width());
    if stride == 0 || (stride > height && stride > width) {
        return Err(Error::InvalidStride {
            stride,
            height,
            width,
        });
    }
    let (rows, cols) = grid_dims(height, width, stride);
    let mut data = Vec::with_capacity(rows * cols * BASE_DIM);
    for gr in 0..rows {
        let r0 = gr * stride;
        let r1 = (r0 + stride).min(height);
        for gc in 0..cols {
            let c0 = gc * stride;
            let c1 = (c0 + stride).min(width);
            let n = ((r1 - r0) * (c1 - c0)) as f64;

            let mut sum = [0.0; 3];
            let mut grad = [0.0; 2];
            for r in r0..r1 {
                for c in c0..c1 {
                    let px = frame.pixel(r, c);
                    for k in 0..3 {
                        sum[k] += px[k];
                    }
                    let here = frame.intensity(r, c);
                    grad[0] += frame.intensity(r, (c + 1).min(width - 1)) - here;
                    grad[1] += frame.intensity((r + 1).min(height - 1), c) - here;
                }
            }
            let mean = sum.map(|s| s / n);
            let mut var = [0.0; 3];
            for r in r0..r1 {
                for c in c0..c1 {
                    let px = frame.pixel(r, c);
                    for k in 0..3 {
                        var[k] += (px[k] - mean[k]).powi(2);
                    }
                }
            }
            data.extend_from_slice(&mean);
            data.extend(var.iter().map(|v| (v / n).sqrt()));
            data.extend(grad.iter().map(|g| g / n));
        }
    }
    VectorGrid::new(rows, cols, BASE_DIM, stride, data)
}

/// Appends `lambda_space * col/(cols-1)`, `lambda_space * row/(rows-1)` and
/// `lambda_time * frame/(frame_count-1)` to every cell. Degenerate axes
/// contribute 0.
pub fn augment_spatiotemporal(
    features: &FeatureGrid,
    frame_index: usize,
    frame_count: usize,
    lambda_space: f64,
    lambda_time: f64,
) -> Result<AugmentedFeatureGrid> {
    if frame_index >= frame_count {
        return Err(Error::FrameOutOfRange {
            index: frame_index,
            frame_count,
        });
    }
    let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let (rows, cols) = (features.rows, features.cols);
    let time = lambda_time * norm(frame_index, frame_count);
    let dim = features.dim + 3;
    let mut data = Vec::with_capacity(rows * cols * dim);
    for row in 0..rows {
        for col in 0..cols {
            data.extend_from_slice(features.cell(row, col));
            data.push(lambda_space * norm(col, cols));
            data.push(lambda_space * norm(row, rows));
            data.push(time);
        }
    }
    VectorGrid::new(rows, cols, dim, features.stride, data)
}

/// Augmented features for every frame of a video.
pub fn augmented_video_features(video: &VideoTensor, config: &EmbedConfig) -> Result<Vec<AugmentedFeatureGrid>> {
    let frame_count = video.frame_count();
    video
        .frames()
        .par_iter()
        .enumerate()
        .map(|(j, frame)| {
            let base = extract_base_features(frame, config.stride)?;
            augment_spatiotemporal(&base, j, frame_count, config.lambda_space, config.lambda_time)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Disables the nonlinearity. Used for identity-composition checks.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = apply(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Weights of the two-layer head, stored flat as `w1 | b1 | w2 | b2` with
/// row-major `w1: hidden x input` and `w2: output x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: Activation,
    params: Vec<f64>,
}

impl HeadParams {
    pub fn param_count_for(input_dim: usize, hidden_dim: usize, output_dim: usize) -> usize {
        input_dim * hidden_dim + hidden_dim + hidden_dim * output_dim + output_dim
    }

    pub fn from_flat(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Self::param_count_for(input_dim, hidden_dim, output_dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation,
            params,
        })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation,
            params: vec![0.0; Self::param_count_for(input_dim, hidden_dim, output_dim)],
        }
    }

    /// Identity weights in both layers with no nonlinearity: `f(x) = x`.
    pub fn identity(dim: usize) -> Self {
        let mut head = Self::zeros(dim, dim, dim, Activation::Identity);
        for i in 0..dim {
            head.w1_mut()[i * dim + i] = 1.0;
            head.w2_mut()[i * dim + i] = 1.0;
        }
        head
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.params
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.input_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.hidden_dim * self.output_dim;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, ..] = self.offsets();
        &self.params[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [.., b2] = self.offsets();
        &self.params[b2..]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let [w1, b1, ..] = self.offsets();
        &mut self.params[w1..b1]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let [_, _, w2, b2] = self.offsets();
        &mut self.params[w2..b2]
    }

    /// Runs one input through the head, writing the post-activation hidden
    /// layer into `hidden` and the embedding into `out`.
    #[inline]
    pub fn forward_into(&self, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
            let z = b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            *h = self.activation.apply(z);
        }
        for (o, e) in out.iter_mut().enumerate() {
            let row = &w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            *e = b2[o] + row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>();
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.output_dim];
        self.forward_into(input, &mut hidden, &mut out);
        out
    }
}

/// Seeded uniform initialization with standard deviation `1/sqrt(fan_in)` per
/// layer and zero biases.
pub fn head_init(seed: u64, input_dim: usize, hidden_dim: usize, output_dim: usize) -> HeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = HeadParams::zeros(input_dim, hidden_dim, output_dim, Activation::Tanh);
    let bound1 = (3.0 / input_dim as f64).sqrt();
    for w in head.w1_mut() {
        *w = rng.random_range(-bound1..bound1);
    }
    let bound2 = (3.0 / hidden_dim as f64).sqrt();
    for w in head.w2_mut() {
        *w = rng.random_range(-bound2..bound2);
    }
    head
}

/// Applies the head to every cell independently.
pub fn head_forward(params: &HeadParams, grid: &AugmentedFeatureGrid) -> Result<EmbeddingGrid> {
    if grid.dim != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            actual: grid.dim,
        });
    }
    let out_dim = params.output_dim;
    let mut data = vec![0.0; grid.cell_count() * out_dim];
    data.par_chunks_mut(out_dim)
        .zip(grid.data.par_chunks(grid.dim))
        .for_each_init(
            || vec![0.0; params.hidden_dim],
            |hidden, (out, input)| params.forward_into(input, hidden, out),
        );
    let embeddings = VectorGrid::new(grid.rows, grid.cols, out_dim, grid.stride, data)?;
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("embeddings"));
    }
    Ok(embeddings)
}

/// Embeds every frame. Depends only on the video, the head and the config.
pub fn embed_video(video: &VideoTensor, params: &HeadParams, config: &EmbedConfig) -> Result<Vec<EmbeddingGrid>> {
    if params.input_dim != AUGMENTED_DIM {
        return Err(Error::DimensionMismatch {
            expected: AUGMENTED_DIM,
            actual: params.input_dim,
        });
    }
    augmented_video_features(video, config)?
        .iter()
        .map(|features| head_forward(params, features))
        .collect()
}

/// FNV-1a over the bit patterns of every embedding value.
pub fn embedding_hash(grids: &[EmbeddingGrid]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for grid in grids {
        for v in grid.data() {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    hash
}
