use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid video: {0}")]
    InvalidVideo(ValidationReport),
    #[error("pixel ({row}, {col}) outside {height}x{width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("frame index {index} out of range for {frame_count} frames")]
    FrameOutOfRange { index: usize, frame_count: usize },
    #[error("invalid stride {stride} for {height}x{width} image")]
    InvalidStride {
        stride: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("mask size {actual_height}x{actual_width} does not match video {height}x{width}")]
    MaskMismatch {
        height: usize,
        width: usize,
        actual_height: usize,
        actual_width: usize,
    },
    #[error("label {label} exceeds object count {max}")]
    LabelOutOfRange { label: u32, max: u32 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("reference pool is empty")]
    EmptyPool,
    #[error("anchor {anchor} has an empty negative pool")]
    EmptyNegativePool { anchor: usize },
    #[error("pool sample {index} comes from anchor frame {frame}")]
    PoolFromAnchorFrame { index: usize, frame: usize },
    #[error("need at least {required} frames, got {actual}")]
    TooFewFrames { required: usize, actual: usize },
    #[error("no foreground reference in the annotated frame")]
    NoForegroundReference,
    #[error("no frame with both foreground and background cells to anchor on")]
    NoAnchorFrame,
    #[error("insufficient references: need at least two distinct labels")]
    InsufficientReferences,
    #[error("object {0} does not appear in any ground-truth frame")]
    MissingObject(u32),
    #[error("click budget {budget} below K+1 = {required}")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("inconsistent neighbor lists: {0}")]
    InconsistentNeighbors(String),
    #[error("sequence length mismatch: {predictions} predictions vs {ground_truth} ground-truth masks")]
    LengthMismatch {
        predictions: usize,
        ground_truth: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Every invariant violation found in a candidate video.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport(pub Vec<Violation>);

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    ZeroSized { frame: usize },
    BufferLength { frame: usize, expected: usize, actual: usize },
    DimensionMismatch { frame: usize, height: usize, width: usize },
    ChannelOutOfRange { frame: usize, row: usize, col: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "video has no frames"),
            Violation::ZeroSized { frame } => write!(f, "zero-sized frame {frame}"),
            Violation::BufferLength {
                frame,
                expected,
                actual,
            } => write!(
                f,
                "frame {frame} buffer holds {actual} values, expected {expected}"
            ),
            Violation::DimensionMismatch {
                frame,
                height,
                width,
            } => write!(f, "dimension mismatch at frame {frame} ({height}x{width})"),
            Violation::ChannelOutOfRange {
                frame,
                row,
                col,
                value,
            } => write!(
                f,
                "channel out of range at frame {frame} pixel ({row}, {col}): {value}"
            ),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
