//! Frames, label masks, annotations and the stride grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport, Violation};

/// One RGB frame, row-major, channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    /// Wraps a row-major `height * width * 3` buffer. Range checks happen in
    /// [`validate_frames`].
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean of the three channels.
    #[inline]
    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        let [r, g, b] = self.pixel(row, col);
        (r + g + b) / 3.0
    }
}

/// Checks every video invariant and reports all violations at once.
pub fn validate_frames(frames: &[Frame]) -> std::result::Result<(), ValidationReport> {
    let mut violations = Vec::new();
    let Some(first) = frames.first() else {
        return Err(ValidationReport(vec![Violation::Empty]));
    };
    let (height, width) = (first.height, first.width);
    for (index, frame) in frames.iter().enumerate() {
        if frame.height == 0 || frame.width == 0 {
            violations.push(Violation::ZeroSized { frame: index });
            continue;
        }
        if frame.height != height || frame.width != width {
            violations.push(Violation::DimensionMismatch {
                frame: index,
                height: frame.height,
                width: frame.width,
            });
        }
        let expected = frame.height * frame.width * 3;
        if frame.data.len() != expected {
            violations.push(Violation::BufferLength {
                frame: index,
                expected,
                actual: frame.data.len(),
            });
            continue;
        }
        // one report per frame is enough to locate a bad range
        if let Some(i) = frame
            .data
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            let pixel = i / 3;
            violations.push(Violation::ChannelOutOfRange {
                frame: index,
                row: pixel / frame.width,
                col: pixel % frame.width,
                value: frame.data[i],
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationReport(violations))
    }
}

/// A validated sequence of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: Vec<Frame>,
}

impl VideoTensor {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        validate_frames(&frames).map_err(Error::InvalidVideo)?;
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn pixel_count(&self) -> usize {
        self.height() * self.width() * self.frame_count()
    }
}

pub fn validate_video(video: &VideoTensor) -> std::result::Result<(), ValidationReport> {
    validate_frames(video.frames())
}

/// Per-pixel object labels. 0 is background, 1..=K are objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0)
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u32) {
        self.labels[row * self.width + col] = label;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::MaskMismatch {
                height,
                width,
                actual_height: self.height,
                actual_width: self.width,
            });
        }
        Ok(())
    }

    /// Checks the labels against a declared object count.
    pub fn check_labels(&self, num_objects: u32) -> Result<()> {
        match self.labels.iter().find(|&&l| l > num_objects) {
            Some(&label) => Err(Error::LabelOutOfRange {
                label,
                max: num_objects,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Click,
    ScribblePoint,
    MaskPixel,
}

impl AnnotationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationKind::Click => "click",
            AnnotationKind::ScribblePoint => "scribble",
            AnnotationKind::MaskPixel => "mask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "click" => Some(AnnotationKind::Click),
            "scribble" | "scribble-point" => Some(AnnotationKind::ScribblePoint),
            "mask" | "mask-pixel" => Some(AnnotationKind::MaskPixel),
            _ => None,
        }
    }
}

/// A labeled full-resolution pixel supplied by a user (or the robot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
    pub label: u32,
    pub kind: AnnotationKind,
}

impl Annotation {
    pub fn click(frame: usize, row: usize, col: usize, label: u32) -> Self {
        Self {
            frame,
            row,
            col,
            label,
            kind: AnnotationKind::Click,
        }
    }

    pub fn check_bounds(&self, frame_count: usize, height: usize, width: usize) -> Result<()> {
        if self.frame >= frame_count {
            return Err(Error::FrameOutOfRange {
                index: self.frame,
                frame_count,
            });
        }
        if self.row >= height || self.col >= width {
            return Err(Error::OutOfBounds {
                row: self.row,
                col: self.col,
                height,
                width,
            });
        }
        Ok(())
    }
}

/// A cell of the stride-`s` lattice of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

/// Number of grid rows and columns for an image at the given stride.
pub fn grid_dims(height: usize, width: usize, stride: usize) -> (usize, usize) {
    (height.div_ceil(stride), width.div_ceil(stride))
}

/// Maps a full-resolution pixel to the grid cell containing it.
pub fn full_to_grid(
    row: usize,
    col: usize,
    stride: usize,
    height: usize,
    width: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidStride {
            stride,
            height,
            width,
        });
    }
    if row >= height || col >= width {
        return Err(Error::OutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    Ok((row / stride, col / stride))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn well_formed_video_validates() {
        let frames = vec![Frame::filled(16, 16, [0.2, 0.4, 1.0]); 3];
        assert!(validate_frames(&frames).is_ok());
        let video = VideoTensor::new(frames).unwrap();
        assert!(validate_video(&video).is_ok());
        assert_eq!(video.frame_count(), 3);
    }

    #[test]
    fn mismatched_frame_is_reported() {
        let frames = vec![
            Frame::filled(16, 16, [0.5; 3]),
            Frame::filled(16, 16, [0.5; 3]),
            Frame::filled(8, 8, [0.5; 3]),
        ];
        let report = validate_frames(&frames).unwrap_err();
        assert_eq!(report.to_string(), "dimension mismatch at frame 2 (8x8)");
        assert!(VideoTensor::new(frames).is_err());
    }

    #[test]
    fn out_of_range_channel_is_reported() {
        let mut frame = Frame::filled(4, 4, [0.5; 3]);
        frame.set_pixel(1, 2, [0.0, 1.5, 0.0]);
        let report = validate_frames(&[frame]).unwrap_err();
        assert!(report.to_string().starts_with("channel out of range"));
        assert_eq!(
            report.0[0],
            Violation::ChannelOutOfRange {
                frame: 0,
                row: 1,
                col: 2,
                value: 1.5
            }
        );
    }

    #[test]
    fn all_violations_are_collected() {
        let mut bad = Frame::filled(4, 4, [0.5; 3]);
        bad.set_pixel(0, 0, [-0.1, 0.0, 0.0]);
        let frames = vec![Frame::filled(4, 4, [0.5; 3]), Frame::filled(2, 2, [0.5; 3]), bad];
        assert_eq!(validate_frames(&frames).unwrap_err().0.len(), 2);
        assert_eq!(validate_frames(&[]).unwrap_err().0, vec![Violation::Empty]);
    }

    #[test]
    fn full_to_grid_examples() {
        assert_eq!(full_to_grid(0, 0, 8, 64, 64).unwrap(), (0, 0));
        assert_eq!(full_to_grid(15, 7, 8, 64, 64).unwrap(), (1, 0));
        assert_eq!(full_to_grid(23, 24, 8, 64, 64).unwrap(), (2, 3));
        assert!(matches!(
            full_to_grid(64, 0, 8, 64, 64),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(full_to_grid(0, 0, 0, 64, 64).is_err());
    }

    #[test]
    fn label_mask_checks() {
        let mask = LabelMask::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        assert_eq!(mask.max_label(), 2);
        assert_eq!(mask.count(1), 2);
        assert!(mask.check_labels(2).is_ok());
        assert!(matches!(
            mask.check_labels(1),
            Err(Error::LabelOutOfRange { label: 2, max: 1 })
        ));
        assert!(LabelMask::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn annotation_bounds() {
        let a = Annotation::click(1, 3, 4, 1);
        assert!(a.check_bounds(2, 8, 8).is_ok());
        assert!(a.check_bounds(1, 8, 8).is_err());
        assert!(a.check_bounds(2, 3, 8).is_err());
    }

    proptest! {
        #[test]
        fn stride_one_is_identity(r in 0usize..200, c in 0usize..200) {
            prop_assert_eq!(full_to_grid(r, c, 1, 200, 200).unwrap(), (r, c));
        }

        #[test]
        fn grid_cell_is_in_bounds(h in 1usize..100, w in 1usize..100, s in 1usize..12, fr in 0.0f64..1.0, fc in 0.0f64..1.0) {
            let r = ((h as f64) * fr) as usize % h;
            let c = ((w as f64) * fc) as usize % w;
            let (gr, gc) = full_to_grid(r, c, s, h, w).unwrap();
            let (rows, cols) = grid_dims(h, w, s);
            prop_assert!(gr < rows && gc < cols);
        }
    }
}
