//! Run-length encoding of label masks: row-major `[label, run]` pairs.

use pixseg_core::video::LabelMask;

/// Adjacent runs always carry different labels and every run is positive.
pub fn encode(mask: &LabelMask) -> Vec<[u32; 2]> {
    let mut runs: Vec<[u32; 2]> = Vec::new();
    for &label in mask.labels() {
        match runs.last_mut() {
            Some([l, n]) if *l == label => *n += 1,
            _ => runs.push([label, 1]),
        }
    }
    runs
}

#[derive(Debug, PartialEq, Eq)]
pub enum DecodeError {
    ZeroRun(usize),
    RepeatedLabel(usize),
    Length { expected: usize, actual: usize },
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::ZeroRun(i) => write!(f, "run {i} has length 0"),
            DecodeError::RepeatedLabel(i) => write!(f, "run {i} repeats the previous label"),
            DecodeError::Length { expected, actual } => {
                write!(f, "runs cover {actual} pixels, expected {expected}")
            }
        }
    }
}

impl std::error::Error for DecodeError {}

pub fn decode(runs: &[[u32; 2]], height: usize, width: usize) -> Result<LabelMask, DecodeError> {
    let mut labels = Vec::with_capacity(height * width);
    for (i, &[label, run]) in runs.iter().enumerate() {
        if run == 0 {
            return Err(DecodeError::ZeroRun(i));
        }
        if i > 0 && runs[i - 1][0] == label {
            return Err(DecodeError::RepeatedLabel(i));
        }
        if labels.len() + run as usize > height * width {
            return Err(DecodeError::Length {
                expected: height * width,
                actual: labels.len() + run as usize,
            });
        }
        labels.extend(std::iter::repeat_n(label, run as usize));
    }
    if labels.len() != height * width {
        return Err(DecodeError::Length {
            expected: height * width,
            actual: labels.len(),
        });
    }
    Ok(LabelMask::new(height, width, labels).expect("length checked"))
}
