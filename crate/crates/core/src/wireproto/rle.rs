//! Run-length mask codec.
//!
//! Runs alternate background/foreground over the row-major scan, starting
//! with background. A mask whose first pixel is foreground therefore starts
//! with a zero-length run; no other run may be zero.

use serde::{Deserialize, Serialize};

use crate::BinaryMask;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("runs sum to {sum}, expected {expected} for a {width}×{height} mask")]
    RunSum {
        sum: usize,
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("zero-length run at position {0}")]
    ZeroRun(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<usize>,
}

impl RleMask {
    pub fn validate(&self) -> Result<(), CodecError> {
        if let Some(i) = self.runs.iter().skip(1).position(|&r| r == 0) {
            return Err(CodecError::ZeroRun(i + 1));
        }
        let expected = self.width * self.height;
        let sum = self.runs.iter().try_fold(0usize, |acc, &r| acc.checked_add(r));
        match sum {
            Some(sum) if sum == expected => Ok(()),
            sum => Err(CodecError::RunSum {
                sum: sum.unwrap_or(usize::MAX),
                expected,
                width: self.width,
                height: self.height,
            }),
        }
    }
}

pub fn encode_mask_rle(mask: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in mask.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    if len > 0 || !runs.is_empty() {
        runs.push(len);
    }
    RleMask {
        width: mask.width(),
        height: mask.height(),
        runs,
    }
}

pub fn decode_mask_rle(rle: &RleMask) -> Result<BinaryMask, CodecError> {
    rle.validate()?;
    let mut bits = Vec::with_capacity(rle.width * rle.height);
    for (i, &run) in rle.runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, run));
    }
    Ok(BinaryMask::from_bits(rle.width, rle.height, bits).expect("run sum checked"))
}
