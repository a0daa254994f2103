use serde::{Deserialize, Serialize};

use super::{Result, VolioError, Volume};

/// An 8-bit grayscale slice, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub slice_index: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(slice_index: usize, width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width * height).then_some(Self {
            slice_index,
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Percentile pair used to clip intensities before mapping to `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub low: f64,
    pub high: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self {
            low: 0.5,
            high: 99.5,
        }
    }
}

impl Window {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        let w = Self { low, high };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if (0.0..=100.0).contains(&self.low) && (0.0..=100.0).contains(&self.high) && self.low < self.high {
            Ok(())
        } else {
            Err(VolioError::Window {
                low: self.low,
                high: self.high,
            })
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `low,high`, got `{s}`"))?;
        let lo = lo.trim().parse().map_err(|_| format!("bad percentile `{lo}`"))?;
        let hi = hi.trim().parse().map_err(|_| format!("bad percentile `{hi}`"))?;
        Window::new(lo, hi).map_err(|e| e.to_string())
    }
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted data.
///
/// Uses the closest-ranks rule: position `p/100 · (n-1)` in sorted order.
/// Reorders `values` in place.
pub fn percentile(values: &mut [f32], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let pos = p / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_val = f64::from(*lo_val);
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().min_by(f32::total_cmp).map(f64::from).unwrap();
    lo_val + (hi_val - lo_val) * frac
}

/// Global intensity bounds for a volume under `window`.
pub fn window_bounds(vol: &Volume, window: Window) -> Result<(f64, f64)> {
    window.validate()?;
    let mut scratch = vol.voxels().to_vec();
    let lo = percentile(&mut scratch, window.low);
    let hi = percentile(&mut scratch, window.high);
    Ok((lo, hi))
}

/// Windows every slice into an 8-bit frame with one global intensity pair.
///
/// Values are clipped to the percentile bounds and mapped affinely onto
/// `[0, 255]` with round-to-nearest. A degenerate window (constant volume)
/// yields all-zero frames.
pub fn volume_to_frames(vol: &Volume, window: Window) -> Result<Vec<Frame>> {
    let (lo, hi) = window_bounds(vol, window)?;
    let span = hi - lo;
    let dims = vol.dims();
    let to_u8 = |v: f32| -> u8 {
        if span <= 0.0 || v.is_nan() {
            return 0;
        }
        let t = ((f64::from(v) - lo) / span).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    };
    Ok((0..dims.slices)
        .map(|s| Frame {
            slice_index: s,
            width: dims.cols,
            height: dims.rows,
            pixels: vol.plane(s).iter().map(|&v| to_u8(v)).collect(),
        })
        .collect())
}
