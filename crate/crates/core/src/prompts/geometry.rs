use serde::{Deserialize, Serialize};

use crate::BinaryMask;

/// Mean foreground `(x, y)` = `(col, row)`, or `None` for an empty mask.
///
/// Not rounded and not snapped: for concave shapes the result can land
/// outside the mask.
pub fn centroid(mask: &BinaryMask) -> Option<(f64, f64)> {
    let (mut n, mut sx, mut sy) = (0usize, 0f64, 0f64);
    for (r, c) in mask.foreground() {
        n += 1;
        sx += c as f64;
        sy += r as f64;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Inclusive pixel bounds of a box, in `(x, y)` = `(col, row)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxGeometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Tight axis-aligned box over the foreground, or `None` for an empty mask.
pub fn bounding_box(mask: &BinaryMask) -> Option<BoxGeometry> {
    let mut it = mask.foreground();
    let (r0, c0) = it.next()?;
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (r0, r0, c0, c0);
    for (r, c) in it {
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    Some(BoxGeometry {
        x_min: cmin as f64,
        y_min: rmin as f64,
        x_max: cmax as f64,
        y_max: rmax as f64,
    })
}

/// Foreground pixel nearest to `(x, y)` by Euclidean distance; ties go to the
/// first pixel in row-major order.
pub fn nearest_foreground(mask: &BinaryMask, x: f64, y: f64) -> Option<(f64, f64)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (r, c) in mask.foreground() {
        let d = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some(((r, c), d));
        }
    }
    best.map(|((r, c), _)| (c as f64, r as f64))
}

/// Pixel whose center is nearest to a continuous point, clamped to the frame.
pub fn pixel_of(x: f64, y: f64, width: usize, height: usize) -> (usize, usize) {
    let clamp = |v: f64, n: usize| (v + 0.5).floor().clamp(0.0, (n.max(1) - 1) as f64) as usize;
    (clamp(y, height), clamp(x, width))
}
