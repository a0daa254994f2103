//! Binary masks in 2D (one slice) and 3D (a stack of slices).

use crate::volio::Dims;

/// A row-major binary mask over a `width × height` frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Wraps row-major bits. Returns `None` when the length does not match.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width * height).then_some(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from rows of 0/1 values; handy in tests and docs.
    ///
    /// Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged mask rows");
            bits.extend(row.iter().map(|&v| v != 0));
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixels as `(row, col)`, in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dims differ"
        );
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        BinaryMask { bits, ..*self }
    }
}

/// A stack of `S` binary slices sharing one `(H, W)` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    dims: Dims,
    bits: Vec<bool>,
}

impl MaskVolume {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.len()],
        }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == dims.len()).then_some(Self { dims, bits })
    }

    /// Stacks per-slice masks. Returns `None` on an empty list or mixed grids.
    pub fn from_slices(slices: &[BinaryMask]) -> Option<Self> {
        let first = slices.first()?;
        let (w, h) = (first.width, first.height);
        if slices.iter().any(|m| m.width != w || m.height != h) {
            return None;
        }
        let dims = Dims::new(slices.len(), h, w);
        let bits = slices.iter().flat_map(|m| m.bits.iter().copied()).collect();
        Some(Self { dims, bits })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn slice(&self, index: usize) -> BinaryMask {
        let plane = self.dims.plane_len();
        BinaryMask {
            width: self.dims.cols,
            height: self.dims.rows,
            bits: self.bits[index * plane..(index + 1) * plane].to_vec(),
        }
    }

    pub fn union(&self, other: &MaskVolume) -> MaskVolume {
        assert_eq!(self.dims, other.dims, "mask volume dims differ");
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        MaskVolume {
            dims: self.dims,
            bits,
        }
    }
}
