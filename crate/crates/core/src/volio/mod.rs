//! Volume and label ingestion, axis canonicalization and slice windowing.
//!
//! Everything in memory is in canonical `(slice, row, col)` order with the
//! column index varying fastest, so one frame is one contiguous plane.

mod frames;
mod nifti;
mod raw;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use frames::{percentile, volume_to_frames, window_bounds, Frame, Window};
pub use nifti::{decode_nifti, encode_nifti};
pub use raw::{decode_raw, encode_raw, RAW_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum VolioError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format ({field}): {detail}")]
    Format { field: &'static str, detail: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("label {label} is not in the label dictionary")]
    LabelDictionary { label: u8 },
    #[error("grid mismatch: expected {expected}, found {found}")]
    Grid { expected: Dims, found: Dims },
    #[error("invalid percentile window ({low}, {high})")]
    Window { low: f64, high: f64 },
    #[error("invalid volume: {0}")]
    Invalid(String),
}

pub type Result<T, E = VolioError> = std::result::Result<T, E>;

pub(crate) fn format_err(field: &'static str, detail: impl Into<String>) -> VolioError {
    VolioError::Format {
        field,
        detail: detail.into(),
    }
}

/// Grid extent in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Dims {
    pub const fn new(slices: usize, rows: usize, cols: usize) -> Self {
        Self { slices, rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.slices * self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn index(&self, slice: usize, row: usize, col: usize) -> usize {
        (slice * self.rows + row) * self.cols + col
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.slices, self.rows, self.cols)
    }
}

/// On-disk scalar type of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I16,
    U16,
    F32,
}

impl DType {
    pub const fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 | DType::U16 => 2,
            DType::F32 => 4,
        }
    }
}

/// Which file axis becomes the slice axis.
///
/// The file axes are named after NIfTI's `i, j, k` (fastest to slowest).
/// The two remaining axes keep their relative order, the slower one
/// becoming rows and the faster one columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    I,
    J,
    #[default]
    K,
}

impl std::str::FromStr for SliceAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "0" | "x" => Ok(SliceAxis::I),
            "j" | "1" | "y" => Ok(SliceAxis::J),
            "k" | "2" | "z" => Ok(SliceAxis::K),
            other => Err(format!("unknown slice axis `{other}` (expected i, j or k)")),
        }
    }
}

/// A 3D scalar volume in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
    spacing: Option<[f32; 3]>,
    source_dtype: DType,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>, source_dtype: DType) -> Result<Self> {
        if dims.slices == 0 || dims.rows == 0 || dims.cols == 0 {
            return Err(VolioError::Invalid(format!("zero extent in {dims}")));
        }
        if voxels.len() != dims.len() {
            return Err(VolioError::Invalid(format!(
                "{} voxels for a {dims} grid",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            voxels,
            spacing: None,
            source_dtype,
        })
    }

    /// Sets the voxel spacing `(slice, row, col)` in mm. Non-positive or
    /// non-finite spacings are rejected.
    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolioError::Invalid(format!("bad spacing {spacing:?}")));
        }
        self.spacing = Some(spacing);
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn spacing(&self) -> Option<[f32; 3]> {
        self.spacing
    }

    pub fn source_dtype(&self) -> DType {
        self.source_dtype
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> f32 {
        self.voxels[self.dims.index(slice, row, col)]
    }

    pub fn plane(&self, slice: usize) -> &[f32] {
        let n = self.dims.plane_len();
        &self.voxels[slice * n..(slice + 1) * n]
    }
}

/// Map from nonzero label id to structure name.
pub type LabelNames = BTreeMap<u8, String>;

/// Integer reference masks on the same grid as a [`Volume`]. Label 0 is
/// background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<u8>,
    names: LabelNames,
}

impl LabelVolume {
    /// Validates that every nonzero label is named and that 0 is not.
    pub fn new(dims: Dims, labels: Vec<u8>, names: LabelNames) -> Result<Self> {
        if labels.len() != dims.len() || dims.is_empty() {
            return Err(VolioError::Invalid(format!(
                "{} labels for a {dims} grid",
                labels.len()
            )));
        }
        if names.contains_key(&0) {
            return Err(VolioError::Invalid(
                "label 0 is background and cannot be named".into(),
            ));
        }
        let mut seen = [false; 256];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(label) = (1..=255u8).find(|&l| seen[l as usize] && !names.contains_key(&l)) {
            return Err(VolioError::LabelDictionary { label });
        }
        Ok(Self {
            dims,
            labels,
            names,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn names(&self) -> &LabelNames {
        &self.names
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> u8 {
        self.labels[self.dims.index(slice, row, col)]
    }

    /// Binary mask of `label` on one slice.
    pub fn slice_mask(&self, label: u8, slice: usize) -> crate::BinaryMask {
        let n = self.dims.plane_len();
        let bits = self.labels[slice * n..(slice + 1) * n]
            .iter()
            .map(|&l| l == label)
            .collect();
        crate::BinaryMask::from_bits(self.dims.cols, self.dims.rows, bits)
            .expect("plane length matches dims")
    }

    /// Binary mask of `label` over the whole stack.
    pub fn mask(&self, label: u8) -> crate::MaskVolume {
        let bits = self.labels.iter().map(|&l| l == label).collect();
        crate::MaskVolume::from_bits(self.dims, bits).expect("length matches dims")
    }

    /// Union of all named structures.
    pub fn foreground(&self) -> crate::MaskVolume {
        let bits = self.labels.iter().map(|&l| l != 0).collect();
        crate::MaskVolume::from_bits(self.dims, bits).expect("length matches dims")
    }

    pub fn voxel_count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Fails with a grid error unless `dims` matches this volume's grid.
    pub fn ensure_grid(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(VolioError::Grid {
                expected: dims,
                found: self.dims,
            });
        }
        Ok(())
    }

    /// Voxels as `f32`, for writing through the volume encoders.
    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            voxels: self.labels.iter().map(|&l| f32::from(l)).collect(),
            spacing: None,
            source_dtype: DType::U8,
        }
    }
}

/// File-order array as stored on disk: `nx` fastest, `nz` slowest.
#[derive(Debug, Clone)]
pub(crate) struct FileArray {
    pub extent: [usize; 3],
    pub data: Vec<f32>,
    pub dtype: DType,
    pub pixdim: Option<[f32; 3]>,
}

impl FileArray {
    /// Permutes into canonical order for the chosen slice axis.
    pub fn canonicalize(self, axis: SliceAxis) -> Result<Volume> {
        let [nx, ny, nz] = self.extent;
        // (slice, row, col) as file-axis numbers.
        let order = match axis {
            SliceAxis::K => [2, 1, 0],
            SliceAxis::J => [1, 2, 0],
            SliceAxis::I => [0, 2, 1],
        };
        let dims = Dims::new(
            self.extent[order[0]],
            self.extent[order[1]],
            self.extent[order[2]],
        );
        let voxels = if axis == SliceAxis::K {
            self.data
        } else {
            let strides = [1, nx, nx * ny];
            let (ss, rs, cs) = (strides[order[0]], strides[order[1]], strides[order[2]]);
            let mut out = Vec::with_capacity(self.data.len());
            for s in 0..dims.slices {
                for r in 0..dims.rows {
                    for c in 0..dims.cols {
                        out.push(self.data[s * ss + r * rs + c * cs]);
                    }
                }
            }
            debug_assert_eq!(out.len(), nx * ny * nz);
            out
        };
        let mut vol = Volume::new(dims, voxels, self.dtype)?;
        if let Some(p) = self.pixdim {
            let spacing = [p[order[0]], p[order[1]], p[order[2]]];
            if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
                vol.spacing = Some(spacing);
            }
        }
        Ok(vol)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|source| VolioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::MultiGzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| VolioError::Integrity(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn decode_any(bytes: &[u8], axis: SliceAxis) -> Result<Volume> {
    let array = if bytes.starts_with(RAW_MAGIC) {
        raw::parse_raw(bytes)?
    } else {
        nifti::parse_nifti(bytes)?
    };
    array.canonicalize(axis)
}

/// Loads a NIfTI-1 (`.nii` / `.nii.gz`) or raw `SCVL` volume.
///
/// The format is sniffed from the content, not the extension. Without an
/// override the slowest file axis becomes the slice axis.
pub fn load_volume(path: impl AsRef<Path>, slice_axis: Option<SliceAxis>) -> Result<Volume> {
    let bytes = read_file(path.as_ref())?;
    decode_any(&bytes, slice_axis.unwrap_or_default())
}

/// Loads a label mask and checks it against `names`.
///
/// Values must be non-negative integers no larger than 255.
pub fn load_labels(
    path: impl AsRef<Path>,
    names: &LabelNames,
    slice_axis: Option<SliceAxis>,
) -> Result<LabelVolume> {
    let vol = load_volume(path, slice_axis)?;
    labels_from_volume(&vol, names)
}

/// Casts a scalar volume to labels, failing on any value that does not cast
/// losslessly.
pub fn labels_from_volume(vol: &Volume, names: &LabelNames) -> Result<LabelVolume> {
    let labels = vol
        .voxels()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(format_err("labels", format!("value {v} is not a label id")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVolume::new(vol.dims(), labels, names.clone())
}

/// Writes a volume. A `.gz` suffix selects gzip compression; a `.scvl`
/// suffix selects the raw test format; anything else is NIfTI-1.
pub fn save_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    let path = path.as_ref();
    let name = path.to_string_lossy();
    let stem = name.strip_suffix(".gz").unwrap_or(&name);
    let payload = if stem.ends_with(".scvl") {
        encode_raw(vol)
    } else {
        encode_nifti(vol)
    };
    let bytes = if name.ends_with(".gz") {
        use std::io::Write;
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&payload)
            .and_then(|_| enc.finish())
            .map_err(|source| VolioError::Io {
                path: path.to_path_buf(),
                source,
            })?
    } else {
        payload
    };
    std::fs::write(path, bytes).map_err(|source| VolioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelVolume) -> Result<()> {
    save_volume(path, &labels.to_volume())
}

/// Parses label dictionaries written as `1=femur,2=tibia`.
pub fn parse_label_names(spec: &str) -> std::result::Result<LabelNames, String> {
    let mut names = LabelNames::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (id, name) = part
            .split_once('=')
            .ok_or_else(|| format!("expected `id=name`, got `{part}`"))?;
        let id: u8 = id
            .trim()
            .parse()
            .map_err(|_| format!("bad label id `{id}`"))?;
        if id == 0 {
            return Err("label 0 is background".into());
        }
        if names.insert(id, name.trim().to_string()).is_some() {
            return Err(format!("label {id} given twice"));
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_file(extent: [usize; 3]) -> FileArray {
        let n = extent.iter().product::<usize>();
        FileArray {
            extent,
            data: (0..n).map(|v| v as f32).collect(),
            dtype: DType::I16,
            pixdim: Some([0.5, 0.7, 1.5]),
        }
    }

    #[test]
    fn default_axis_is_identity() {
        let vol = ramp_file([2, 3, 4]).canonicalize(SliceAxis::K).unwrap();
        assert_eq!(vol.dims(), Dims::new(4, 3, 2));
        assert_eq!(vol.get(3, 2, 1), 23.0);
        assert_eq!(vol.spacing(), Some([1.5, 0.7, 0.5]));
    }

    #[test]
    fn override_axes_remap() {
        // voxel(i,j,k) = i + 2j + 6k
        let vol = ramp_file([2, 3, 4]).canonicalize(SliceAxis::I).unwrap();
        assert_eq!(vol.dims(), Dims::new(2, 4, 3));
        for i in 0..2 {
            for k in 0..4 {
                for j in 0..3 {
                    assert_eq!(vol.get(i, k, j), (i + 2 * j + 6 * k) as f32);
                }
            }
        }
        let vol = ramp_file([2, 3, 4]).canonicalize(SliceAxis::J).unwrap();
        assert_eq!(vol.dims(), Dims::new(3, 4, 2));
        assert_eq!(vol.get(2, 3, 1), (1 + 2 * 2 + 6 * 3) as f32);
        assert_eq!(vol.spacing(), Some([0.7, 1.5, 0.5]));
    }

    #[test]
    fn label_dictionary_enforced() {
        let dims = Dims::new(1, 1, 3);
        let names: LabelNames = [(1, "femur".into()), (2, "tibia".into())].into();
        assert!(LabelVolume::new(dims, vec![0, 1, 2], names.clone()).is_ok());
        let err = LabelVolume::new(dims, vec![0, 3, 2], names).unwrap_err();
        assert!(matches!(err, VolioError::LabelDictionary { label: 3 }));
    }

    #[test]
    fn all_zero_labels_have_no_foreground() {
        let lv = LabelVolume::new(Dims::new(2, 2, 2), vec![0; 8], LabelNames::new()).unwrap();
        assert_eq!(lv.foreground().count(), 0);
    }

    #[test]
    fn fractional_labels_rejected() {
        let vol = Volume::new(Dims::new(1, 1, 2), vec![1.0, 1.5], DType::F32).unwrap();
        let names: LabelNames = [(1, "femur".into())].into();
        assert!(matches!(
            labels_from_volume(&vol, &names),
            Err(VolioError::Format { field: "labels", .. })
        ));
    }

    #[test]
    fn grid_check() {
        let lv = LabelVolume::new(Dims::new(1, 2, 2), vec![0; 4], LabelNames::new()).unwrap();
        assert!(lv.ensure_grid(Dims::new(1, 2, 2)).is_ok());
        assert!(matches!(
            lv.ensure_grid(Dims::new(2, 2, 2)),
            Err(VolioError::Grid { .. })
        ));
    }

    #[test]
    fn label_name_parsing() {
        let names = parse_label_names("1=femur, 2=tibia").unwrap();
        assert_eq!(names[&2], "tibia");
        assert!(parse_label_names("0=bg").is_err());
        assert!(parse_label_names("1=a,1=b").is_err());
        assert!(parse_label_names("femur").is_err());
    }
}
