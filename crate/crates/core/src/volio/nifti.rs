//! Minimal single-file NIfTI-1 reader and writer for 3D scalar volumes.

use super::{format_err, DType, FileArray, Result, SliceAxis, VolioError, Volume};

const HEADER_LEN: usize = 348;
/// Header plus the 4-byte extension flag.
const DATA_OFFSET: usize = 352;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(off)),
            Endian::Big => i16::from_be_bytes(self.arr(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(off)),
            Endian::Big => f32::from_be_bytes(self.arr(off)),
        }
    }

    fn u16(&self, off: usize) -> u16 {
        self.i16(off) as u16
    }
}

fn dtype_from_code(code: i16) -> Result<DType> {
    match code {
        2 => Ok(DType::U8),
        4 => Ok(DType::I16),
        16 => Ok(DType::F32),
        512 => Ok(DType::U16),
        other => Err(format_err(
            "datatype",
            format!("code {other} (supported: 2 u8, 4 i16, 512 u16, 16 f32)"),
        )),
    }
}

fn dtype_code(dtype: DType) -> i16 {
    match dtype {
        DType::U8 => 2,
        DType::I16 => 4,
        DType::F32 => 16,
        DType::U16 => 512,
    }
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<FileArray> {
    if bytes.len() < HEADER_LEN {
        return Err(VolioError::Integrity(format!(
            "{} bytes is shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    let endian = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        (n, _) => return Err(format_err("sizeof_hdr", format!("{n}, expected 348"))),
    };
    let r = Reader { bytes, endian };

    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(format_err(
                "magic",
                "two-file (.hdr/.img) NIfTI is not supported",
            ))
        }
        m => return Err(format_err("magic", format!("{m:?}"))),
    }

    let ndim = r.i16(40);
    if ndim != 3 {
        return Err(format_err("dim[0]", format!("{ndim}, only 3D volumes are supported")));
    }
    let mut extent = [0usize; 3];
    for (axis, e) in extent.iter_mut().enumerate() {
        let d = r.i16(42 + 2 * axis);
        if d < 1 {
            return Err(format_err("dim", format!("dim[{}] = {d}", axis + 1)));
        }
        *e = d as usize;
    }

    let dtype = dtype_from_code(r.i16(70))?;
    let bitpix = r.i16(72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(format_err(
            "bitpix",
            format!("{bitpix} does not match datatype {dtype:?}"),
        ));
    }

    let pixdim = [r.f32(80), r.f32(84), r.f32(88)];
    let vox_offset = r.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(format_err("vox_offset", format!("{vox_offset}")));
    }
    let offset = vox_offset as usize;
    let slope = r.f32(112);
    let inter = r.f32(116);

    let n = extent.iter().product::<usize>();
    let need = offset + n * dtype.size();
    if bytes.len() < need {
        return Err(VolioError::Integrity(format!(
            "payload truncated: need {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = Reader {
        bytes: &bytes[offset..need],
        endian,
    };
    let mut data: Vec<f32> = match dtype {
        DType::U8 => payload.bytes.iter().map(|&b| f32::from(b)).collect(),
        DType::I16 => (0..n).map(|i| f32::from(payload.i16(2 * i))).collect(),
        DType::U16 => (0..n).map(|i| f32::from(payload.u16(2 * i))).collect(),
        DType::F32 => (0..n).map(|i| payload.f32(4 * i)).collect(),
    };
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    Ok(FileArray {
        extent,
        data,
        dtype,
        pixdim: Some(pixdim),
    })
}

/// Decodes an uncompressed NIfTI-1 byte buffer.
pub fn decode_nifti(bytes: &[u8], slice_axis: SliceAxis) -> Result<Volume> {
    parse_nifti(bytes)?.canonicalize(slice_axis)
}

/// Encodes a volume as little-endian single-file NIfTI-1 with the slice axis
/// on `k`. Voxels are cast to the volume's source dtype and no scaling is
/// recorded.
pub fn encode_nifti(vol: &Volume) -> Vec<u8> {
    let dims = vol.dims();
    let dtype = vol.source_dtype();
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_LEN as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, 3);
    put_i16(&mut h, 42, dims.cols as i16);
    put_i16(&mut h, 44, dims.rows as i16);
    put_i16(&mut h, 46, dims.slices as i16);
    for d in 4..8 {
        put_i16(&mut h, 40 + 2 * d, 1);
    }
    put_i16(&mut h, 70, dtype_code(dtype));
    put_i16(&mut h, 72, (dtype.size() * 8) as i16);
    let [ss, rs, cs] = vol.spacing().unwrap_or([1.0; 3]);
    put_f32(&mut h, 76, 1.0);
    put_f32(&mut h, 80, cs);
    put_f32(&mut h, 84, rs);
    put_f32(&mut h, 88, ss);
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    // scl_slope stays 0: stored values are the voxel values.
    h[123] = 2; // mm
    let descrip = b"slicecast";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    h[344..348].copy_from_slice(b"n+1\0");

    h.reserve(vol.voxels().len() * dtype.size());
    for &v in vol.voxels() {
        match dtype {
            DType::U8 => h.push(v as u8),
            DType::I16 => h.extend_from_slice(&(v as i16).to_le_bytes()),
            DType::U16 => h.extend_from_slice(&(v as u16).to_le_bytes()),
            DType::F32 => h.extend_from_slice(&v.to_le_bytes()),
        }
    }
    h
}
