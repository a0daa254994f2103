//! The `SCVL` raw test format.
//!
//! Layout (little-endian): magic `SCVL`, then `u32` S, H, W, then one dtype
//! byte (1 u8, 2 i16, 3 u16, 4 f32), then the canonical row-major payload.

use super::{format_err, DType, FileArray, Result, SliceAxis, VolioError, Volume};

pub const RAW_MAGIC: &[u8; 4] = b"SCVL";
const PAYLOAD_OFFSET: usize = 17;

fn code(dtype: DType) -> u8 {
    match dtype {
        DType::U8 => 1,
        DType::I16 => 2,
        DType::U16 => 3,
        DType::F32 => 4,
    }
}

pub(crate) fn parse_raw(bytes: &[u8]) -> Result<FileArray> {
    if bytes.len() < PAYLOAD_OFFSET {
        return Err(VolioError::Integrity("raw header truncated".into()));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(format_err("magic", format!("{:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (s, h, w) = (word(0), word(1), word(2));
    if s == 0 || h == 0 || w == 0 {
        return Err(format_err("dims", format!("{s}×{h}×{w}")));
    }
    let dtype = match bytes[16] {
        1 => DType::U8,
        2 => DType::I16,
        3 => DType::U16,
        4 => DType::F32,
        other => return Err(format_err("dtype", format!("code {other}"))),
    };
    let n = s * h * w;
    let payload = &bytes[PAYLOAD_OFFSET..];
    if payload.len() < n * dtype.size() {
        return Err(VolioError::Integrity(format!(
            "payload truncated: need {} bytes, have {}",
            n * dtype.size(),
            payload.len()
        )));
    }
    let data = match dtype {
        DType::U8 => payload[..n].iter().map(|&b| f32::from(b)).collect(),
        DType::I16 => payload
            .chunks_exact(2)
            .take(n)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        DType::U16 => payload
            .chunks_exact(2)
            .take(n)
            .map(|c| f32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .take(n)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Ok(FileArray {
        extent: [w, h, s],
        data,
        dtype,
        pixdim: None,
    })
}

pub fn decode_raw(bytes: &[u8], slice_axis: SliceAxis) -> Result<Volume> {
    parse_raw(bytes)?.canonicalize(slice_axis)
}

pub fn encode_raw(vol: &Volume) -> Vec<u8> {
    let d = vol.dims();
    let dtype = vol.source_dtype();
    let mut out = Vec::with_capacity(PAYLOAD_OFFSET + d.len() * dtype.size());
    out.extend_from_slice(RAW_MAGIC);
    for v in [d.slices, d.rows, d.cols] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(code(dtype));
    for &v in vol.voxels() {
        match dtype {
            DType::U8 => out.push(v as u8),
            DType::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            DType::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            DType::F32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}
