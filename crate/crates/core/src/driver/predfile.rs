//! `slicecast-pred/1` prediction files.
//!
//! Line-delimited JSON. The first line is a header carrying the grid, the
//! object table and the run provenance; every following line is one
//! `(object, slice)` mask as background-first runs over the row-major scan.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DriverError, PredictionSet, Result, RunProvenance};
use crate::prompts::ObjectEntry;
use crate::volio::Dims;
use crate::wireproto::{decode_mask_rle, encode_mask_rle, RleMask};

pub const PRED_FORMAT: &str = "slicecast-pred/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dims: Dims,
    objects: BTreeMap<u8, ObjectEntry>,
    provenance: RunProvenance,
}

#[derive(Serialize, Deserialize)]
struct Cell {
    object: u8,
    slice: usize,
    runs: Vec<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl PredictionSet {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            format: PRED_FORMAT.into(),
            dims: self.dims,
            objects: self.objects.clone(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (&object, slices) in &self.masks {
            for (slice, mask) in slices.iter().enumerate() {
                let cell = Cell {
                    object,
                    slice,
                    runs: encode_mask_rle(mask).runs,
                };
                serde_json::to_writer(&mut w, &cell)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()
    }

    /// Parses a prediction file. Every cell of the grid must appear exactly
    /// once.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, what: String| DriverError::Format(format!("line {line}: {what}"));
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| DriverError::Format("empty file".into()))?
            .map_err(|e| bad(1, e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != PRED_FORMAT {
            return Err(bad(1, format!("format {:?}, expected {PRED_FORMAT:?}", header.format)));
        }
        let dims = header.dims;
        let mut grid: BTreeMap<u8, Vec<Option<crate::BinaryMask>>> = header
            .objects
            .keys()
            .map(|&o| (o, vec![None; dims.slices]))
            .collect();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| bad(n, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let cell: Cell = serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
            let slot = grid
                .get_mut(&cell.object)
                .ok_or_else(|| bad(n, format!("unknown object {}", cell.object)))?
                .get_mut(cell.slice)
                .ok_or_else(|| bad(n, format!("slice {} outside {dims}", cell.slice)))?;
            if slot.is_some() {
                return Err(bad(n, format!("duplicate cell ({}, {})", cell.object, cell.slice)));
            }
            let rle = RleMask {
                width: dims.cols,
                height: dims.rows,
                runs: cell.runs,
            };
            *slot = Some(decode_mask_rle(&rle).map_err(|e| bad(n, e.to_string()))?);
        }
        let mut masks = BTreeMap::new();
        for (object, slices) in grid {
            let filled: Option<Vec<_>> = slices.into_iter().collect();
            let filled = filled.ok_or_else(|| DriverError::Format(format!("object {object} is missing slices")))?;
            masks.insert(object, filled);
        }
        Ok(PredictionSet {
            dims,
            objects: header.objects,
            masks,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_to(BufWriter::new(file)).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_from(BufReader::new(file))
    }
}
