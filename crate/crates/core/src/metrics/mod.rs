//! Dice scores, per-volume records and median aggregation.

mod report;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::PredictionSet;
use crate::prompts::Scheme;
use crate::volio::{Dims, LabelVolume};
use crate::MaskVolume;

pub use report::{render_report, ReportFormat};

pub const METRICS_FORMAT: &str = "slicecast-metrics/1";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("grid mismatch: {a} vs {b}")]
    Grid { a: Dims, b: Dims },
    #[error("predicted object {object} has no ground-truth label")]
    UnknownObject { object: u8 },
    #[error("nothing to aggregate")]
    Empty,
    #[error("records disagree on the row key: ({0}) vs ({1})")]
    MixedKeys(String, String),
    #[error("metrics line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("cannot read {path}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// 2|A∩B| / (|A|+|B|); two empty masks score 1.
pub fn dsc(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(MetricsError::Grid { a: a.dims(), b: b.dims() });
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedRule {
    /// Dice of the union of all predictions against the union of all labels.
    #[default]
    Union,
    /// Mean of the per-structure scores.
    MacroAverage,
}

impl std::str::FromStr for CombinedRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "union" => Ok(Self::Union),
            "macro" | "macro_average" => Ok(Self::MacroAverage),
            other => Err(format!("unknown combined rule {other:?} (union, macro)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub object: u8,
    pub name: String,
    pub dsc: f64,
    pub predicted_voxels: usize,
    pub reference_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_id: Option<String>,
    pub scheme: Scheme,
    pub backend_id: String,
    pub structures: Vec<StructureScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<f64>,
    pub combined_rule: CombinedRule,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.structures.iter().find(|s| s.name == name).map(|s| s.dsc)
    }
}

/// Reads records from JSON lines, skipping blank lines.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let bad = |detail: String| MetricsError::Parse { line: i + 1, detail };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.format != METRICS_FORMAT {
            return Err(bad(format!("format {:?}", rec.format)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(std::io::BufReader::new(file))
}

/// Scores every labelled structure. Structures the run did not predict
/// count as empty predictions; auxiliary prompt targets are ignored.
pub fn evaluate_volume(pred: &PredictionSet, gt: &LabelVolume, rule: CombinedRule) -> Result<MetricsRecord> {
    if pred.dims != gt.dims() {
        return Err(MetricsError::Grid {
            a: pred.dims,
            b: gt.dims(),
        });
    }
    for (&object, entry) in &pred.objects {
        if !entry.aux && !gt.names().contains_key(&object) {
            return Err(MetricsError::UnknownObject { object });
        }
    }
    let empty = MaskVolume::empty(gt.dims());
    let mut structures = Vec::new();
    let (mut pred_union, mut gt_union) = (empty.clone(), empty.clone());
    for (&object, name) in gt.names() {
        let p = pred.object_volume(object).unwrap_or_else(|| empty.clone());
        let g = gt.mask(object);
        structures.push(StructureScore {
            object,
            name: name.clone(),
            dsc: dsc(&p, &g)?,
            predicted_voxels: p.count(),
            reference_voxels: g.count(),
        });
        pred_union = pred_union.union(&p);
        gt_union = gt_union.union(&g);
    }
    let combined = if structures.len() < 2 {
        None
    } else {
        Some(match rule {
            CombinedRule::Union => dsc(&pred_union, &gt_union)?,
            CombinedRule::MacroAverage => structures.iter().map(|s| s.dsc).sum::<f64>() / structures.len() as f64,
        })
    };
    Ok(MetricsRecord {
        format: METRICS_FORMAT.into(),
        volume_id: pred.provenance.volume_id.clone(),
        scheme: pred.provenance.scheme,
        backend_id: pred.provenance.backend_id.clone(),
        structures,
        combined,
        combined_rule: rule,
    })
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub backend_id: String,
    /// Median score per structure name.
    pub scores: BTreeMap<String, f64>,
    pub combined: Option<f64>,
    pub n_volumes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    /// Structure column order.
    pub structures: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

/// Medians over records sharing one (scheme, backend) key.
pub fn aggregate(records: &[MetricsRecord]) -> Result<SummaryRow> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    let key = |r: &MetricsRecord| format!("{}, {}", r.scheme.as_str(), r.backend_id);
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut combined = Vec::new();
    for r in records {
        if (r.scheme, &r.backend_id) != (first.scheme, &first.backend_id) {
            return Err(MetricsError::MixedKeys(key(first), key(r)));
        }
        for s in &r.structures {
            columns.entry(s.name.clone()).or_default().push(s.dsc);
        }
        combined.extend(r.combined);
    }
    Ok(SummaryRow {
        scheme: first.scheme,
        backend_id: first.backend_id.clone(),
        scores: columns
            .into_iter()
            .map(|(k, v)| (k, median(&v).expect("column has a value")))
            .collect(),
        combined: median(&combined),
        n_volumes: records.len(),
    })
}

/// Groups records by (scheme, backend) and aggregates each group. Rows
/// follow scheme order, then backend id; structure columns follow label id.
pub fn summarize(records: &[MetricsRecord]) -> Result<SummaryTable> {
    let mut groups: BTreeMap<(Scheme, String), Vec<MetricsRecord>> = BTreeMap::new();
    let mut by_id: BTreeMap<u8, String> = BTreeMap::new();
    for r in records {
        groups.entry((r.scheme, r.backend_id.clone())).or_default().push(r.clone());
        for s in &r.structures {
            by_id.entry(s.object).or_insert_with(|| s.name.clone());
        }
    }
    let mut structures: Vec<String> = Vec::new();
    for name in by_id.into_values() {
        if !structures.contains(&name) {
            structures.push(name);
        }
    }
    let rows = groups.values().map(|g| aggregate(g)).collect::<Result<_>>()?;
    Ok(SummaryTable { structures, rows })
}
