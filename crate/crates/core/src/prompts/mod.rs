//! Prompt generation from reference masks.
//!
//! Four schemes are supported:
//!
//! | scheme              | prompts                                                        |
//! |---------------------|----------------------------------------------------------------|
//! | `point`             | positive centroid per structure per non-empty slice, plus aux  |
//! | `box`               | tight box per structure per non-empty slice                    |
//! | `point_video`       | positive centroid per structure on the anchor slice            |
//! | `three_point_video` | as `point_video`, plus negatives at every other structure      |
//!
//! The anchor slice is `floor(S / 2)` (0-based).

mod geometry;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::volio::{Dims, LabelVolume};

pub use geometry::{bounding_box, centroid, nearest_foreground, pixel_of, BoxGeometry};

pub const PROMPTS_FORMAT: &str = "slicecast-prompts/1";
pub const AUX_FORMAT: &str = "slicecast-aux/1";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("object `{object}` has no foreground on anchor slice {slice}")]
    AnchorMiss { object: String, slice: usize },
    #[error("no named structure has any foreground")]
    NoForeground,
    #[error("aux points: {0}")]
    Aux(String),
    #[error("invalid prompt set: {0}")]
    Invalid(String),
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Point,
    Box,
    PointVideo,
    ThreePointVideo,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Point,
        Scheme::Box,
        Scheme::PointVideo,
        Scheme::ThreePointVideo,
    ];

    pub fn is_video(self) -> bool {
        matches!(self, Scheme::PointVideo | Scheme::ThreePointVideo)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Point => "point",
            Scheme::Box => "box",
            Scheme::PointVideo => "point_video",
            Scheme::ThreePointVideo => "three_point_video",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Scheme::Point => "point",
            Scheme::Box => "bounding box",
            Scheme::PointVideo => "point + video",
            Scheme::ThreePointVideo => "3 points + video",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub sign: Sign,
    pub slice_index: usize,
    pub object_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrompt {
    #[serde(flatten)]
    pub geometry: BoxGeometry,
    pub slice_index: usize,
    pub object_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prompt {
    Point(PointPrompt),
    Box(BoxPrompt),
}

impl Prompt {
    pub fn slice_index(&self) -> usize {
        match self {
            Prompt::Point(p) => p.slice_index,
            Prompt::Box(b) => b.slice_index,
        }
    }

    pub fn object_id(&self) -> u8 {
        match self {
            Prompt::Point(p) => p.object_id,
            Prompt::Box(b) => b.object_id,
        }
    }

    /// Identity used for duplicate detection: exact bit patterns of the
    /// coordinates.
    fn key(&self) -> (usize, u8, u8, [u64; 4]) {
        match self {
            Prompt::Point(p) => (
                p.slice_index,
                p.object_id,
                p.sign as u8,
                [p.x.to_bits(), p.y.to_bits(), 0, 0],
            ),
            Prompt::Box(b) => (
                b.slice_index,
                b.object_id,
                2,
                b.geometry.as_array().map(f64::to_bits),
            ),
        }
    }
}

/// A structure targeted by a prompt set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub name: String,
    /// True for structures that only exist as manual aux points and have no
    /// reference mask.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aux: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptProvenance {
    pub anchor_rule: String,
    pub snap_to_foreground: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub format: String,
    pub scheme: Scheme,
    pub dims: Dims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_slice: Option<usize>,
    pub objects: BTreeMap<u8, ObjectEntry>,
    pub prompts: Vec<Prompt>,
    #[serde(default)]
    pub aux_points: BTreeMap<String, PointPrompt>,
    pub provenance: PromptProvenance,
}

impl PromptSet {
    pub fn empty(scheme: Scheme, dims: Dims) -> Self {
        Self {
            format: PROMPTS_FORMAT.into(),
            scheme,
            dims,
            anchor_slice: scheme.is_video().then_some(anchor_slice(dims.slices)),
            objects: BTreeMap::new(),
            prompts: Vec::new(),
            aux_points: BTreeMap::new(),
            provenance: PromptProvenance {
                anchor_rule: ANCHOR_RULE.into(),
                ..Default::default()
            },
        }
    }

    pub fn on_slice(&self, slice: usize) -> impl Iterator<Item = &Prompt> + '_ {
        self.prompts.iter().filter(move |p| p.slice_index() == slice)
    }

    /// Checks the structural invariants. Run on every load.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PromptError::Invalid(m));
        if self.format != PROMPTS_FORMAT {
            return bad(format!("format `{}`, expected `{PROMPTS_FORMAT}`", self.format));
        }
        match (self.scheme.is_video(), self.anchor_slice) {
            (true, None) => return bad("video scheme without anchor slice".into()),
            (false, Some(_)) => return bad("per-slice scheme with an anchor slice".into()),
            _ => {}
        }
        let (w, h) = (self.dims.cols as f64, self.dims.rows as f64);
        let mut seen = BTreeSet::new();
        for p in &self.prompts {
            if p.slice_index() >= self.dims.slices {
                return bad(format!("prompt on slice {} of {}", p.slice_index(), self.dims.slices));
            }
            if let Some(a) = self.anchor_slice {
                if p.slice_index() != a {
                    return bad(format!("video prompt off the anchor slice {a}"));
                }
            }
            if !self.objects.contains_key(&p.object_id()) {
                return bad(format!("prompt targets unknown object {}", p.object_id()));
            }
            let in_frame = |x: f64, y: f64| (0.0..w).contains(&x) && (0.0..h).contains(&y);
            match p {
                Prompt::Point(pt) if !in_frame(pt.x, pt.y) => {
                    return bad(format!("point ({}, {}) outside the frame", pt.x, pt.y))
                }
                Prompt::Box(b) => {
                    let g = &b.geometry;
                    if g.x_min > g.x_max || g.y_min > g.y_max || !in_frame(g.x_min, g.y_min) || !in_frame(g.x_max, g.y_max) {
                        return bad(format!("malformed box {:?}", g.as_array()));
                    }
                }
                _ => {}
            }
            if !seen.insert(p.key()) {
                return bad(format!("duplicate prompt {p:?}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prompt sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ps: PromptSet = serde_json::from_str(text)?;
        ps.validate()?;
        Ok(ps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// One manually placed point, e.g. the patella on the middle slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxPoint {
    pub name: String,
    pub slice_index: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxPointFile {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_id: Option<String>,
    pub points: Vec<AuxPoint>,
}

impl AuxPointFile {
    pub fn new(points: Vec<AuxPoint>) -> Self {
        Self {
            format: AUX_FORMAT.into(),
            volume_id: None,
            points,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aux files always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let aux: AuxPointFile = serde_json::from_str(text)?;
        if aux.format != AUX_FORMAT {
            return Err(PromptError::Aux(format!(
                "format `{}`, expected `{AUX_FORMAT}`",
                aux.format
            )));
        }
        Ok(aux)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Checks points against a grid and assigns object ids to unnamed aux
    /// structures: the smallest ids above every label id, in file order.
    fn resolve(&self, dims: Dims, labels: &BTreeMap<u8, String>) -> Result<Vec<(u8, AuxPoint)>> {
        let mut used: BTreeSet<u8> = labels.keys().copied().collect();
        let mut next = labels.keys().next_back().copied().unwrap_or(0);
        let mut names = BTreeSet::new();
        let mut out = Vec::with_capacity(self.points.len());
        for p in &self.points {
            if !names.insert(p.name.as_str()) {
                return Err(PromptError::Aux(format!("structure `{}` listed twice", p.name)));
            }
            if p.slice_index >= dims.slices {
                return Err(PromptError::Aux(format!(
                    "`{}` on slice {} but the volume has {} slices",
                    p.name, p.slice_index, dims.slices
                )));
            }
            if !(0.0..dims.cols as f64).contains(&p.x) || !(0.0..dims.rows as f64).contains(&p.y) {
                return Err(PromptError::Aux(format!(
                    "`{}` at ({}, {}) is outside the {}×{} frame",
                    p.name, p.x, p.y, dims.cols, dims.rows
                )));
            }
            let id = match p.object_id {
                Some(0) => return Err(PromptError::Aux("object id 0 is background".into())),
                Some(id) if used.contains(&id) => {
                    return Err(PromptError::Aux(format!("object id {id} already in use")))
                }
                Some(id) => id,
                None => loop {
                    next = next
                        .checked_add(1)
                        .ok_or_else(|| PromptError::Aux("ran out of object ids".into()))?;
                    if !used.contains(&next) {
                        break next;
                    }
                },
            };
            used.insert(id);
            out.push((id, p.clone()));
        }
        Ok(out)
    }
}

const ANCHOR_RULE: &str = "floor(S/2), 0-based";

/// Middle slice used as the video anchor.
pub fn anchor_slice(slices: usize) -> usize {
    slices / 2
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Move centroids that fall outside their mask onto the nearest
    /// foreground pixel.
    pub snap_to_foreground: bool,
}

/// Builds the prompt set of `scheme` from reference labels.
pub fn build_prompts(
    labels: &LabelVolume,
    scheme: Scheme,
    aux: Option<&AuxPointFile>,
    opts: BuildOptions,
) -> Result<PromptSet> {
    let dims = labels.dims();
    let names = labels.names();
    if names.keys().all(|&l| labels.voxel_count(l) == 0) {
        return Err(PromptError::NoForeground);
    }
    let aux = match aux {
        Some(a) => a.resolve(dims, names)?,
        None => Vec::new(),
    };

    let mut ps = PromptSet::empty(scheme, dims);
    ps.provenance.snap_to_foreground = opts.snap_to_foreground;
    ps.objects = names
        .iter()
        .map(|(&id, name)| (id, ObjectEntry { name: name.clone(), aux: false }))
        .collect();
    for (id, p) in &aux {
        ps.aux_points.insert(
            p.name.clone(),
            PointPrompt {
                x: p.x,
                y: p.y,
                sign: Sign::Positive,
                slice_index: p.slice_index,
                object_id: *id,
            },
        );
    }

    let point_at = |object: u8, slice: usize| -> Option<(f64, f64)> {
        let mask = labels.slice_mask(object, slice);
        let (x, y) = centroid(&mask)?;
        if opts.snap_to_foreground {
            let (r, c) = pixel_of(x, y, dims.cols, dims.rows);
            if !mask.get(r, c) {
                return nearest_foreground(&mask, x, y);
            }
        }
        Some((x, y))
    };

    let mut prompts = Vec::new();
    match scheme {
        Scheme::Point | Scheme::Box => {
            for slice in 0..dims.slices {
                for &object in names.keys() {
                    let p = if scheme == Scheme::Point {
                        point_at(object, slice).map(|(x, y)| {
                            Prompt::Point(PointPrompt {
                                x,
                                y,
                                sign: Sign::Positive,
                                slice_index: slice,
                                object_id: object,
                            })
                        })
                    } else {
                        bounding_box(&labels.slice_mask(object, slice)).map(|geometry| {
                            Prompt::Box(BoxPrompt {
                                geometry,
                                slice_index: slice,
                                object_id: object,
                            })
                        })
                    };
                    prompts.extend(p);
                }
                if scheme == Scheme::Point {
                    for (id, p) in aux.iter().filter(|(_, p)| p.slice_index == slice) {
                        prompts.push(Prompt::Point(PointPrompt {
                            x: p.x,
                            y: p.y,
                            sign: Sign::Positive,
                            slice_index: slice,
                            object_id: *id,
                        }));
                    }
                }
            }
            if scheme == Scheme::Point {
                for (id, p) in &aux {
                    ps.objects.insert(*id, ObjectEntry { name: p.name.clone(), aux: true });
                }
            }
        }
        Scheme::PointVideo | Scheme::ThreePointVideo => {
            let anchor = anchor_slice(dims.slices);
            let mut anchors = BTreeMap::new();
            for (&object, name) in names {
                let (x, y) = point_at(object, anchor).ok_or_else(|| PromptError::AnchorMiss {
                    object: name.clone(),
                    slice: anchor,
                })?;
                anchors.insert(object, (x, y));
            }
            for (&object, &(x, y)) in &anchors {
                prompts.push(Prompt::Point(PointPrompt {
                    x,
                    y,
                    sign: Sign::Positive,
                    slice_index: anchor,
                    object_id: object,
                }));
                if scheme != Scheme::ThreePointVideo {
                    continue;
                }
                let others = anchors
                    .iter()
                    .filter(|(&o, _)| o != object)
                    .map(|(_, &xy)| xy)
                    .chain(aux.iter().map(|(_, p)| (p.x, p.y)));
                for (x, y) in others {
                    prompts.push(Prompt::Point(PointPrompt {
                        x,
                        y,
                        sign: Sign::Negative,
                        slice_index: anchor,
                        object_id: object,
                    }));
                }
            }
            if scheme == Scheme::ThreePointVideo {
                let others = names.len() - 1 + aux.len();
                if others < 2 {
                    ps.provenance.warnings.push(format!(
                        "degraded three_point_video: only {others} other structure(s) available for negatives"
                    ));
                }
                for (_, p) in aux.iter().filter(|(_, p)| p.slice_index != anchor) {
                    ps.provenance.warnings.push(format!(
                        "aux point `{}` on slice {} used on anchor slice {anchor}",
                        p.name, p.slice_index
                    ));
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    prompts.retain(|p| seen.insert(p.key()));
    ps.prompts = prompts;
    ps.validate()?;
    Ok(ps)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub positive: usize,
    pub negative: usize,
    pub boxes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCounts {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub boxes: usize,
    /// Coordinate values carried by boxes (four per box).
    pub box_corner_values: usize,
    pub per_object: BTreeMap<u8, ObjectCounts>,
}

pub fn summarize(ps: &PromptSet) -> PromptCounts {
    let mut c = PromptCounts::default();
    for p in &ps.prompts {
        let o = c.per_object.entry(p.object_id()).or_default();
        match p {
            Prompt::Point(pt) if pt.sign == Sign::Positive => {
                o.positive += 1;
                c.positive += 1;
            }
            Prompt::Point(_) => {
                o.negative += 1;
                c.negative += 1;
            }
            Prompt::Box(_) => {
                o.boxes += 1;
                c.boxes += 1;
            }
        }
        c.total += 1;
    }
    c.box_corner_values = 4 * c.boxes;
    c
}
