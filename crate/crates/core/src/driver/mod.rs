//! Whole-volume runs against a backend connection.
//!
//! Image mode sends each prompted slice on its own. Video mode prompts the
//! anchor slice once and lets the backend propagate: one session runs
//! forward from the anchor to the last slice, a second runs backward to
//! slice 0, and the two are merged with the anchor slice taken from the
//! forward pass.

mod predfile;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::prompts::{ObjectEntry, PromptError, PromptSet, Scheme};
use crate::volio::{Dims, Frame, Window};
use crate::wireproto::{BackendConnection, Direction, FrameMasks, Mode, WireError};
use crate::{BinaryMask, MaskVolume};

pub use predfile::PRED_FORMAT;

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("scheme {scheme} cannot run in {mode} mode")]
    Scheme { scheme: Scheme, mode: Mode },
    #[error("frames do not match the prompt grid: {0}")]
    Frames(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Wire(WireError),
    #[error("backend failed on slice {slice}")]
    Backend {
        slice: usize,
        #[source]
        source: WireError,
        partial: Box<PredictionSet>,
    },
    #[error("{direction} propagation failed")]
    Propagation {
        direction: Direction,
        #[source]
        source: WireError,
        partial: Box<PredictionSet>,
    },
    #[error("prediction file: {0}")]
    Format(String),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DriverError {
    /// Whether the failure came from the backend or its channel.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            DriverError::Wire(_) | DriverError::Backend { .. } | DriverError::Propagation { .. }
        )
    }

    /// Whatever was predicted before the failure, if anything.
    pub fn partial(&self) -> Option<&PredictionSet> {
        match self {
            DriverError::Backend { partial, .. } | DriverError::Propagation { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

pub type Result<T, E = DriverError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub scheme: Scheme,
    pub mode: Mode,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_slice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_rule: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub per_object_sessions: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
}

/// One binary mask per (object, slice).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub dims: Dims,
    pub objects: BTreeMap<u8, ObjectEntry>,
    masks: BTreeMap<u8, Vec<BinaryMask>>,
    pub provenance: RunProvenance,
}

impl PredictionSet {
    /// All-empty predictions for `objects`.
    pub fn empty(dims: Dims, objects: BTreeMap<u8, ObjectEntry>, provenance: RunProvenance) -> Self {
        let blank = BinaryMask::empty(dims.cols, dims.rows);
        let masks = objects.keys().map(|&o| (o, vec![blank.clone(); dims.slices])).collect();
        Self {
            dims,
            objects,
            masks,
            provenance,
        }
    }

    pub fn mask(&self, object: u8, slice: usize) -> Option<&BinaryMask> {
        self.masks.get(&object)?.get(slice)
    }

    /// Replaces one cell. Panics on an unknown object, a slice out of range
    /// or a mask of the wrong size.
    pub fn set(&mut self, object: u8, slice: usize, mask: BinaryMask) {
        assert_eq!((mask.width(), mask.height()), (self.dims.cols, self.dims.rows));
        self.masks.get_mut(&object).expect("known object")[slice] = mask;
    }

    pub fn slices(&self, object: u8) -> Option<&[BinaryMask]> {
        self.masks.get(&object).map(Vec::as_slice)
    }

    pub fn object_volume(&self, object: u8) -> Option<MaskVolume> {
        MaskVolume::from_slices(self.masks.get(&object)?)
    }

    /// Number of (object, slice) cells holding a mask.
    pub fn coverage(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub volume_id: Option<String>,
    /// Window the frames were produced with; recorded only.
    pub window: Option<Window>,
    /// Record wall-clock start and end times.
    pub timestamps: bool,
    /// Video mode: one session per object instead of one for all.
    pub per_object_sessions: bool,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn check_frames(frames: &[Frame], dims: Dims) -> Result<()> {
    if frames.len() != dims.slices {
        return Err(DriverError::Frames(format!(
            "{} frames for {} slices",
            frames.len(),
            dims.slices
        )));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.slice_index != i || (f.width, f.height) != (dims.cols, dims.rows) {
            return Err(DriverError::Frames(format!(
                "frame {i} is slice {} at {}×{}, expected {}×{}",
                f.slice_index, f.width, f.height, dims.cols, dims.rows
            )));
        }
    }
    Ok(())
}

fn provenance(ps: &PromptSet, mode: Mode, backend_id: &str, opts: &RunOptions) -> RunProvenance {
    RunProvenance {
        scheme: ps.scheme,
        mode,
        backend_id: backend_id.into(),
        volume_id: opts.volume_id.clone(),
        anchor_slice: ps.anchor_slice,
        window: opts.window,
        merge_rule: (mode == Mode::Video).then(|| "anchor slice from forward pass".into()),
        per_object_sessions: mode == Mode::Video && opts.per_object_sessions,
        prompt_warnings: ps.provenance.warnings.clone(),
        started_at: opts.timestamps.then(now),
        finished_at: None,
    }
}

/// Per-slice image mode. Slices without prompts get empty masks.
pub fn run_image_mode(
    frames: &[Frame],
    ps: &PromptSet,
    conn: &mut BackendConnection,
    opts: &RunOptions,
) -> Result<PredictionSet> {
    if ps.scheme.is_video() {
        return Err(DriverError::Scheme {
            scheme: ps.scheme,
            mode: Mode::Image,
        });
    }
    ps.validate()?;
    check_frames(frames, ps.dims)?;
    if !conn.supports(Mode::Image) {
        return Err(DriverError::Wire(WireError::Unsupported(Mode::Image)));
    }
    let mut pred = PredictionSet::empty(
        ps.dims,
        ps.objects.clone(),
        provenance(ps, Mode::Image, conn.backend_id(), opts),
    );
    for frame in frames {
        let prompts: Vec<_> = ps.on_slice(frame.slice_index).copied().collect();
        if prompts.is_empty() {
            continue;
        }
        match conn.segment_image(frame, &prompts) {
            Ok(masks) => {
                for (object, mask) in masks {
                    pred.set(object, frame.slice_index, mask);
                }
            }
            Err(source) => {
                return Err(DriverError::Backend {
                    slice: frame.slice_index,
                    source,
                    partial: Box::new(pred),
                })
            }
        }
    }
    if opts.timestamps {
        pred.provenance.finished_at = Some(now());
    }
    Ok(pred)
}

fn check_video(frames: &[Frame], ps: &PromptSet) -> Result<usize> {
    if !ps.scheme.is_video() {
        return Err(DriverError::Scheme {
            scheme: ps.scheme,
            mode: Mode::Video,
        });
    }
    ps.validate()?;
    check_frames(frames, ps.dims)?;
    Ok(ps.anchor_slice.expect("validated video scheme has an anchor"))
}

fn run_direction(
    conn: &mut BackendConnection,
    frames: &[Frame],
    ps: &PromptSet,
    direction: Direction,
    per_object: bool,
) -> std::result::Result<Vec<FrameMasks>, WireError> {
    if !per_object {
        return conn.run_video_session(frames, ps, direction, None);
    }
    let prompted: Vec<u8> = ps
        .prompts
        .iter()
        .map(|p| p.object_id())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut merged: Vec<FrameMasks> = Vec::new();
    for object in prompted {
        let run = conn.run_video_session(frames, ps, direction, Some(&[object]));
        let run = match run {
            Ok(r) => r,
            Err(WireError::Partial { completed, source }) => {
                let completed = completed
                    .into_iter()
                    .zip(&merged)
                    .map(|(mut c, m)| {
                        c.masks.extend(m.masks.clone());
                        c
                    })
                    .collect();
                return Err(WireError::Partial { completed, source });
            }
            Err(e) => return Err(e),
        };
        if merged.is_empty() {
            merged = run;
        } else {
            for (m, r) in merged.iter_mut().zip(run) {
                m.masks.extend(r.masks);
            }
        }
    }
    Ok(merged)
}

/// Combines the two propagation passes into a full grid. Backward results
/// are laid down first so the forward pass owns the anchor slice; cells
/// neither pass produced stay empty.
pub fn merge_directions(
    dims: Dims,
    objects: &BTreeMap<u8, ObjectEntry>,
    forward: &[FrameMasks],
    backward: &[FrameMasks],
) -> BTreeMap<u8, Vec<BinaryMask>> {
    let blank = BinaryMask::empty(dims.cols, dims.rows);
    let mut grid: BTreeMap<u8, Vec<BinaryMask>> =
        objects.keys().map(|&o| (o, vec![blank.clone(); dims.slices])).collect();
    for pass in [backward, forward] {
        for fm in pass {
            for (object, mask) in &fm.masks {
                if let Some(slot) = grid.get_mut(object).and_then(|v| v.get_mut(fm.frame)) {
                    *slot = mask.clone();
                }
            }
        }
    }
    grid
}

fn video_failure(
    direction: Direction,
    source: WireError,
    ps: &PromptSet,
    prov: RunProvenance,
    forward: &[FrameMasks],
) -> DriverError {
    let (source, completed) = match source {
        WireError::Partial { completed, source } => (*source, completed),
        other => (other, Vec::new()),
    };
    let (fwd, bwd) = match direction {
        Direction::Forward => (completed.as_slice(), &[][..]),
        Direction::Backward => (forward, completed.as_slice()),
    };
    let mut partial = PredictionSet::empty(ps.dims, ps.objects.clone(), prov);
    partial.masks = merge_directions(ps.dims, &ps.objects, fwd, bwd);
    DriverError::Propagation {
        direction,
        source,
        partial: Box::new(partial),
    }
}

/// Anchor-then-propagate video mode over a single connection; the forward
/// and backward sessions run one after the other.
pub fn run_video_mode(
    frames: &[Frame],
    ps: &PromptSet,
    conn: &mut BackendConnection,
    opts: &RunOptions,
) -> Result<PredictionSet> {
    check_video(frames, ps)?;
    if !conn.supports(Mode::Video) {
        return Err(DriverError::Wire(WireError::Unsupported(Mode::Video)));
    }
    let prov = provenance(ps, Mode::Video, conn.backend_id(), opts);
    let forward = run_direction(conn, frames, ps, Direction::Forward, opts.per_object_sessions)
        .map_err(|e| video_failure(Direction::Forward, e, ps, prov.clone(), &[]))?;
    let backward = run_direction(conn, frames, ps, Direction::Backward, opts.per_object_sessions)
        .map_err(|e| video_failure(Direction::Backward, e, ps, prov.clone(), &forward))?;
    Ok(finish_video(ps, prov, &forward, &backward, opts))
}

/// Video mode with the two directions running at the same time on
/// separate connections.
pub fn run_video_mode_concurrent(
    frames: &[Frame],
    ps: &PromptSet,
    forward_conn: &mut BackendConnection,
    backward_conn: &mut BackendConnection,
    opts: &RunOptions,
) -> Result<PredictionSet> {
    check_video(frames, ps)?;
    for conn in [&*forward_conn, &*backward_conn] {
        if !conn.supports(Mode::Video) {
            return Err(DriverError::Wire(WireError::Unsupported(Mode::Video)));
        }
    }
    let prov = provenance(ps, Mode::Video, forward_conn.backend_id(), opts);
    let per_object = opts.per_object_sessions;
    let (forward, backward) = std::thread::scope(|s| {
        let f = s.spawn(|| run_direction(forward_conn, frames, ps, Direction::Forward, per_object));
        let b = run_direction(backward_conn, frames, ps, Direction::Backward, per_object);
        (f.join().expect("forward pass panicked"), b)
    });
    let forward = forward.map_err(|e| video_failure(Direction::Forward, e, ps, prov.clone(), &[]))?;
    let backward = backward.map_err(|e| video_failure(Direction::Backward, e, ps, prov.clone(), &forward))?;
    Ok(finish_video(ps, prov, &forward, &backward, opts))
}

fn finish_video(
    ps: &PromptSet,
    prov: RunProvenance,
    forward: &[FrameMasks],
    backward: &[FrameMasks],
    opts: &RunOptions,
) -> PredictionSet {
    let mut pred = PredictionSet::empty(ps.dims, ps.objects.clone(), prov);
    pred.masks = merge_directions(ps.dims, &ps.objects, forward, backward);
    if opts.timestamps {
        pred.provenance.finished_at = Some(now());
    }
    pred
}
