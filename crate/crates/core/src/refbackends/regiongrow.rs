use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::prompts::{pixel_of, BoxGeometry, Prompt, Sign};
use crate::volio::Frame;
use crate::wireproto::server::{Backend, BackendFailure, Emit, PropagateError, Session};
use crate::wireproto::{Direction, Mode, WirePrompt};
use crate::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryRule {
    /// Pixels of the previous frame's mask that still pass the intensity
    /// test on the current frame seed the current frame.
    #[default]
    PreviousFrameSeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowConfig {
    /// Maximum absolute difference from the seed intensity, in 8-bit units.
    pub tolerance: f64,
    pub connectivity: Connectivity,
    pub memory: MemoryRule,
}

impl Default for RegionGrowConfig {
    fn default() -> Self {
        Self {
            tolerance: 8.0,
            connectivity: Connectivity::Four,
            memory: MemoryRule::PreviousFrameSeeds,
        }
    }
}

impl RegionGrowConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        assert!(tolerance >= 0.0, "tolerance must be non-negative");
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

/// What a frame leaves behind for the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowMemory {
    pub mask: BinaryMask,
    pub reference: f64,
    pub rejected: BinaryMask,
    pub rejected_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOutcome {
    /// Pixels claimed by positive seeds.
    pub mask: BinaryMask,
    /// Pixels claimed by negative seeds.
    pub rejected: BinaryMask,
    pub reference: Option<f64>,
    pub rejected_reference: Option<f64>,
}

impl GrowOutcome {
    pub fn into_memory(self) -> Option<GrowMemory> {
        Some(GrowMemory {
            reference: self.reference?,
            mask: self.mask,
            rejected: self.rejected,
            rejected_reference: self.rejected_reference,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Seed {
    index: usize,
    sign: Sign,
    reference: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Competitive 4-connected region growing.
///
/// Every seed floods outward through pixels within `tolerance` of its own
/// reference intensity. All seeds grow simultaneously, one ring per step,
/// and each pixel goes to the first seed that reaches it; on equal distance
/// negative seeds win. Pixels claimed from negative seeds are removed, so a
/// connected component reached only by a negative point disappears and a
/// component shared with a negative point is split between them.
///
/// Seeds come from positive/negative points, from the centers of boxes
/// (which also clip the result), and from `memory`.
pub fn grow(frame: &Frame, prompts: &[Prompt], cfg: &RegionGrowConfig, memory: Option<&GrowMemory>) -> GrowOutcome {
    let (w, h) = (frame.width, frame.height);
    let intensity = |i: usize| f64::from(frame.pixels[i]);
    let mut seeds = Vec::new();
    let mut boxes: Vec<BoxGeometry> = Vec::new();
    let (mut pos_refs, mut neg_refs) = (Vec::new(), Vec::new());

    for p in prompts {
        let (x, y, sign) = match p {
            Prompt::Point(pt) => (pt.x, pt.y, pt.sign),
            Prompt::Box(b) => {
                boxes.push(b.geometry);
                let g = b.geometry;
                ((g.x_min + g.x_max) / 2.0, (g.y_min + g.y_max) / 2.0, Sign::Positive)
            }
        };
        let (r, c) = pixel_of(x, y, w, h);
        let index = r * w + c;
        let reference = intensity(index);
        match sign {
            Sign::Positive => pos_refs.push(reference),
            Sign::Negative => neg_refs.push(reference),
        }
        seeds.push(Seed { index, sign, reference });
    }
    let mut reference = mean(&pos_refs);
    let mut rejected_reference = mean(&neg_refs);

    if let Some(m) = memory {
        for (mask, sign, r) in [
            (&m.mask, Sign::Positive, Some(m.reference)),
            (&m.rejected, Sign::Negative, m.rejected_reference),
        ] {
            let Some(r) = r else { continue };
            for (row, col) in mask.foreground() {
                let index = row * w + col;
                if (intensity(index) - r).abs() <= cfg.tolerance {
                    seeds.push(Seed { index, sign, reference: r });
                }
            }
        }
        reference = reference.or(Some(m.reference));
        rejected_reference = rejected_reference.or(m.rejected_reference);
    }

    // Canonical order makes the result independent of prompt order.
    seeds.sort_by(|a, b| {
        (b.sign == Sign::Negative)
            .cmp(&(a.sign == Sign::Negative))
            .then(a.index.cmp(&b.index))
            .then(a.reference.total_cmp(&b.reference))
    });

    // 0 unclaimed, 1 positive, 2 negative
    let mut owner = vec![0u8; w * h];
    let mut queue = VecDeque::new();
    if seeds.iter().any(|s| s.sign == Sign::Positive) {
        for s in &seeds {
            if owner[s.index] == 0 {
                owner[s.index] = if s.sign == Sign::Positive { 1 } else { 2 };
                queue.push_back((s.index, s.reference));
            }
        }
    }
    while let Some((i, reference)) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let neighbors = [
            (r > 0).then(|| i - w),
            (r + 1 < h).then(|| i + w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
        ];
        for n in neighbors.into_iter().flatten() {
            if owner[n] == 0 && (intensity(n) - reference).abs() <= cfg.tolerance {
                owner[n] = owner[i];
                queue.push_back((n, reference));
            }
        }
    }

    let mut mask_bits: Vec<bool> = owner.iter().map(|&o| o == 1).collect();
    if !boxes.is_empty() {
        for (i, bit) in mask_bits.iter_mut().enumerate() {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            *bit &= boxes.iter().any(|b| b.contains(x, y));
        }
    }
    GrowOutcome {
        mask: BinaryMask::from_bits(w, h, mask_bits).expect("frame-sized"),
        rejected: BinaryMask::from_bits(w, h, owner.iter().map(|&o| o == 2).collect()).expect("frame-sized"),
        reference,
        rejected_reference,
    }
}

/// Segments one object on one frame. Returns an empty mask when there is
/// neither a positive prompt nor memory to start from.
pub fn region_grow_segment(
    frame: &Frame,
    prompts: &[Prompt],
    cfg: &RegionGrowConfig,
    memory: Option<&GrowMemory>,
) -> BinaryMask {
    grow(frame, prompts, cfg, memory).mask
}

/// Region-growing backend; serves image and video modes.
#[derive(Debug, Clone, Default)]
pub struct RegionGrow {
    cfg: RegionGrowConfig,
}

impl RegionGrow {
    pub fn new(cfg: RegionGrowConfig) -> Self {
        Self { cfg }
    }
}

impl Backend for RegionGrow {
    fn backend_id(&self) -> String {
        format!("regiongrow-tol{}", self.cfg.tolerance)
    }

    fn modes(&self) -> Vec<Mode> {
        vec![Mode::Image, Mode::Video]
    }

    fn segment_image(
        &mut self,
        frame: &Frame,
        prompts: &[WirePrompt],
        objects: &[u8],
    ) -> Result<Vec<(u8, BinaryMask)>, BackendFailure> {
        Ok(objects
            .iter()
            .map(|&o| {
                let own: Vec<Prompt> = prompts
                    .iter()
                    .filter(|p| p.object() == o)
                    .map(|p| p.to_prompt(frame.slice_index))
                    .collect();
                (o, region_grow_segment(frame, &own, &self.cfg, None))
            })
            .collect())
    }

    fn propagate(&mut self, session: &Session, direction: Direction, emit: &mut Emit<'_>) -> Result<(), PropagateError> {
        let start = session
            .start_frame(direction)
            .ok_or_else(|| BackendFailure::new("no_prompts", "no points in session"))?;
        let mut memory: BTreeMap<u8, Option<GrowMemory>> = session.objects().map(|o| (o, None)).collect();
        for f in direction.sequence(start, session.n_frames()) {
            let frame = session.frame(f);
            for (object, mem) in memory.iter_mut() {
                let prompts: Vec<Prompt> = session.points[object]
                    .get(&f)
                    .into_iter()
                    .flatten()
                    .map(|p| Prompt::Point(p.to_prompt(f, *object)))
                    .collect();
                let outcome = grow(frame, &prompts, &self.cfg, mem.as_ref());
                emit(f, *object, &outcome.mask)?;
                *mem = outcome.into_memory();
            }
        }
        Ok(())
    }
}
