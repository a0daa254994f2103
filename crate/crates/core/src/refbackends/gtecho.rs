use std::collections::BTreeMap;

use crate::prompts::{pixel_of, Prompt, Sign};
use crate::volio::{Frame, LabelVolume};
use crate::wireproto::server::{Backend, BackendFailure, Emit, PropagateError, Session};
use crate::wireproto::{Direction, Mode, WirePrompt};
use crate::BinaryMask;

fn hits(prompt: &Prompt, gt_slice: &BinaryMask) -> bool {
    match prompt {
        Prompt::Point(p) if p.sign == Sign::Positive => {
            let (r, c) = pixel_of(p.x, p.y, gt_slice.width(), gt_slice.height());
            gt_slice.get(r, c)
        }
        Prompt::Point(_) => false,
        Prompt::Box(b) => gt_slice
            .foreground()
            .any(|(r, c)| b.geometry.contains(c as f64, r as f64)),
    }
}

/// Returns, for every object named in `prompts`, its reference mask on
/// `frame_index` when one of its positive prompts lands inside that mask,
/// and an empty mask otherwise. Negative points are ignored.
pub fn gt_echo_segment(frame_index: usize, prompts: &[Prompt], gt: &LabelVolume) -> BTreeMap<u8, BinaryMask> {
    let dims = gt.dims();
    let mut out = BTreeMap::new();
    for p in prompts {
        let object = p.object_id();
        let mask = out
            .entry(object)
            .or_insert_with(|| BinaryMask::empty(dims.cols, dims.rows));
        if !mask.is_empty() || frame_index >= dims.slices || !gt.names().contains_key(&object) {
            continue;
        }
        let gt_slice = gt.slice_mask(object, frame_index);
        if hits(p, &gt_slice) {
            *mask = gt_slice;
        }
    }
    out
}

/// Oracle backend serving a fixed reference volume.
///
/// Image requests must carry the frame's slice index. In video mode every
/// object whose anchor positive hit gets its reference mask on every
/// propagated frame.
#[derive(Debug, Clone)]
pub struct GtEcho {
    gt: LabelVolume,
}

impl GtEcho {
    pub fn new(gt: LabelVolume) -> Self {
        Self { gt }
    }

    fn check_frame(&self, frame: &Frame) -> Result<(), BackendFailure> {
        let dims = self.gt.dims();
        if (frame.width, frame.height) != (dims.cols, dims.rows) {
            return Err(BackendFailure::new(
                "bad_frame",
                format!(
                    "frame is {}×{}, reference slices are {}×{}",
                    frame.width, frame.height, dims.cols, dims.rows
                ),
            ));
        }
        if frame.slice_index >= dims.slices {
            return Err(BackendFailure::new(
                "bad_frame",
                format!("frame index {} outside {} slices", frame.slice_index, dims.slices),
            ));
        }
        Ok(())
    }
}

impl Backend for GtEcho {
    fn backend_id(&self) -> String {
        "gtecho".into()
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
        self.check_frame(frame)?;
        let prompts: Vec<Prompt> = prompts.iter().map(|p| p.to_prompt(frame.slice_index)).collect();
        let mut masks = gt_echo_segment(frame.slice_index, &prompts, &self.gt);
        let empty = BinaryMask::empty(frame.width, frame.height);
        Ok(objects
            .iter()
            .map(|&o| (o, masks.remove(&o).unwrap_or_else(|| empty.clone())))
            .collect())
    }

    fn propagate(&mut self, session: &Session, direction: Direction, emit: &mut Emit<'_>) -> Result<(), PropagateError> {
        for f in session.frames.iter().flatten() {
            self.check_frame(f)?;
        }
        let start = session
            .start_frame(direction)
            .ok_or_else(|| BackendFailure::new("no_prompts", "no points in session"))?;
        let mut tracked = BTreeMap::new();
        for (object, by_frame) in &session.points {
            let prompts: Vec<Prompt> = by_frame
                .iter()
                .flat_map(|(&f, pts)| pts.iter().map(move |p| Prompt::Point(p.to_prompt(f, *object))))
                .collect();
            let hit = prompts.iter().any(|p| {
                self.gt.names().contains_key(object)
                    && hits(p, &self.gt.slice_mask(*object, p.slice_index()))
            });
            tracked.insert(*object, hit);
        }
        let dims = self.gt.dims();
        let empty = BinaryMask::empty(dims.cols, dims.rows);
        for frame in direction.sequence(start, session.n_frames()) {
            for (&object, &hit) in &tracked {
                if hit {
                    emit(frame, object, &self.gt.slice_mask(object, frame))?;
                } else {
                    emit(frame, object, &empty)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{centroid, PointPrompt};
    use crate::refbackends::{make_synthetic_case, Preset};

    fn point(x: f64, y: f64, sign: Sign, object: u8) -> Prompt {
        Prompt::Point(PointPrompt {
            x,
            y,
            sign,
            slice_index: 5,
            object_id: object,
        })
    }

    #[test]
    fn centroid_hit_echoes_reference() {
        let case = make_synthetic_case(Preset::TwoBars, 0);
        let gt = case.labels.slice_mask(1, 5);
        let (x, y) = centroid(&gt).unwrap();
        let masks = gt_echo_segment(5, &[point(x, y, Sign::Positive, 1)], &case.labels);
        assert_eq!(masks[&1], gt);
    }

    #[test]
    fn background_positive_is_empty() {
        let case = make_synthetic_case(Preset::TwoBars, 0);
        let masks = gt_echo_segment(5, &[point(0.0, 0.0, Sign::Positive, 1)], &case.labels);
        assert!(masks[&1].is_empty());
    }

    #[test]
    fn negatives_are_ignored() {
        let case = make_synthetic_case(Preset::TwoBars, 0);
        let masks = gt_echo_segment(
            5,
            &[point(7.5, 7.5, Sign::Positive, 1), point(7.0, 7.0, Sign::Negative, 1)],
            &case.labels,
        );
        assert_eq!(masks[&1], case.labels.slice_mask(1, 5));
        let masks = gt_echo_segment(5, &[point(7.0, 7.0, Sign::Negative, 1)], &case.labels);
        assert!(masks[&1].is_empty());
    }

    #[test]
    fn prompt_for_other_structure_does_not_count() {
        let case = make_synthetic_case(Preset::TwoBars, 0);
        // inside tibia but labelled as femur
        let masks = gt_echo_segment(5, &[point(21.0, 23.0, Sign::Positive, 1)], &case.labels);
        assert!(masks[&1].is_empty());
        // aux objects have no reference
        let masks = gt_echo_segment(8, &[point(27.5, 3.5, Sign::Positive, 3)], &case.labels);
        assert!(masks[&3].is_empty());
    }
}
