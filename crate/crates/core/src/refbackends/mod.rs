//! Deterministic reference backends and synthetic cases.
//!
//! [`GtEcho`] answers every prompt with the reference mask it points into,
//! which makes it a pipeline oracle: any correct run against it scores a
//! perfect Dice. [`RegionGrow`] is a small seeded region grower with a
//! previous-frame memory, enough to exercise real propagation and the
//! pruning effect of negative points.

mod gtecho;
mod regiongrow;
mod synth;

pub use gtecho::{gt_echo_segment, GtEcho};
pub use regiongrow::{region_grow_segment, GrowMemory, GrowOutcome, RegionGrow, RegionGrowConfig};
pub use synth::{make_synthetic_case, Preset, SynthError, SyntheticCase};
