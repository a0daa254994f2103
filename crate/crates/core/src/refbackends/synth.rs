use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::prompts::{AuxPoint, AuxPointFile};
use crate::volio::{DType, Dims, LabelNames, LabelVolume, Volume};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown preset `{0}` (expected two_bars, two_bars_noisy or touching_bars)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TwoBars,
    TwoBarsNoisy,
    TouchingBars,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::TwoBars => "two_bars",
            Preset::TwoBarsNoisy => "two_bars_noisy",
            Preset::TouchingBars => "touching_bars",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_bars" => Ok(Preset::TwoBars),
            "two_bars_noisy" => Ok(Preset::TwoBarsNoisy),
            "touching_bars" => Ok(Preset::TouchingBars),
            other => Err(SynthError::UnknownPreset(other.into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub volume: Volume,
    pub labels: LabelVolume,
    pub aux: AuxPointFile,
    pub preset: Preset,
    pub seed: u64,
}

pub const NOISE_SIGMA: f64 = 10.0;
const DIMS: Dims = Dims::new(16, 32, 32);
/// Inclusive slice range covered by both bars.
const SLICES: (usize, usize) = (2, 13);
const AUX_SLICE: usize = 8;
const BLOB_ROWS: (usize, usize) = (2, 5);
const BLOB_COLS: (usize, usize) = (26, 29);

struct Bar {
    label: u8,
    intensity: f32,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn bars(preset: Preset) -> [Bar; 2] {
    match preset {
        Preset::TwoBars | Preset::TwoBarsNoisy => [
            Bar { label: 1, intensity: 200.0, rows: (4, 11), cols: (4, 11) },
            Bar { label: 2, intensity: 120.0, rows: (20, 27), cols: (18, 25) },
        ],
        // Same intensity, sharing the edge between columns 11 and 12.
        Preset::TouchingBars => [
            Bar { label: 1, intensity: 200.0, rows: (8, 15), cols: (4, 11) },
            Bar { label: 2, intensity: 200.0, rows: (8, 15), cols: (12, 19) },
        ],
    }
}

/// Builds a 16×32×32 case with two labeled bars on slices 2..=13 and an
/// unlabeled 4×4 blob (intensity 160) on slice 8 standing in for the
/// patella. The noisy preset adds Gaussian noise (σ = 10) from `seed`;
/// labels never depend on the seed.
pub fn make_synthetic_case(preset: Preset, seed: u64) -> SyntheticCase {
    let mut voxels = vec![0f32; DIMS.len()];
    let mut labels = vec![0u8; DIMS.len()];
    for bar in bars(preset) {
        for s in SLICES.0..=SLICES.1 {
            for r in bar.rows.0..=bar.rows.1 {
                for c in bar.cols.0..=bar.cols.1 {
                    let i = DIMS.index(s, r, c);
                    voxels[i] = bar.intensity;
                    labels[i] = bar.label;
                }
            }
        }
    }
    for r in BLOB_ROWS.0..=BLOB_ROWS.1 {
        for c in BLOB_COLS.0..=BLOB_COLS.1 {
            voxels[DIMS.index(AUX_SLICE, r, c)] = 160.0;
        }
    }

    let dtype = if preset == Preset::TwoBarsNoisy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
        for v in &mut voxels {
            *v += noise.sample(&mut rng) as f32;
        }
        DType::F32
    } else {
        DType::U8
    };

    let names: LabelNames = [(1, "femur".to_string()), (2, "tibia".to_string())].into();
    let volume = Volume::new(DIMS, voxels, dtype)
        .and_then(|v| v.with_spacing([0.7, 0.36, 0.36]))
        .expect("preset geometry is valid");
    let labels = LabelVolume::new(DIMS, labels, names).expect("preset labels are named");
    let aux = AuxPointFile {
        format: crate::prompts::AUX_FORMAT.into(),
        volume_id: Some(preset.as_str().into()),
        points: vec![AuxPoint {
            name: "patella".into(),
            slice_index: AUX_SLICE,
            x: (BLOB_COLS.0 + BLOB_COLS.1) as f64 / 2.0,
            y: (BLOB_ROWS.0 + BLOB_ROWS.1) as f64 / 2.0,
            object_id: None,
        }],
    };
    SyntheticCase {
        volume,
        labels,
        aux,
        preset,
        seed,
    }
}
