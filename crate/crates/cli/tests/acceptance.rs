//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! console. Exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::io::Read as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicecast::driver::{run_video_mode, PredictionSet, RunOptions};
use slicecast::metrics::{dsc, render_report, MetricsRecord, ReportFormat, SummaryRow, SummaryTable};
use slicecast::prompts::{
    build_prompts, summarize, AuxPoint, AuxPointFile, BuildOptions, ObjectEntry, PointPrompt, Prompt, PromptSet,
    Scheme, Sign,
};
use slicecast::refbackends::{make_synthetic_case, Preset};
use slicecast::volio::{load_volume, save_volume, volume_to_frames, DType, Dims, Frame, LabelNames, LabelVolume, Volume, Window};
use slicecast::wireproto::server::{Backend, BackendFailure, Emit, PropagateError, Session};
use slicecast::wireproto::{decode_mask_rle, encode_mask_rle, BackendConnection, Direction, Mode, RleMask, WirePrompt};
use slicecast::{BinaryMask, MaskVolume};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("end-to-end gt-echo oracle", end_to_end_oracle),
        ("prompt-count identities", prompt_count_identities),
        ("dsc oracle equivalence", dsc_oracle_equivalence),
        ("rle codec", rle_codec),
        ("volume i/o round trip", volume_round_trip),
        ("propagation coverage", propagation_coverage),
        ("region-grow negative prompt", region_grow_negative_prompt),
        ("report fixture", report_fixture),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn slicecast(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slicecast"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`slicecast {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// synth → prompts → run (video, gt-echo) → eval, all through the CLI.
fn end_to_end_oracle() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let start = Instant::now();
    slicecast(d, &["synth", "--preset", "two_bars", "--out", "case"])?;
    slicecast(
        d,
        &[
            "prompts", "--labels", "case/labels.nii.gz", "--scheme", "three_point_video", "--aux", "case/aux.json",
            "--out", "prompts.json",
        ],
    )?;
    slicecast(
        d,
        &[
            "run", "--volume", "case/volume.nii.gz", "--prompts", "prompts.json", "--mode", "video", "--backend",
            "slicecast-backend-gtecho case/labels.nii.gz", "--out", "runs",
        ],
    )?;
    let metrics = slicecast(
        d,
        &["eval", "--pred", "runs/volume.pred.jsonl", "--labels", "case/labels.nii.gz"],
    )?;
    let elapsed = start.elapsed();
    let rec: MetricsRecord = serde_json::from_str(metrics.trim()).map_err(|e| e.to_string())?;
    let (femur, tibia) = (rec.score("femur"), rec.score("tibia"));
    check!(femur == Some(1.0), "femur DSC {femur:?}");
    check!(tibia == Some(1.0), "tibia DSC {tibia:?}");
    check!(rec.combined == Some(1.0), "combined DSC {:?}", rec.combined);
    check!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("femur, tibia and combined DSC exactly 1.0 in {:.2} s", elapsed.as_secs_f64()))
}

/// Two structures on every one of 160 slices plus one auxiliary point.
fn full_occupancy_labels() -> (LabelVolume, AuxPointFile) {
    let dims = Dims::new(160, 24, 24);
    let mut labels = vec![0u8; dims.len()];
    for s in 0..dims.slices {
        for r in 0..dims.rows {
            for c in 0..dims.cols {
                labels[dims.index(s, r, c)] = match (r, c) {
                    (2..=9, 2..=9) => 1,
                    (14..=21, 12..=19) => 2,
                    _ => 0,
                };
            }
        }
    }
    let names: LabelNames = [(1, "femur".to_string()), (2, "tibia".to_string())].into_iter().collect();
    let aux = AuxPointFile::new(vec![AuxPoint {
        name: "patella".into(),
        slice_index: 80,
        x: 20.5,
        y: 3.5,
        object_id: None,
    }]);
    (LabelVolume::new(dims, labels, names).expect("valid labels"), aux)
}

fn prompt_count_identities() -> Verdict {
    let (labels, aux) = full_occupancy_labels();
    let (slices, structures, aux_points) = (160, 2, 1);
    let counts = |scheme| {
        build_prompts(&labels, scheme, Some(&aux), BuildOptions::default()).map(|ps| summarize(&ps))
    };
    let point = counts(Scheme::Point).map_err(|e| e.to_string())?;
    let boxes = counts(Scheme::Box).map_err(|e| e.to_string())?;
    let video = counts(Scheme::ThreePointVideo).map_err(|e| e.to_string())?;
    check!(point.total == structures * slices + aux_points, "point scheme gave {}", point.total);
    check!(point.total == 321, "point scheme gave {}", point.total);
    check!(boxes.boxes == structures * slices && boxes.boxes == 320, "box scheme gave {}", boxes.boxes);
    check!(boxes.box_corner_values == 1280, "box corner values {}", boxes.box_corner_values);
    // one positive per structure, one negative per other structure and aux point
    let expected_video = structures * (1 + (structures - 1) + aux_points);
    check!(video.total == expected_video && video.total == 6, "three_point_video gave {}", video.total);
    check!(video.positive == 2 && video.negative == 4, "{} positive, {} negative", video.positive, video.negative);
    Ok(format!(
        "point {}, box {} ({} corner values), three_point_video {}",
        point.total, boxes.boxes, boxes.box_corner_values, video.total
    ))
}

/// Sorted foreground indices.
fn foreground(bits: &[bool]) -> Vec<usize> {
    bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn brute_force_dsc(a: &[bool], b: &[bool]) -> f64 {
    let (fa, fb) = (foreground(a), foreground(b));
    let (mut i, mut j, mut both) = (0, 0, 0usize);
    while i < fa.len() && j < fb.len() {
        match fa[i].cmp(&fb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if fa.is_empty() && fb.is_empty() {
        1.0
    } else {
        2.0 * both as f64 / (fa.len() + fb.len()) as f64
    }
}

fn random_dims(rng: &mut ChaCha8Rng, max_side: usize) -> Dims {
    Dims::new(rng.random_range(1..=max_side), rng.random_range(1..=max_side), rng.random_range(1..=max_side))
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(density)).collect()
}

fn dsc_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd5c);
    let (mut worst, mut both_empty) = (0.0f64, 0);
    for case in 0..1000 {
        let dims = random_dims(&mut rng, 64);
        check!(dims.len() <= 64 * 64 * 64, "oversized case");
        // every tenth pair is empty on both sides
        let (pa, pb) = if case % 10 == 0 { (0.0, 0.0) } else { (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)) };
        let (a, b) = (random_bits(&mut rng, dims.len(), pa), random_bits(&mut rng, dims.len(), pb));
        let ma = MaskVolume::from_bits(dims, a.clone()).expect("sized");
        let mb = MaskVolume::from_bits(dims, b.clone()).expect("sized");
        let d = dsc(&ma, &mb).map_err(|e| e.to_string())?;
        let oracle = brute_force_dsc(&a, &b);
        worst = worst.max((d - oracle).abs());
        check!((d - oracle).abs() <= 1e-12, "case {case}: {d} vs oracle {oracle}");
        check!(d == dsc(&mb, &ma).map_err(|e| e.to_string())?, "case {case}: asymmetric");
        if ma.count() == 0 && mb.count() == 0 {
            both_empty += 1;
            check!(d == 1.0, "case {case}: both empty gave {d}");
        }
    }
    check!(both_empty >= 100, "only {both_empty} both-empty cases");
    Ok(format!("1000 pairs, max |diff| {worst:e}, symmetric, {both_empty} both-empty cases scored 1.0"))
}

fn rle_codec() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41e);
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let density = match case % 4 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let mask = BinaryMask::from_bits(w, h, random_bits(&mut rng, w * h, density)).expect("sized");
        let rle = encode_mask_rle(&mask);
        let back = decode_mask_rle(&rle).map_err(|e| format!("case {case}: {e}"))?;
        check!(back == mask, "case {case}: round trip differs");
        check!(rle.runs.iter().sum::<usize>() == w * h, "case {case}: run sum");

        let mut longer = rle.clone();
        *longer.runs.last_mut().expect("nonempty") += 1;
        check!(decode_mask_rle(&longer).is_err(), "case {case}: overlong runs accepted");
        if rle.runs.len() > 1 {
            let mut shorter = rle.clone();
            shorter.runs.pop();
            check!(decode_mask_rle(&shorter).is_err(), "case {case}: short runs accepted");
        }
    }
    let bad = RleMask { width: 3, height: 2, runs: vec![5] };
    check!(decode_mask_rle(&bad).is_err(), "runs [5] for 3×2 accepted");
    Ok("1000 masks round-trip bit-exactly; mismatched run sums rejected".into())
}

fn volume_round_trip() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x11f);
    let dims = Dims::new(5, 7, 9);
    let cases: [(DType, f64, f64); 4] = [
        (DType::U8, 0.0, 255.0),
        (DType::I16, -32768.0, 32767.0),
        (DType::U16, 0.0, 65535.0),
        (DType::F32, -1e6, 1e6),
    ];
    for (dtype, lo, hi) in cases {
        let mut voxels: Vec<f32> = (0..dims.len())
            .map(|_| {
                let v = rng.random_range(lo..=hi);
                if dtype == DType::F32 { v as f32 } else { v.round() as f32 }
            })
            .collect();
        voxels[0] = lo as f32;
        voxels[1] = hi as f32;
        let vol = Volume::new(dims, voxels, dtype).map_err(|e| e.to_string())?;
        let plain = dir.path().join(format!("{dtype:?}.nii"));
        let gz = dir.path().join(format!("{dtype:?}.nii.gz"));
        save_volume(&plain, &vol).map_err(|e| e.to_string())?;
        save_volume(&gz, &vol).map_err(|e| e.to_string())?;
        let a = load_volume(&plain, None).map_err(|e| e.to_string())?;
        let b = load_volume(&gz, None).map_err(|e| e.to_string())?;
        check!(a.dims() == dims && a.source_dtype() == dtype, "{dtype:?}: header changed");
        check!(
            a.voxels().iter().zip(vol.voxels()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{dtype:?}: voxels differ after round trip"
        );
        check!(a == b, "{dtype:?}: gzip read differs from plain");
        let compressed = std::fs::read(&gz).map_err(|e| e.to_string())?;
        let mut unzipped = Vec::new();
        flate2::read::MultiGzDecoder::new(&compressed[..])
            .read_to_end(&mut unzipped)
            .map_err(|e| e.to_string())?;
        check!(unzipped == std::fs::read(&plain).map_err(|e| e.to_string())?, "{dtype:?}: gzip payload differs");
    }
    Ok("u8, i16, u16 and f32 voxel-exact; gzip payload identical to plain file".into())
}

/// Video backend whose masks record the producing direction: forward
/// frames light pixel (0, 0), backward frames pixel (0, 1).
struct DirectionTagger;

impl Backend for DirectionTagger {
    fn backend_id(&self) -> String {
        "direction-tagger".into()
    }

    fn modes(&self) -> Vec<Mode> {
        vec![Mode::Video]
    }

    fn segment_image(&mut self, _: &Frame, _: &[WirePrompt], _: &[u8]) -> Result<Vec<(u8, BinaryMask)>, BackendFailure> {
        Err(BackendFailure::new("unsupported_mode", "video only"))
    }

    fn propagate(&mut self, session: &Session, direction: Direction, emit: &mut Emit<'_>) -> Result<(), PropagateError> {
        let start = session.start_frame(direction).expect("prompted session");
        let mut tag = BinaryMask::empty(2, 1);
        tag.set(0, if direction == Direction::Forward { 0 } else { 1 }, true);
        for frame in direction.sequence(start, session.n_frames()) {
            for object in session.objects() {
                emit(frame, object, &tag)?;
            }
        }
        Ok(())
    }
}

fn anchored_prompts(slices: usize, anchor: usize, objects: u8) -> PromptSet {
    let mut ps = PromptSet::empty(Scheme::PointVideo, Dims::new(slices, 1, 2));
    ps.anchor_slice = Some(anchor);
    for o in 1..=objects {
        ps.objects.insert(o, ObjectEntry { name: format!("s{o}"), aux: false });
        ps.prompts.push(Prompt::Point(PointPrompt {
            x: 0.5,
            y: 0.5,
            sign: Sign::Positive,
            slice_index: anchor,
            object_id: o,
        }));
    }
    ps
}

fn propagation_coverage() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0e);
    let mut runs = 0;
    for slices in [1usize, 2, 7, 16] {
        let mut anchors: Vec<usize> = (0..4).map(|_| rng.random_range(0..slices)).collect();
        anchors.extend([0, slices - 1]);
        for anchor in anchors {
            let objects = rng.random_range(1..=3u8);
            let ps = anchored_prompts(slices, anchor, objects);
            let frames: Vec<Frame> = (0..slices).map(|i| Frame::new(i, 2, 1, vec![0, 0]).expect("sized")).collect();
            let mut conn = BackendConnection::in_process(DirectionTagger, Duration::from_secs(10)).map_err(|e| e.to_string())?;
            let pred = run_video_mode(&frames, &ps, &mut conn, &RunOptions::default())
                .map_err(|e| format!("S={slices} anchor={anchor}: {e}"))?;

            // count cells in the serialized prediction file
            let mut file = Vec::new();
            pred.write_to(&mut file).map_err(|e| e.to_string())?;
            let mut cells: BTreeMap<(u64, u64), usize> = BTreeMap::new();
            for line in String::from_utf8_lossy(&file).lines().skip(1) {
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
                *cells.entry((v["object"].as_u64().unwrap_or(0), v["slice"].as_u64().unwrap_or(0))).or_default() += 1;
            }
            check!(
                cells.len() == objects as usize * slices && cells.values().all(|&n| n == 1),
                "S={slices} anchor={anchor}: {} distinct cells for {objects} objects",
                cells.len()
            );
            let reread = PredictionSet::read_from(&file[..]).map_err(|e| e.to_string())?;
            check!(reread == pred, "S={slices}: prediction file does not round-trip");

            for o in 1..=objects {
                for s in 0..slices {
                    let m = pred.mask(o, s).ok_or(format!("missing cell ({o}, {s})"))?;
                    let from_forward = s >= anchor;
                    check!(m.count() == 1, "S={slices} anchor={anchor}: cell ({o}, {s}) has {} pixels", m.count());
                    check!(
                        m.get(0, 0) == from_forward,
                        "S={slices} anchor={anchor}: slice {s} came from the wrong pass"
                    );
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs over S in {{1, 2, 7, 16}}: one mask per cell, anchor slice from the forward pass"))
}

fn region_grow_negative_prompt() -> Verdict {
    let case = make_synthetic_case(Preset::TouchingBars, 0);
    let frames = volume_to_frames(&case.volume, Window::default()).map_err(|e| e.to_string())?;
    let slice = 8;
    let target = case.labels.slice_mask(1, slice);
    let distractor = case.labels.slice_mask(2, slice);
    check!(!target.is_empty() && !distractor.is_empty(), "bars missing on slice {slice}");

    let centroid = |m: &BinaryMask| {
        let n = m.count() as f64;
        let (sx, sy) = m.foreground().fold((0.0, 0.0), |(sx, sy), (r, c)| (sx + c as f64, sy + r as f64));
        (sx / n, sy / n)
    };
    let point = |(x, y): (f64, f64), sign| {
        Prompt::Point(PointPrompt { x, y, sign, slice_index: slice, object_id: 1 })
    };
    let positive = point(centroid(&target), Sign::Positive);
    let negative = point(centroid(&distractor), Sign::Negative);

    let backend = Path::new(env!("CARGO_BIN_EXE_slicecast-backend-regiongrow"));
    let mut conn = BackendConnection::spawn(&format!("{} --tolerance 0", backend.display()), Duration::from_secs(10))
        .map_err(|e| e.to_string())?;
    let without = conn.segment_image(&frames[slice], &[positive]).map_err(|e| e.to_string())?;
    let with = conn.segment_image(&frames[slice], &[positive, negative]).map_err(|e| e.to_string())?;
    let both_bars = target.union(&distractor);
    check!(without[&1] == both_bars, "positive alone did not select both touching bars");
    check!(with[&1] == target, "with the negative prompt the mask is not exactly the target bar");
    Ok(format!(
        "positive alone selects both bars ({} px); adding the negative leaves exactly the target ({} px)",
        both_bars.count(),
        target.count()
    ))
}

fn report_fixture() -> Verdict {
    let row = |scheme, model: &str, femur: f64, tibia: f64, combined: f64| SummaryRow {
        scheme,
        backend_id: model.into(),
        scores: [("femur".to_string(), femur), ("tibia".to_string(), tibia)].into_iter().collect(),
        combined: Some(combined),
        n_volumes: 1,
    };
    let table = SummaryTable {
        structures: vec!["femur".into(), "tibia".into()],
        rows: vec![
            row(Scheme::Point, "sam2_hiera_base_plus", 0.7409, 0.8155, 0.7664),
            row(Scheme::ThreePointVideo, "sam2_hiera_large", 0.9322, 0.9222, 0.9196),
        ],
    };
    let md = render_report(&table, ReportFormat::Markdown);
    let tsv = render_report(&table, ReportFormat::Tsv);
    for line in [
        "| point | sam2_hiera_base_plus | 0.7409 | 0.8155 | 0.7664 | 1 |",
        "| 3 points + video | sam2_hiera_large | 0.9322 | 0.9222 | 0.9196 | 1 |",
    ] {
        check!(md.lines().any(|l| l == line), "markdown lacks `{line}`:\n{md}");
    }
    for line in [
        "point\tsam2_hiera_base_plus\t0.7409\t0.8155\t0.7664\t1",
        "3 points + video\tsam2_hiera_large\t0.9322\t0.9222\t0.9196\t1",
    ] {
        check!(tsv.lines().any(|l| l == line), "tsv lacks `{line}`");
    }
    check!(md.lines().next() == Some("| Prompt | Model | Femur | Tibia | Femur + Tibia | Volumes |"), "header");
    Ok("0.7409 / 0.8155 / 0.7664 and 0.9322 / 0.9222 / 0.9196 rendered verbatim".into())
}
