use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn slicecast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slicecast"))
        .args(args)
        .current_dir(dir)
        .env_remove("SLICECAST_BACKEND")
        .output()
        .expect("slicecast runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = slicecast(dir, args);
    assert!(
        out.status.success(),
        "`slicecast {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> Option<i32> {
    slicecast(dir, args).status.code()
}

fn case_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "case"]);
    dir
}

#[test]
fn synth_writes_case_files() {
    let dir = case_dir();
    for f in ["volume.nii.gz", "labels.nii.gz", "aux.json", "names.txt"] {
        assert!(dir.path().join("case").join(f).is_file(), "{f}");
    }
    let names = std::fs::read_to_string(dir.path().join("case/names.txt")).unwrap();
    assert_eq!(names.trim(), "1=femur,2=tibia");
}

#[test]
fn summarize_three_point_video() {
    let dir = case_dir();
    let d = dir.path();
    ok(
        d,
        &[
            "prompts", "--labels", "case/labels.nii.gz", "--names", "@case/names.txt", "--scheme",
            "three_point_video", "--aux", "case/aux.json", "--out", "p.json",
        ],
    );
    let text = ok(d, &["summarize", "p.json"]);
    assert!(text.lines().any(|l| l == "total 6"), "{text}");
    assert!(text.lines().any(|l| l == "anchor_slice 8"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&ok(d, &["summarize", "p.json", "--json"])).unwrap();
    assert_eq!(json["total"], 6);
    assert_eq!(json["negative"], 4);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let dir = case_dir();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(d, &["synth", "--preset", "two_bars_noisy", "--seed", "7", "--out", &format!("{out}/case")]);
        ok(
            d,
            &[
                "run", "--volume", &format!("{out}/case/volume.nii.gz"), "--labels", "case/labels.nii.gz", "--scheme",
                "point", "--aux", "case/aux.json", "--backend", "slicecast-backend-regiongrow", "--deterministic",
                "--out", &format!("{out}/runs"),
            ],
        );
        ok(
            d,
            &[
                "eval", "--pred", &format!("{out}/runs/volume.pred.jsonl"), "--labels", "case/labels.nii.gz", "--out",
                &format!("{out}/metrics.jsonl"),
            ],
        );
    }
    for f in ["case/volume.nii.gz", "case/labels.nii.gz", "case/aux.json", "runs/volume.pred.jsonl", "metrics.jsonl"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let pred = std::fs::read_to_string(d.join("a/runs/volume.pred.jsonl")).unwrap();
    assert!(!pred.lines().next().unwrap().contains("started_at"));
}

#[test]
fn batch_run_with_jobs_and_report() {
    let dir = case_dir();
    let d = dir.path();
    ok(d, &["synth", "--preset", "two_bars_noisy", "--seed", "3", "--out", "noisy"]);
    let same_name = [
        "run", "--volume", "case/volume.nii.gz", "--volume", "noisy/volume.nii.gz", "--labels", "case/labels.nii.gz",
        "--labels", "noisy/labels.nii.gz", "--scheme", "box", "--backend", "slicecast-backend-regiongrow", "--out", "runs",
    ];
    assert_eq!(code(d, &same_name), Some(1));
    std::fs::rename(d.join("noisy/volume.nii.gz"), d.join("noisy/noisy.nii.gz")).unwrap();
    let stdout = ok(
        d,
        &[
            "run", "--volume", "case/volume.nii.gz", "--volume", "noisy/noisy.nii.gz", "--labels",
            "case/labels.nii.gz", "--labels", "noisy/labels.nii.gz", "--scheme", "box", "--backend",
            "slicecast-backend-regiongrow --tolerance 60", "--jobs", "2", "--out", "runs",
        ],
    );
    assert_eq!(stdout.lines().collect::<Vec<_>>(), ["runs/volume.pred.jsonl", "runs/noisy.pred.jsonl"]);
    ok(
        d,
        &[
            "eval", "--pred", "runs/volume.pred.jsonl", "--pred", "runs/noisy.pred.jsonl", "--labels",
            "case/labels.nii.gz", "--out", "m.jsonl",
        ],
    );
    let md = ok(d, &["report", "m.jsonl"]);
    let lines: Vec<_> = md.lines().collect();
    assert_eq!(lines.len(), 3, "{md}");
    assert!(lines[2].starts_with("| bounding box | regiongrow-tol60 | "), "{md}");
    assert!(lines[2].ends_with(" | 2 |"), "{md}");
    let tsv = ok(d, &["report", "m.jsonl", "--format", "tsv"]);
    assert_eq!(tsv.lines().next(), Some("Prompt\tModel\tFemur\tTibia\tFemur + Tibia\tVolumes"));
}

#[test]
fn report_of_no_records_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let md = ok(dir.path(), &["report", "empty.jsonl"]);
    assert_eq!(md.lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = case_dir();
    let d = dir.path();
    ok(d, &["prompts", "--labels", "case/labels.nii.gz", "--scheme", "point_video", "--out", "v.json"]);

    assert_eq!(code(d, &["--help"]), Some(0));
    assert_eq!(code(d, &["run", "--help"]), Some(0));
    assert_eq!(code(d, &["frobnicate"]), Some(1));
    assert_eq!(code(d, &["synth", "--out", "x", "--bogus"]), Some(1));
    assert_eq!(code(d, &["prompts", "--labels", "case/labels.nii.gz", "--scheme", "nope"]), Some(1));
    assert_eq!(code(d, &["prompts", "--labels", "missing.nii", "--scheme", "point"]), Some(1));
    let mismatch = [
        "run", "--volume", "case/volume.nii.gz", "--prompts", "v.json", "--mode", "image", "--backend",
        "slicecast-backend-regiongrow", "--out", "r",
    ];
    assert_eq!(code(d, &mismatch), Some(1));
    let no_backend = ["run", "--volume", "case/volume.nii.gz", "--prompts", "v.json", "--out", "r"];
    assert_eq!(code(d, &no_backend), Some(1));
    let dead = [
        "run", "--volume", "case/volume.nii.gz", "--prompts", "v.json", "--backend", "/no/such/backend", "--out", "r",
    ];
    assert_eq!(code(d, &dead), Some(2));
    // a backend that exits before the handshake
    let wrong_grid = [
        "run", "--volume", "case/volume.nii.gz", "--labels", "case/labels.nii.gz", "--scheme", "point", "--backend",
        "slicecast-backend-gtecho missing.nii", "--out", "r",
    ];
    assert_eq!(code(d, &wrong_grid), Some(2));
}

#[test]
fn backend_from_environment() {
    let dir = case_dir();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_slicecast"))
        .args(["backend-check"])
        .env("SLICECAST_BACKEND", "slicecast-backend-gtecho case/labels.nii.gz")
        .current_dir(d)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.starts_with("backend gtecho\n"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS ")).count(), 8, "{text}");
}

struct KillOnDrop(std::process::Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn backend_over_tcp() {
    let dir = case_dir();
    let d = dir.path();
    let server = Command::new(env!("CARGO_BIN_EXE_slicecast-backend-regiongrow"))
        .args(["--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut server = KillOnDrop(server);
    let mut banner = String::new();
    BufReader::new(server.0.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").expect("banner").to_string();

    let check = ok(d, &["backend-check", "--backend", &addr]);
    assert!(check.contains("backend regiongrow-tol8"), "{check}");
    ok(
        d,
        &[
            "run", "--volume", "case/volume.nii.gz", "--labels", "case/labels.nii.gz", "--scheme",
            "three_point_video", "--aux", "case/aux.json", "--backend", &format!("tcp://{addr}"),
            "--concurrent-directions", "--out", "runs",
        ],
    );
    let metrics = ok(d, &["eval", "--pred", "runs/volume.pred.jsonl", "--labels", "case/labels.nii.gz"]);
    let rec: serde_json::Value = serde_json::from_str(metrics.trim()).unwrap();
    assert_eq!(rec["combined"], 1.0);
}

#[test]
fn gt_echo_per_object_sessions() {
    let dir = case_dir();
    let d = dir.path();
    ok(
        d,
        &[
            "run", "--volume", "case/volume.nii.gz", "--labels", "case/labels.nii.gz", "--scheme", "point_video",
            "--backend", "slicecast-backend-gtecho case/labels.nii.gz", "--per-object-sessions", "--out", "runs",
        ],
    );
    let metrics = ok(d, &["eval", "--pred", "runs/volume.pred.jsonl", "--labels", "case/labels.nii.gz", "--combined", "macro"]);
    let rec: serde_json::Value = serde_json::from_str(metrics.trim()).unwrap();
    assert_eq!(rec["combined_rule"], "macro_average");
    assert_eq!(rec["combined"], 1.0);
}
