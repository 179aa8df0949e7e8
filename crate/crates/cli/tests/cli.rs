use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chimptrack"));
    c.env("CHIMPTRACK_NO_COLOR", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn synth_into(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("scene");
    let mut args = vec!["synth", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn write_video(path: &Path, frames: usize) {
    let n = frames * 64 * 64 * 3;
    let data: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let v = serde_json::json!({"schema_version": 1, "shape": [frames, 64, 64, 3], "data": data});
    std::fs::write(path, v.to_string()).unwrap();
}

#[test]
fn synth_default_run_emits_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--seed", "3"]);
    let mut names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["annotations.json", "detections.json", "detections_clean.json"]);
}

#[test]
fn synth_prints_seed_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(&["synth", "--out", s(&dir.path().join("x")), "--seed", "11", "--frames", "50"]);
    let text = stdout(&o);
    assert!(text.starts_with("seed 11\n"), "{text}");
    assert!(text.contains("5 agents, 50 frames"), "{text}");
}

#[test]
fn synth_same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--out", s(&a), "--seed", "42"]);
    ok(&["synth", "--out", s(&b), "--seed", "42"]);
    for f in ["annotations.json", "detections.json", "detections_clean.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["synth", "--out", s(&c), "--seed", "43"]);
    assert_ne!(read(&a.join("detections.json")), read(&c.join("detections.json")));
}

#[test]
fn synth_honors_nine_agents() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--agents", "9"]);
    let ann: Value = serde_json::from_str(&read(&out.join("annotations.json"))).unwrap();
    let mut ids: Vec<u64> = ann["frames"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|f| f["instances"].as_array().unwrap().iter().map(|i| i["track_id"].as_u64().unwrap()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 9);
}

#[test]
fn synth_scenes_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--out", s(&a), "--scenes", "3", "--frames", "60", "--workers", "1"]);
    ok(&["synth", "--out", s(&b), "--scenes", "3", "--frames", "60", "--workers", "3"]);
    for sub in ["annotations", "detections", "detections_clean"] {
        let mut files: Vec<PathBuf> = std::fs::read_dir(a.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        assert_eq!(files.len(), 3);
        for f in files {
            assert_eq!(read(&f), read(&b.join(sub).join(f.file_name().unwrap())));
        }
    }
}

#[test]
fn synth_rejects_bad_noise_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out", s(dir.path()), "--fn-rate", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fn_rate"));
}

#[test]
fn clean_detections_track_to_perfect_idf1() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--seed", "5"]);
    let tracks = dir.path().join("tracks.csv");
    ok(&["track", "--det", s(&out.join("detections_clean.json")), "--out", s(&tracks)]);
    let seq = serde_json::from_str::<Value>(&read(&out.join("annotations.json"))).unwrap()["sequence_id"].as_str().unwrap().to_string();
    let renamed = dir.path().join(format!("{seq}.csv"));
    std::fs::rename(&tracks, &renamed).unwrap();
    let o = ok(&["evaluate", "--task", "tracking", "--gt", s(&out.join("annotations.json")), "--pred", s(&renamed), "--format", "json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["tracking"]["idf1"].as_f64(), Some(100.0));
    assert_eq!(report["tracking"]["mota"].as_f64(), Some(100.0));
}

#[test]
fn empty_detections_give_empty_csv() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("empty.json");
    std::fs::write(&det, r#"{"schema_version": 1, "sequence_id": "e", "image_size": {"width": 64, "height": 64}, "frames": []}"#).unwrap();
    let out = dir.path().join("t.csv");
    ok(&["track", "--det", s(&det), "--out", s(&out)]);
    assert_eq!(read(&out), "");
    std::fs::write(&det, "").unwrap();
    ok(&["track", "--det", s(&det), "--out", s(&out)]);
    assert_eq!(read(&out), "");
}

#[test]
fn track_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--seed", "8"]);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["track", "--det", s(&out.join("detections.json")), "--out", s(&a)]);
    ok(&["track", "--det", s(&out.join("detections.json")), "--out", s(&b), "--workers", "4"]);
    assert!(!read(&a).is_empty());
    assert_eq!(read(&a), read(&b));
}

#[test]
fn track_reports_parse_failures_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("bad.json");
    std::fs::write(
        &det,
        r#"{"schema_version": 1, "sequence_id": "b", "image_size": {"width": 64, "height": 64},
            "frames": [{"frame": 0, "detections": [{"box": [0, 0, 10], "class_conf": 0.9, "behavior_scores": []}]}]}"#,
    )
    .unwrap();
    let o = run(&["track", "--det", s(&det), "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frames[0].detections[0].box"), "{}", stderr(&o));
}

#[test]
fn track_json_output_keeps_behavior_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--seed", "2"]);
    let tracks = dir.path().join("tracks.json");
    ok(&["track", "--det", s(&out.join("detections_clean.json")), "--out", s(&tracks)]);
    let o = ok(&["evaluate", "--task", "behavior", "--gt", s(&out.join("annotations.json")), "--pred", s(&tracks), "--format", "json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["behavior"]["map"].as_f64(), Some(100.0));
}

#[test]
fn perfect_tracking_prints_hota_100_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &[]);
    let o = ok(&["evaluate", "--task", "tracking", "--gt", s(&out.join("annotations.json")), "--pred", s(&out.join("detections_clean.json"))]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Method        HOTA    MOTA    MOTP    IDF1     mAP     nFP     nFN    nIDs");
    assert_eq!(lines[2], "chimptrack   100.0   100.0   100.0   100.0   100.0     0.0     0.0     0.0");
}

#[test]
fn behavior_report_has_supercategory_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &[]);
    let o = ok(&["evaluate", "--task", "behavior", "--gt", s(&out.join("annotations.json")), "--pred", s(&out.join("detections.json"))]);
    let header = stdout(&o).lines().next().unwrap().to_string();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["Method", "mAP", "mAP_L", "mAP_O", "mAP_S"]);
}

#[test]
fn evaluate_writes_json_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &[]);
    let side = dir.path().join("report.json");
    let o = ok(&[
        "evaluate",
        "--task",
        "detection",
        "--gt",
        s(&out.join("annotations.json")),
        "--pred",
        s(&out.join("detections.json")),
        "--out",
        s(&side),
        "--method",
        "mine",
    ]);
    assert!(stdout(&o).contains("mine"));
    let report: Value = serde_json::from_str(&read(&side)).unwrap();
    assert_eq!(report["method"], "mine");
    assert_eq!(report["task"], "detection");
    assert!(report["detection"]["ap"].as_f64().unwrap() > 0.0);
}

#[test]
fn unpaired_sequences_exit_three_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_into(dir.path(), &["--seed", "1"]);
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "1,1,10,10,20,20,1,-1,-1,-1\n").unwrap();
    let o = run(&["evaluate", "--task", "tracking", "--gt", s(&out.join("annotations.json")), "--pred", s(&other)]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("synth-0000000000000001") && err.contains("other"), "{err}");
}

#[test]
fn evaluate_directories_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("many");
    ok(&["synth", "--out", s(&root), "--scenes", "4", "--frames", "80"]);
    let eval = |w: &str| {
        stdout(&ok(&[
            "evaluate",
            "--task",
            "tracking",
            "--gt",
            s(&root.join("annotations")),
            "--pred",
            s(&root.join("detections_clean")),
            "--format",
            "json",
            "--workers",
            w,
        ]))
    };
    let one = eval("1");
    assert_eq!(one, eval("4"));
    let report: Value = serde_json::from_str(&one).unwrap();
    assert_eq!(report["sequences"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_input_exits_two() {
    let o = run(&["evaluate", "--task", "tracking", "--gt", "/nonexistent/a.json", "--pred", "/nonexistent/b.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selfcheck_passes_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let sum = dir.path().join("summary.json");
    let o = ok(&["selfcheck", "--summary", s(&sum)]);
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")), "{}", stdout(&o));
    let v: Value = serde_json::from_str(&read(&sum)).unwrap();
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for want in ["hungarian.brute_force", "gradient.giou", "metrics.hota", "shape.contract"] {
        assert!(names.contains(&want), "{names:?}");
    }
}

#[test]
fn selfcheck_names_a_corrupted_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("params.json");
    ok(&["params", "--out", s(&p), "--seed", "4"]);
    let text = read(&p).replacen("\"data\":[", "\"data\":[\"oops\",", 1);
    std::fs::write(&p, text).unwrap();
    let o = run(&["selfcheck", "--params", s(&p), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failing: Vec<&str> = v["checks"].as_array().unwrap().iter().filter(|c| c["passed"] == false).map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(failing, ["params.load", "shape.contract"]);
    assert!(stderr(&o).contains("params.load"));
}

#[test]
fn selfcheck_accepts_a_valid_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("params.json");
    ok(&["params", "--out", s(&p), "--seed", "4", "--init", "averaging"]);
    ok(&["selfcheck", "--params", s(&p)]);
}

#[test]
fn forward_emits_one_frame_per_window() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("clip.json");
    write_video(&video, 11);
    let out = dir.path().join("det.json");
    ok(&["forward", "--video", s(&video), "--out", s(&out), "--seed", "9"]);
    let d: Value = serde_json::from_str(&read(&out)).unwrap();
    assert_eq!(d["sequence_id"], "clip");
    let frames: Vec<u64> = d["frames"].as_array().unwrap().iter().map(|f| f["frame"].as_u64().unwrap()).collect();
    assert_eq!(frames, [7, 8, 9, 10]);
    for f in d["frames"].as_array().unwrap() {
        for det in f["detections"].as_array().unwrap() {
            assert!(det["class_conf"].as_f64().unwrap() >= 0.3);
            assert_eq!(det["behavior_scores"].as_array().unwrap().len(), 23);
        }
    }
}

#[test]
fn forward_is_byte_identical_for_fixed_params() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("clip.json");
    write_video(&video, 9);
    let params = dir.path().join("p.json");
    ok(&["params", "--out", s(&params), "--seed", "21"]);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["forward", "--video", s(&video), "--params", s(&params), "--out", s(&a)]);
    ok(&["forward", "--video", s(&video), "--params", s(&params), "--out", s(&b), "--workers", "2"]);
    assert_eq!(read(&a), read(&b));
    let c = dir.path().join("c.json");
    ok(&["forward", "--video", s(&video), "--out", s(&c), "--seed", "21"]);
    assert_eq!(read(&a), read(&c));
}

#[test]
fn forward_shape_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("short.json");
    write_video(&video, 5);
    let o = run(&["forward", "--video", s(&video), "--out", s(&dir.path().join("d.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape mismatch"));

    let long = dir.path().join("long.json");
    write_video(&long, 8);
    let params = dir.path().join("p.json");
    ok(&["params", "--out", s(&params)]);
    let o = run(&["forward", "--video", s(&long), "--params", s(&params), "--dims", "Q=5", "--out", s(&dir.path().join("d.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape mismatch"));
}
