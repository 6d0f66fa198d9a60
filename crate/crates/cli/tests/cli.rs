use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_GRID: [&str; 4] = ["--grid-origin=-6.4,-6.4,-6.4", "--grid-dims", "32,32,32", "--resolution=0.4"];

fn sqocc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqocc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sqocc(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let mut args = args.to_vec();
    args.extend(["--format", "json"]);
    serde_json::from_str(&ok(dir, &args)).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

fn small_scene(dir: &Path, name: &str, seed: &str, count: &str) {
    let mut args = vec!["gen-scene", "--seed", seed, "--count", count, "--out", name];
    args.extend(SMALL_GRID);
    ok(dir, &args);
}

const CAMERA: &str = r#"{"fx": 60, "fy": 60, "width": 64, "height": 48, "near": 0.1, "far": 60,
  "look_at": {"eye": [0, -14, 4], "target": [0, 0, 0], "up": [0, 0, 1]}}"#;

#[test]
fn gen_scene_with_zero_primitives_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-scene", "--count", "0", "--out", "empty.jsonl"]);
    let text = fs::read_to_string(dir.path().join("empty.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["version"], 1);
    assert_eq!(header["classes"].as_array().unwrap().len(), 17);
}

#[test]
fn gaussianize_defaults_emit_720_per_primitive() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "1", "3");
    let report = json(dir.path(), &["gaussianize", "--scene", "s.jsonl", "--out", "c.jsonl"]);
    assert_eq!(report["per_primitive"], 720);
    assert_eq!(report["gaussians"], 3 * 720);
    let cloud = fs::read_to_string(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(cloud.lines().count(), 3 * 720);
    let first: Value = serde_json::from_str(cloud.lines().next().unwrap()).unwrap();
    for key in ["mean", "scales", "rot", "opacity", "logits", "parent", "layer"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn voxelize_without_flags_uses_default_threshold() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "2", "5");
    let mut args = vec!["voxelize", "--scene", "s.jsonl", "--out", "a.sqoc"];
    args.extend(SMALL_GRID);
    let report = json(dir.path(), &args);
    assert_eq!(report["tau"], 0.01);
    assert_eq!(report["neighborhood"], 5);

    args[4] = "b.sqoc";
    args.extend(["--tau", "0.01"]);
    ok(dir.path(), &args);
    assert_eq!(fs::read(dir.path().join("a.sqoc")).unwrap(), fs::read(dir.path().join("b.sqoc")).unwrap());
}

#[test]
fn grid_files_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "3", "30");
    let mut outputs = Vec::new();
    for (name, threads) in [("a.sqoc", "1"), ("b.sqoc", "1"), ("c.sqoc", "4")] {
        let mut args = vec!["voxelize", "--scene", "s.jsonl", "--out", name, "--with-occupancy"];
        args.extend(SMALL_GRID);
        let out = Command::new(env!("CARGO_BIN_EXE_sqocc"))
            .current_dir(dir.path())
            .env("SQOCC_THREADS", threads)
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(dir.path().join(name)).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn validation_failures_exit_nonzero_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "4", "2");
    fs::write(dir.path().join("cam.json"), CAMERA).unwrap();
    fs::write(
        dir.path().join("bad_cam.json"),
        r#"{"fx": -1, "fy": 1, "width": 4, "height": 4, "near": 0.1, "far": 1,
        "look_at": {"eye": [0, 0, 0], "target": [1, 0, 0], "up": [0, 0, 1]}}"#,
    )
    .unwrap();
    fs::write(dir.path().join("broken.jsonl"), "{\"version\": 1, \"classes\": [\"a\"]}\n{\"mu\": [0, 0]}\n").unwrap();
    let before = files(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["voxelize", "--scene", "s.jsonl", "--out", "x.sqoc", "--tau", "-1"],
        vec!["voxelize", "--scene", "s.jsonl", "--out", "x.sqoc", "--resolution", "0"],
        vec!["voxelize", "--scene", "s.jsonl", "--out", "x.sqoc", "--grid-dims", "0,4,4"],
        vec!["voxelize", "--scene", "missing.jsonl", "--out", "x.sqoc"],
        vec!["voxelize", "--scene", "broken.jsonl", "--out", "x.sqoc"],
        vec!["gaussianize", "--scene", "s.jsonl", "--out", "x.jsonl", "--level", "9"],
        vec!["gaussianize", "--scene", "s.jsonl", "--out", "x.jsonl", "--k-values", "1,0.5"],
        vec!["render", "--scene", "s.jsonl", "--camera", "bad_cam.json", "--out", "x"],
        vec!["render", "--scene", "s.jsonl", "--camera", "cam.json", "--out", "x", "--mode", "raymarch", "--step", "0"],
        vec!["metrics", "--pred", "missing.sqoc", "--gt", "missing.sqoc"],
        vec!["slice", "--out", "x", "--size", "0"],
    ];
    for args in cases {
        let out = sqocc(dir.path(), &args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} should explain itself");
        assert_eq!(files(dir.path()), before, "{args:?} left files behind");
    }
}

#[test]
fn render_of_empty_scene_is_blank() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-scene", "--count", "0", "--out", "empty.jsonl"]);
    fs::write(dir.path().join("cam.json"), CAMERA).unwrap();
    for mode in ["splat", "raymarch"] {
        let report = json(
            dir.path(),
            &["render", "--scene", "empty.jsonl", "--camera", "cam.json", "--out", mode, "--mode", mode],
        );
        assert_eq!(report["covered"], 0);
        let alpha = fs::read(dir.path().join(format!("{mode}.alpha.pgm"))).unwrap();
        let header = b"P5\n64 48\n255\n";
        assert_eq!(&alpha[..header.len()], header);
        assert!(alpha[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(alpha.len(), header.len() + 64 * 48);
        let sem = fs::read(dir.path().join(format!("{mode}.sem.ppm"))).unwrap();
        assert!(sem[b"P6\n64 48\n255\n".len()..].iter().all(|&b| b == 0));
        let depth = fs::read(dir.path().join(format!("{mode}.depth.pfm"))).unwrap();
        assert!(depth.starts_with(b"Pf\n64 48\n-1.0\n"));
        assert!(depth[b"Pf\n64 48\n-1.0\n".len()..].iter().all(|&b| b == 0));
    }
}

#[test]
fn render_accepts_scenes_and_clouds_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "5", "2");
    fs::write(dir.path().join("cam.json"), CAMERA).unwrap();
    ok(dir.path(), &["gaussianize", "--scene", "s.jsonl", "--out", "c.jsonl"]);
    ok(dir.path(), &["render", "--scene", "s.jsonl", "--camera", "cam.json", "--out", "a"]);
    ok(dir.path(), &["render", "--scene", "c.jsonl", "--camera", "cam.json", "--out", "b"]);
    for ext in ["depth.pfm", "sem.ppm", "alpha.pgm"] {
        assert_eq!(
            fs::read(dir.path().join(format!("a.{ext}"))).unwrap(),
            fs::read(dir.path().join(format!("b.{ext}"))).unwrap(),
            "{ext}"
        );
    }
    let report = json(
        dir.path(),
        &[
            "render",
            "--scene",
            "s.jsonl",
            "--camera",
            "cam.json",
            "--out",
            "m",
            "--mode",
            "raymarch",
            "--step",
            "0.1",
            "--compare",
        ],
    );
    let cmp = &report["compare"];
    assert!(cmp["semantic_agreement"].as_f64().unwrap() <= 1.0);
    assert!(cmp["median_rel_depth_error"].as_f64().unwrap() >= 0.0);
    let out = sqocc(
        dir.path(),
        &["render", "--scene", "c.jsonl", "--camera", "cam.json", "--out", "x", "--mode", "raymarch"],
    );
    assert!(!out.status.success(), "ray marching a cloud has no true density");
}

#[test]
fn palette_file_sets_semantic_colours() {
    let dir = tempfile::tempdir().unwrap();
    let scene = "{\"version\":1,\"classes\":[\"a\",\"b\"]}\n\
        {\"mu\":[0,0,0],\"scale\":[2,2,2],\"quat\":[1,0,0,0],\"opacity\":1,\"eps\":[1,1],\"logits\":[0,1]}\n";
    fs::write(dir.path().join("s.jsonl"), scene).unwrap();
    fs::write(dir.path().join("cam.json"), CAMERA).unwrap();
    fs::write(dir.path().join("pal.txt"), "# a\n10 20 30\n40 50 60\n").unwrap();
    ok(dir.path(), &["render", "--scene", "s.jsonl", "--camera", "cam.json", "--out", "p", "--palette", "pal.txt"]);
    let sem = fs::read(dir.path().join("p.sem.ppm")).unwrap();
    let header = b"P6\n64 48\n255\n".len();
    let centre = header + 3 * (24 * 64 + 32);
    assert_eq!(&sem[centre..centre + 3], &[40, 50, 60]);
}

#[test]
fn metrics_of_a_grid_against_itself_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "6", "10");
    let mut args = vec!["voxelize", "--scene", "s.jsonl", "--out", "g.sqoc"];
    args.extend(SMALL_GRID);
    ok(dir.path(), &args);
    let report = json(dir.path(), &["metrics", "--pred", "g.sqoc", "--gt", "g.sqoc", "--out", "report.json"]);
    assert_eq!(report["iou"], 1.0);
    assert_eq!(report["miou"], 1.0);
    for (_, v) in report["ray_iou"].as_object().unwrap() {
        assert_eq!(v, 1.0);
    }
    assert!(report["per_class_iou"].as_object().unwrap().values().all(|v| v.is_null() || v == 1.0));
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn slice_writes_both_images() {
    let dir = tempfile::tempdir().unwrap();
    let report = json(dir.path(), &["slice", "--out", "fig", "--size", "64"]);
    assert_eq!(report["gaussians"], 720);
    assert!(report["supported_mean_abs_error"].as_f64().unwrap() > 0.0);
    for name in ["fig.truth.pgm", "fig.mixture.pgm"] {
        let bytes = fs::read(dir.path().join(name)).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    }
}

#[test]
fn bench_reports_stage_timings() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path(), "s.jsonl", "7", "5");
    let mut args = vec!["bench", "--scene", "s.jsonl", "--repetitions", "2", "--oracle", "--out", "bench.json"];
    args.extend(SMALL_GRID);
    ok(dir.path(), &args);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["repetitions"], 2);
    for stage in ["gaussianize_s", "voxelize_s", "splat_render_s"] {
        assert_eq!(report[stage]["samples"].as_array().unwrap().len(), 2, "{stage}");
    }
    assert!(report["speedup"].as_f64().unwrap() > 0.0);
}
