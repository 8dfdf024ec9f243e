use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use landmark_bary::sandbox::face_template_68;
use landmark_bary::{Heatmap, LandmarkSet};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landmark-bary"))
        .args(args)
        .env_remove("LANDMARK_BARY_THREADS")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_set(path: &Path, s: &LandmarkSet) {
    fs::write(path, serde_json::to_string(s).unwrap()).unwrap();
}

fn small_set() -> LandmarkSet {
    LandmarkSet::from_xy(&[[0.2, 0.3], [0.7, 0.4], [0.5, 0.8], [0.3, 0.6]]).unwrap()
}

#[test]
fn transport_self_has_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    write_set(&a, &small_set());
    let out = run(&["transport", "--source", path_str(&a), "--target", path_str(&a), "--method", "exact"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cost"].as_f64(), Some(0.0));
    assert_eq!(v["plan"]["weights"].as_array().unwrap().len(), 4);
}

#[test]
fn transport_sinkhorn_is_close_to_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    write_set(&a, &small_set());
    write_set(&b, &small_set().translated(&landmark_bary::Vec2::new(0.05, -0.02)));
    let cost = |method: &str| {
        let out = run(&["transport", "--source", path_str(&a), "--target", path_str(&b), "--method", method, "--eps", "1e-4"]);
        assert!(out.status.success());
        serde_json::from_slice::<Value>(&out.stdout).unwrap()["cost"].as_f64().unwrap()
    };
    let (exact, ent) = (cost("exact"), cost("sinkhorn"));
    assert!((exact - ent).abs() / exact < 0.01, "{exact} vs {ent}");
}

#[test]
fn empty_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["barycenter", "--landmarks-dir", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no landmark files found"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["heatmap", "--out", "x.png"]).status.code(), Some(1));
    assert_eq!(run(&["transport", "--source", "a", "--target", "b", "--method", "simplex"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let out = run(&["transport", "--source", "/nonexistent/a.json", "--target", "/nonexistent/b.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn every_subcommand_help_shows_defaults() {
    for sub in ["transport", "barycenter", "heatmap", "deform", "reg-eval", "ablate", "metrics", "generate"] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--threads"), "{sub}");
    }
    let text = String::from_utf8(run(&["barycenter", "--help"]).stdout).unwrap();
    for expected in ["[default: 100]", "[default: 0.000001]", "[default: exact]", "[default: 0.001]", "[default: first-sample]"] {
        assert!(text.contains(expected), "missing {expected}");
    }
    let text = String::from_utf8(run(&["reg-eval", "--help"]).stdout).unwrap();
    for expected in ["[default: com]", "[default: 1]", "[default: 2]", "[default: 4]", "[default: 0.02]", "[default: 15]"] {
        assert!(text.contains(expected), "missing {expected}");
    }
}

#[test]
fn barycenter_writes_output_manifest_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = run(&["generate", "--n", "12", "--seed", "3", "--out", path_str(&data)]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let bary = dir.path().join("bary.json");
    let landmarks = data.join("landmarks");
    let args = [
        "barycenter",
        "--landmarks-dir",
        path_str(&landmarks),
        "--out",
        path_str(&bary),
        "--subset-curve",
        "3,6",
        "--repeats",
        "3",
        "--seed",
        "9",
    ];
    assert!(run(&args).status.success());
    let first = fs::read(&bary).unwrap();
    let curve = fs::read_to_string(dir.path().join("bary.json.curve.csv")).unwrap();
    assert!(curve.starts_with("size,mean_w2,std_w2\n"));
    assert_eq!(curve.lines().count(), 3);

    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("bary.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "barycenter");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["input_digests"].as_object().unwrap().len(), 12);
    assert!(manifest.get("timestamp").is_none());

    // Same seed and inputs, any thread count: identical bytes.
    let mut single = args.to_vec();
    single.extend(["--threads", "1"]);
    assert!(run(&single).status.success());
    assert_eq!(fs::read(&bary).unwrap(), first);
    assert_eq!(fs::read_to_string(dir.path().join("bary.json.curve.csv")).unwrap(), curve);

    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn heatmap_png_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let lm = dir.path().join("face.json");
    write_set(&lm, &face_template_68());
    let (png, json) = (dir.path().join("hm.png"), dir.path().join("hm.json"));
    let out = run(&["heatmap", "--landmarks", path_str(&lm), "--res", "48", "--out", path_str(&png), "--json", path_str(&json)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = landmark_bary::Image::load(&png).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (48, 48, 1));
    let hm: Heatmap = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert!((hm.sum() - 1.0).abs() < 1e-9);
    assert!(dir.path().join("hm.png.manifest.json").exists());
}

#[test]
fn deform_is_reproducible_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let lm = dir.path().join("face.json");
    write_set(&lm, &face_template_68());
    let pixels: Vec<f64> = (0..32 * 32).map(|i| (i % 32) as f64 / 31.0).collect();
    let img_path = dir.path().join("in.png");
    landmark_bary::Image::new(32, 32, 1, pixels).unwrap().save(&img_path).unwrap();

    let prefix = |name: &str| dir.path().join(name);
    for name in ["a", "b"] {
        let out = run(&[
            "deform",
            "--image",
            path_str(&img_path),
            "--landmarks",
            path_str(&lm),
            "--seed",
            "17",
            "--out-prefix",
            path_str(&prefix(name)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for suffix in [".warp.json", ".png", ".landmarks.json"] {
        let a = fs::read(dir.path().join(format!("a{suffix}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix}");
    }
    let warp: landmark_bary::deform::WarpSpec =
        serde_json::from_slice(&fs::read(dir.path().join("a.warp.json")).unwrap()).unwrap();
    let moved: LandmarkSet = serde_json::from_slice(&fs::read(dir.path().join("a.landmarks.json")).unwrap()).unwrap();
    assert_eq!(moved, landmark_bary::deform::warp_points(&warp, &face_template_68()));
}

#[test]
fn reg_eval_reports_all_terms() {
    let dir = tempfile::tempdir().unwrap();
    let (x, b) = (dir.path().join("x.json"), dir.path().join("b.json"));
    let template = face_template_68();
    write_set(&b, &template);
    write_set(&x, &template.translated(&landmark_bary::Vec2::new(0.03, 0.0)));
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "reg-eval",
        "--landmarks",
        path_str(&x),
        "--barycenter",
        path_str(&b),
        "--warp-seed",
        "4",
        "--out",
        path_str(&report_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    let flat = &v["barycenter"];
    assert!((flat["term_translation"].as_f64().unwrap() - 0.0009).abs() < 1e-12);
    assert!(flat["term_affine"].as_f64().unwrap() < 1e-10);
    assert!(flat["term_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(flat["centering"], "com");
    assert!(v["geometric"]["cross_entropy"].as_f64().unwrap() > 0.0);
    assert_eq!(v["geometric"]["l1"].as_f64(), Some(0.0));
    assert!(v["warp"].is_object());

    let raw = run(&["reg-eval", "--landmarks", path_str(&x), "--barycenter", path_str(&b), "--affine-centering", "raw"]);
    let v: Value = serde_json::from_slice(&raw.stdout).unwrap();
    assert_eq!(v["barycenter"]["centering"], "raw");
    assert!(v["geometric"].is_null());
}

#[test]
fn ablate_and_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["generate", "--n", "3", "--seed", "1", "--out", path_str(&data)]).status.success());
    let bary = dir.path().join("bary.json");
    assert!(run(&["barycenter", "--landmarks-dir", path_str(&data.join("landmarks")), "--out", path_str(&bary)])
        .status
        .success());
    let config = dir.path().join("exp.json");
    fs::write(
        &config,
        r#"{"steps": 4, "eval_every": 2, "learning_rate": 0.01, "heatmap": {"resolution": [32, 32]}}"#,
    )
    .unwrap();
    let (traj, pred) = (dir.path().join("traj.csv"), dir.path().join("pred"));
    let out = run(&[
        "ablate",
        "--data",
        path_str(&data),
        "--barycenter",
        path_str(&bary),
        "--config",
        path_str(&config),
        "--out",
        path_str(&traj),
        "--pred-dir",
        path_str(&pred),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&traj).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "step,w1,r_flat,r_geo");
    assert_eq!(lines.len(), 4);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("traj.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["experiment"]["steps"], 4);
    assert_eq!(manifest["config"]["experiment"]["heatmap"]["sigma"], 0.02);

    let metrics = run(&["metrics", "--pred", path_str(&pred), "--truth", path_str(&data.join("landmarks"))]);
    assert!(metrics.status.success(), "{}", String::from_utf8_lossy(&metrics.stderr));
    let text = String::from_utf8(metrics.stdout).unwrap();
    let rows: Vec<_> = text.lines().collect();
    assert_eq!(rows[0], "name,iod,nw1");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("face_000.json,"));
    assert!(rows[4].starts_with("mean,"));

    // A truth file compared with itself scores zero.
    let truth = data.join("landmarks/face_000.json");
    let same = run(&["metrics", "--pred", path_str(&truth), "--truth", path_str(&truth)]);
    assert!(String::from_utf8(same.stdout).unwrap().contains("face_000.json,0.0,0.0"));
}

#[test]
fn pts_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_set();
    fs::write(dir.path().join("a.pts"), s.to_pts(256.0)).unwrap();
    let out = run(&["barycenter", "--landmarks-dir", path_str(dir.path()), "--side", "256"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bary: LandmarkSet = serde_json::from_slice(&out.stdout).unwrap();
    for (p, q) in bary.points().iter().zip(s.points()) {
        assert!((p - q).norm() < 1e-12);
    }
}
