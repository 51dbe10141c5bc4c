use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graspkit::hand::{load_hand_config, HandPose};
use graspkit::io::GraspSetFile;
use graspkit::math::Vec3;
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_graspkit");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hand() -> PathBuf {
    configs().join("shadow22.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Identical open-hand grasps 1 m away from the object.
fn far_grasps(dir: &Path, n: usize) -> PathBuf {
    let model = load_hand_config(hand()).unwrap();
    let pose = HandPose {
        rotation: [1.0, 0.0, 0.0, 0.0],
        translation: Vec3::new(1.0, 0.0, 0.0),
        joints: model
            .joints()
            .iter()
            .map(|j| 0.5 * (j.lower + j.upper))
            .collect(),
    };
    let path = dir.join("far.json");
    GraspSetFile::from_poses("shadow22", "sphere", &vec![pose; n])
        .save(&path)
        .unwrap();
    path
}

/// Grasps of a quick coarse toy run, used as refinement input.
fn closed_grasps(dir: &Path) -> PathBuf {
    let model = load_hand_config(hand()).unwrap();
    let task = graspkit::dsmt::toy_task(
        &model,
        graspkit::geometry::ObjectKind::Sphere { radius: 0.04 },
        512,
        4,
        3,
    )
    .unwrap();
    // push the hand 4 mm into the object so refinement has work to do
    let poses: Vec<HandPose> = task
        .ground_truths
        .iter()
        .map(|g| {
            let mut p = g.clone();
            let back = p.translation.normalize();
            p.translation -= back * 0.004;
            p
        })
        .collect();
    let path = dir.join("coarse.json");
    GraspSetFile::from_poses("shadow22", "sphere", &poses)
        .save(&path)
        .unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file below `dir`, relative path → bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn help_and_version_exit_zero() {
    for sub in [
        vec!["--help"],
        vec!["--version"],
        vec!["refine", "--help"],
        vec!["evaluate", "--help"],
        vec!["train-toy", "--help"],
        vec!["match", "--help"],
        vec!["report", "--help"],
    ] {
        let o = run(&sub);
        assert_eq!(code(&o), 0, "{sub:?}: {}", stderr(&o));
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec![],
        vec!["frobnicate"],
        vec!["evaluate"],
        vec!["refine", "--grasps", "x.json", "--mode", "sideways"],
        vec!["report"],
        vec!["--seed", "minus-one", "report", "a.json"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_inputs_exit_one_and_name_the_path() {
    let tmp = TempDir::new().unwrap();
    let grasps = far_grasps(tmp.path(), 2);
    let missing = tmp.path().join("missing-cloud.ply");
    let out = tmp.path().join("out");
    let o = run(&[
        "--out",
        s(&out),
        "evaluate",
        "--hand",
        s(&hand()),
        "--object",
        s(&missing),
        "--grasps",
        s(&grasps),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing-cloud.ply"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing is written on validation failure");

    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"seed": 1, "hand": "{}", "objects": [{{"source": "file", "path": "gone.xyz"}}]}}"#,
            s(&hand())
        ),
    )
    .unwrap();
    let o = run(&["--config", s(&cfg), "train-toy"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gone.xyz"), "{}", stderr(&o));

    let o = run(&[
        "evaluate",
        "--hand",
        s(&hand()),
        "--object",
        "sphere:0.04",
        "--grasps",
        s(&tmp.path().join("nope.json")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nope.json"));

    let o = run(&[
        "evaluate",
        "--hand",
        s(&hand()),
        "--object",
        "sphere:a",
        "--grasps",
        s(&grasps),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = TempDir::new().unwrap();
    let grasps = far_grasps(tmp.path(), 2);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = run(&[
        "--out",
        s(&blocker),
        "evaluate",
        "--hand",
        s(&hand()),
        "--object",
        "sphere:0.04",
        "--points",
        "256",
        "--grasps",
        s(&grasps),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn evaluate_hand_counted_fixture() {
    let tmp = TempDir::new().unwrap();
    let grasps = far_grasps(tmp.path(), 4);
    let out = tmp.path().join("eval");
    let o = run(&[
        "--out",
        s(&out),
        "evaluate",
        "--hand",
        s(&hand()),
        "--object",
        "sphere:0.04",
        "--points",
        "512",
        "--grasps",
        s(&grasps),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("metrics.json"));
    let set = &m["set"];
    // no contact and no penetration: every grasp is penetration-free,
    // none is graspable, and four identical grasps fill one bin of 16
    assert_eq!(set["count"], 4);
    assert_eq!(set["mean_q1"], 0.0);
    assert_eq!(set["eta_np"], 100.0);
    assert_eq!(set["eta_tb"], 0.0);
    assert_eq!(set["mean_pen_cm"], 0.0);
    for k in ["delta_t", "delta_r", "delta_q"] {
        assert_eq!(set[k], 6.25, "{k}");
    }
    assert!((set["similarity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(m["grasps"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn match_identical_sets_is_the_identity() {
    let tmp = TempDir::new().unwrap();
    let grasps = closed_grasps(tmp.path());
    let out = tmp.path().join("m");
    let o = run(&[
        "--out",
        s(&out),
        "match",
        "--hand",
        s(&hand()),
        "--pred",
        s(&grasps),
        "--gt",
        s(&grasps),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_json(&out.join("assignment.json"));
    let pairs: Vec<(u64, u64)> = a["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p[0].as_u64().unwrap(), p[1].as_u64().unwrap()))
        .collect();
    assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    assert!(a["total_cost"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn refine_report_and_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let grasps = closed_grasps(tmp.path());
    let hand_cfg = hand();
    let refine = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "--seed",
            "11",
            "--out",
            s(out),
            "refine",
            "--hand",
            s(&hand_cfg),
            "--object",
            "sphere:0.04",
            "--points",
            "1024",
            "--grasps",
            s(&grasps),
            "--steps",
            "40",
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    refine(&a, &[]);
    refine(&b, &[]);
    refine(&c, &["--sequential"]);
    let snap = snapshot(&a);
    assert_eq!(snap.len(), 4);
    assert_eq!(snap, snapshot(&b));
    assert_eq!(snap, snapshot(&c), "thread count must not change outputs");

    let summary = read_json(&a.join("refine_summary.json"));
    let s0 = &summary["summary"];
    assert!(s0["mean_final_depth"].as_f64().unwrap() < s0["mean_initial_depth"].as_f64().unwrap());
    let refined = GraspSetFile::load(a.join("refined.json")).unwrap();
    assert_eq!(refined.poses.len(), 4);

    let eval = |grasps: &Path, out: &Path| {
        let o = run(&[
            "--out",
            s(out),
            "evaluate",
            "--hand",
            s(&hand()),
            "--object",
            "sphere:0.04",
            "--points",
            "1024",
            "--grasps",
            s(grasps),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let before = tmp.path().join("before");
    let after = tmp.path().join("after");
    eval(&grasps, &before);
    eval(&a.join("refined.json"), &after);
    let rep = tmp.path().join("rep");
    let o = run(&[
        "--out",
        s(&rep),
        "report",
        &format!("coarse={}", s(&before.join("metrics.json"))),
        s(&after.join("metrics.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let md = fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.starts_with("| Method | Q1"));
    assert!(md.contains("| coarse |"));
    assert!(md.contains("| after |"));
    assert_eq!(
        fs::read_to_string(rep.join("report.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn train_toy_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("toy.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
  "seed": 3,
  "hand": "{}",
  "objects": [{{"source": "synthetic", "shape": {{"kind": "sphere", "radius": 0.04}}, "points": 256}}],
  "schedule": {{"t0": 2, "t1": 1, "t2": 1, "steps_per_epoch": 3}},
  "toy": {{"queries": 4, "ground_truths": 3}},
  "output": "toy-out"
}}"#,
            s(&hand())
        ),
    )
    .unwrap();
    let first = run(&["--config", s(&cfg), "train-toy", "--baseline", "500"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let out = tmp.path().join("toy-out");
    let snap = snapshot(&out);
    let names: Vec<String> = snap
        .iter()
        .map(|(p, _)| p.to_string_lossy().replace('\\', "/"))
        .collect();
    for expected in [
        "manifest.json",
        "train_summary.json",
        "sphere-0/ground_truth.json",
        "sphere-0/dsmt/trace.csv",
        "sphere-0/dsmt/table.json",
        "sphere-0/dsmt/static_matching.json",
        "sphere-0/dynamic-l500/trace.csv",
        "sphere-0/dynamic-l500/table.json",
    ] {
        assert!(
            names.iter().any(|n| n == expected),
            "{expected} in {names:?}"
        );
    }
    let trace = fs::read_to_string(out.join("sphere-0/dsmt/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5);

    fs::remove_dir_all(&out).unwrap();
    let second = run(&["--config", s(&cfg), "train-toy", "--baseline", "500"]);
    assert_eq!(code(&second), 0);
    assert_eq!(snap, snapshot(&out));
    assert_eq!(first.stdout, second.stdout);

    // a different seed changes the results
    let other = tmp.path().join("other");
    let o = run(&[
        "--config",
        s(&cfg),
        "--seed",
        "4",
        "--out",
        s(&other),
        "train-toy",
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(out.join("sphere-0/dsmt/table.json")).unwrap(),
        fs::read(other.join("sphere-0/dsmt/table.json")).unwrap()
    );
}
