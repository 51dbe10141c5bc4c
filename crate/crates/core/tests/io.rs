mod common;

use std::path::Path;

use common::*;
use graspkit::dsmt::TrainMode;
use graspkit::geometry::ObjectKind;
use graspkit::io::*;
use graspkit::Error;
use proptest::prelude::*;

fn random_set(seed: u64, n: usize) -> (graspkit::HandModel, Vec<graspkit::HandPose>) {
    let model = shadow();
    let mut r = rng(seed);
    let poses = (0..n).map(|_| random_pose(&model, &mut r, 0.2)).collect();
    (model, poses)
}

#[test]
fn grasp_set_round_trip_is_exact() {
    let (model, poses) = random_set(1, 8);
    let file = GraspSetFile::from_poses("shadow22", "sphere", &poses).with_stage("coarse");
    let text = file.to_json();
    let back = GraspSetFile::parse(&text, Path::new("mem")).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.to_poses(&model).unwrap(), poses);
    assert!(text.ends_with('\n'));
    assert!(!text.contains("angle_unit"));
}

#[test]
fn quaternion_tolerances() {
    let (model, poses) = random_set(2, 1);
    let mut file = GraspSetFile::from_poses("h", "o", &poses);
    // within 1e-9: kept verbatim
    file.poses[0].r = file.poses[0].r.map(|c| c * (1.0 + 5e-10));
    let kept = file.to_poses(&model).unwrap();
    assert_eq!(kept[0].rotation, file.poses[0].r);
    // between 1e-9 and 1e-6: renormalized
    file.poses[0].r = poses[0].rotation.map(|c| c * (1.0 + 5e-7));
    let fixed = file.to_poses(&model).unwrap();
    let n: f64 = fixed[0].rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-15);
    // beyond 1e-6: rejected
    file.poses[0].r = poses[0].rotation.map(|c| c * 1.001);
    let err = file.to_poses(&model).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("poses[0].r"), "{err}");
}

#[test]
fn joint_count_limits_and_units() {
    let (model, poses) = random_set(3, 2);
    let mut file = GraspSetFile::from_poses("h", "o", &poses);
    file.poses[1].q.pop();
    assert!(file
        .to_poses(&model)
        .unwrap_err()
        .to_string()
        .contains("poses[1].q"));

    let mut file = GraspSetFile::from_poses("h", "o", &poses);
    let upper = model.joints()[0].upper;
    file.poses[0].q[0] = upper + 0.1;
    assert!(file.to_poses(&model).is_err());

    let mut deg = GraspSetFile::from_poses("h", "o", &poses);
    deg.angle_unit = AngleUnit::Degrees;
    for p in &mut deg.poses {
        for q in &mut p.q {
            *q = q.to_degrees();
        }
    }
    let text = deg.to_json();
    assert!(text.contains("\"angle_unit\": \"degrees\""));
    let loaded = GraspSetFile::parse(&text, Path::new("mem"))
        .unwrap()
        .to_poses(&model)
        .unwrap();
    for (a, b) in loaded.iter().zip(&poses) {
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn schema_and_syntax_errors_are_validation_errors() {
    let bad_version = r#"{"schema_version": 9, "hand": "h", "object": "o", "poses": []}"#;
    assert!(GraspSetFile::parse(bad_version, Path::new("x"))
        .unwrap_err()
        .is_validation());
    let unknown = r#"{"schema_version": 1, "hand": "h", "object": "o", "poses": [], "extra": 1}"#;
    assert!(GraspSetFile::parse(unknown, Path::new("x")).is_err());
    let missing = GraspSetFile::load("/nonexistent/set.json").unwrap_err();
    assert!(missing.is_validation());
    assert!(missing.to_string().contains("/nonexistent/set.json"));
}

#[test]
fn atomic_writes_and_csv() {
    let dir = std::env::temp_dir().join(format!("graspkit-io-{}", std::process::id()));
    let path = dir.join("nested/out.txt");
    write_atomic(&path, b"first").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());

    #[derive(serde::Serialize)]
    struct Row {
        a: usize,
        b: f64,
    }
    let text = csv_text(&[Row { a: 1, b: 0.5 }, Row { a: 2, b: -1e-3 }]).unwrap();
    assert_eq!(text, "a,b\n1,0.5\n2,-0.001\n");
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_config_parsing_and_validation() {
    let base = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    let text = r#"{
        "seed": 5,
        "hand": "shadow22.json",
        "objects": [
            {"source": "synthetic", "shape": {"kind": "sphere", "radius": 0.04}, "points": 256},
            {"source": "file", "name": "mug", "path": "missing.ply", "scale": 0.001}
        ],
        "toy": {"modes": [{"mode": "dsmt"}, {"mode": "dynamic", "lambda6": 500.0}]}
    }"#;
    let cfg = RunConfig::parse(text, Path::new("cfg.json"), base).unwrap();
    assert_eq!(cfg.seed, 5);
    assert!(cfg.hand.ends_with("configs/shadow22.json"));
    assert_eq!(cfg.objects[0].name(0), "sphere-0");
    assert_eq!(cfg.objects[1].name(1), "mug");
    assert_eq!(cfg.toy.modes[1], TrainMode::Dynamic { lambda6: 500.0 });
    assert_eq!(cfg.dsmt_config(TrainMode::Dsmt).schedule.regress, cfg.loss);
    // the missing cloud is reported with its path
    let err = cfg.validate().unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("missing.ply"), "{err}");

    let mut ok = cfg.clone();
    ok.objects.truncate(1);
    ok.validate().unwrap();
    assert!(matches!(
        ok.objects[0],
        ObjectSpec::Synthetic {
            shape: ObjectKind::Sphere { .. },
            points: 256,
            ..
        }
    ));
    assert_eq!(ok.objects[0].load(ok.seed).unwrap().len(), 256);
    assert_eq!(ok.digest(), ok.clone().digest());

    // the seed is mandatory
    let no_seed = r#"{"hand": "shadow22.json"}"#;
    assert!(matches!(
        RunConfig::parse(no_seed, Path::new("cfg.json"), base),
        Err(Error::Json { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_within_tolerance(seed in any::<u64>(), n in 1usize..6) {
        let (model, poses) = random_set(seed, n);
        let text = GraspSetFile::from_poses("h", "o", &poses).to_json();
        let back = GraspSetFile::parse(&text, Path::new("mem")).unwrap().to_poses(&model).unwrap();
        for (a, b) in back.iter().zip(&poses) {
            for (x, y) in a.to_params().iter().zip(b.to_params()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
