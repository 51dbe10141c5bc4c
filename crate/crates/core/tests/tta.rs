mod common;

use common::*;
use graspkit::fixtures::*;
use graspkit::geometry::{synth_object, ObjectKind};
use graspkit::hand::HandState;
use graspkit::losses::{ab_tta_loss, LossWeights};
use graspkit::math::Vec3;
use graspkit::tta::*;
use graspkit::Exec;
use rand::Rng;

fn suite(count: usize, seed: u64) -> Vec<GraspFixture> {
    fixture_suite(
        &shadow(),
        count,
        seed,
        &FixtureParams::default(),
        Exec::Parallel,
    )
    .unwrap()
}

fn weights_of(cfg: &TtaConfig) -> LossWeights {
    LossWeights {
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
        alpha3: cfg.alpha3,
        tau: cfg.tau,
        pen_unit: cfg.pen_unit,
        ..LossWeights::default()
    }
}

#[test]
fn config_validation() {
    assert!(TtaConfig::default().validate().is_ok());
    assert!(TtaConfig::pen_vdis().validate().is_ok());
    for bad in [
        TtaConfig {
            beta_t: 1.5,
            ..Default::default()
        },
        TtaConfig {
            beta_t: -0.1,
            ..Default::default()
        },
        TtaConfig {
            steps: 0,
            ..Default::default()
        },
        TtaConfig {
            step_size: 0.0,
            ..Default::default()
        },
        TtaConfig {
            tau: f64::NAN,
            ..Default::default()
        },
        TtaConfig {
            alpha2: -1.0,
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let model = shadow();
    let f = &suite(1, 1)[0];
    let err = refine(
        &model,
        &f.perturbed,
        &f.cloud,
        &TtaConfig {
            steps: 0,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn far_away_pose_is_untouched() {
    let model = shadow();
    let cloud = synth_object(&ObjectKind::Sphere { radius: 0.04 }, 500, 2).unwrap();
    let mut pose = model.mid_pose();
    pose.translation = Vec3::new(0.25, 0.25, 0.25);
    let r = refine(&model, &pose, &cloud, &TtaConfig::default()).unwrap();
    assert_eq!(r.initial.total, 0.0);
    for (a, b) in r.pose.to_params().iter().zip(pose.to_params()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn zero_beta_freezes_translation_bitwise() {
    let model = shadow();
    for f in suite(6, 3) {
        let r = refine(&model, &f.perturbed, &f.cloud, &TtaConfig::default()).unwrap();
        assert_eq!(r.pose.translation, f.perturbed.translation);
        assert!(r.pose.within_limits(&model));
        let n: f64 = r.pose.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn best_so_far_never_worse_than_coarse() {
    let model = shadow();
    let mut rng = rng(90);
    for f in suite(6, 4) {
        for cfg in [
            TtaConfig::default(),
            TtaConfig::pen_vdis(),
            TtaConfig {
                step_size: rng.gen_range(1e-4..1e-1),
                beta_t: rng.gen(),
                ..Default::default()
            },
        ] {
            let r = refine(&model, &f.perturbed, &f.cloud, &cfg).unwrap();
            let w = weights_of(&cfg);
            let coarse = ab_tta_loss(&model, &f.perturbed, &f.perturbed, &f.cloud, &w).unwrap();
            if cfg.distance == DistanceTerm::Generalized {
                let refined = ab_tta_loss(&model, &r.pose, &f.perturbed, &f.cloud, &w).unwrap();
                assert!(refined <= coarse + 1e-12, "{refined} > {coarse}");
                assert!((refined - r.best.total).abs() < 1e-9);
            }
            assert!(r.best.total <= r.initial.total);
            assert_eq!(r.trace[0].total, r.initial.total);
            assert_eq!(r.trace[r.best_step].total, r.best.total);
        }
    }
}

#[test]
fn huge_steps_keep_best_so_far() {
    let model = shadow();
    let f = &suite(1, 5)[0];
    let cfg = TtaConfig {
        step_size: 5.0,
        beta_t: 1.0,
        steps: 100,
        ..Default::default()
    };
    let r = refine(&model, &f.perturbed, &f.cloud, &cfg).unwrap();
    assert!(r.best.total <= r.initial.total);
    assert!(r.pose.within_limits(&model));
    assert!(r.trace.len() <= cfg.steps + 1);
}

#[test]
fn converged_stop_respects_tolerance() {
    let model = shadow();
    let f = &suite(1, 6)[0];
    let cfg = TtaConfig {
        tolerance: 1e-3,
        ..Default::default()
    };
    let r = refine(&model, &f.perturbed, &f.cloud, &cfg).unwrap();
    assert_eq!(r.stop, StopReason::Converged);
    let n = r.trace.len();
    assert!((r.trace[n - 1].total - r.trace[n - 2].total).abs() < 1e-3);
}

#[test]
fn sphere_with_pushed_fingers() {
    let model = shadow();
    let object = ObjectKind::Sphere { radius: 0.04 };
    let f = make_fixture(
        &model,
        "sphere",
        object,
        &Vec3::new(0.0, -1.0, 0.2),
        0.3,
        0.005,
        11,
        &FixtureParams::default(),
    )
    .unwrap();
    let coarse = HandState::of_pose(&model, &f.perturbed);
    let r = refine(&model, &f.perturbed, &f.cloud, &TtaConfig::default()).unwrap();
    assert!(
        r.best.max_depth < r.initial.max_depth,
        "{} vs {}",
        r.best.max_depth,
        r.initial.max_depth
    );
    let refined = HandState::of_pose(&model, &r.pose);
    let tau = TtaConfig::default().tau;
    for a in model.keypoint_attachments() {
        if f.cloud.nearest(&coarse.point(&a)).1 < tau {
            assert!(f.cloud.nearest(&refined.point(&a)).1 < 2.0 * tau);
        }
    }
}

#[test]
fn contact_retention_on_suite() {
    let model = shadow();
    let tau = TtaConfig::default().tau;
    for f in suite(9, 8) {
        let coarse = HandState::of_pose(&model, &f.perturbed);
        let attach = model.keypoint_attachments();
        let anchored: Vec<_> = attach
            .iter()
            .filter(|a| f.cloud.nearest(&coarse.point(a)).1 < tau)
            .collect();
        if anchored.len() < 3 {
            continue;
        }
        let r = refine(&model, &f.perturbed, &f.cloud, &TtaConfig::default()).unwrap();
        let refined = HandState::of_pose(&model, &r.pose);
        let kept = attach
            .iter()
            .filter(|a| f.cloud.nearest(&refined.point(a)).1 < 2.0 * tau)
            .count();
        assert!(kept >= 3, "{}: {kept}", f.name);
    }
}

#[test]
fn refine_set_preserves_order_and_is_strategy_independent() {
    let model = shadow();
    let f = &suite(1, 9)[0];
    let mut rng = rng(91);
    let poses: Vec<_> = (0..5)
        .map(|_| {
            let mut p = f.perturbed.clone();
            for q in p.joints.iter_mut() {
                *q += rng.gen_range(-0.05..0.05);
            }
            p.clamp_to_limits(&model);
            p
        })
        .collect();
    let cfg = TtaConfig::default();
    let (seq, s1) = refine_set(&model, &poses, &f.cloud, &cfg, Exec::Sequential).unwrap();
    let (par, s2) = refine_set(&model, &poses, &f.cloud, &cfg, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(s1, s2);
    for (p, r) in poses.iter().zip(&seq) {
        assert_eq!(r, &refine(&model, p, &f.cloud, &cfg).unwrap());
    }
    assert_eq!(s1.count, 5);
}

#[test]
fn vanilla_mode_moves_translation() {
    let model = shadow();
    let f = &suite(1, 10)[0];
    let r = refine(&model, &f.perturbed, &f.cloud, &TtaConfig::pen_vdis()).unwrap();
    assert_ne!(r.pose.translation, f.perturbed.translation);
}

#[test]
fn fixtures_are_clean_and_pushed() {
    let model = shadow();
    let fx = suite(12, 12);
    let kinds: Vec<_> = fx
        .iter()
        .map(|f| f.name.split('-').next().unwrap().to_string())
        .collect();
    assert_eq!(&kinds[..3], ["sphere", "box", "cylinder"]);
    for f in &fx {
        let gt = HandState::of_pose(&model, &f.grasp);
        assert_eq!(
            graspkit::metrics::max_penetration(&model, &gt, &f.cloud),
            0.0,
            "{}",
            f.name
        );
        let p = HandState::of_pose(&model, &f.perturbed);
        let depth = graspkit::metrics::max_penetration(&model, &p, &f.cloud);
        assert!(
            depth >= f.push - 1e-6 && depth < f.push + 0.002,
            "{}: {depth} vs {}",
            f.name,
            f.push
        );
        assert_eq!(f.grasp.translation, f.perturbed.translation);
    }
    // deterministic per seed
    let again = suite(12, 12);
    for (a, b) in fx.iter().zip(&again) {
        assert_eq!(a.perturbed, b.perturbed);
        assert_eq!(a.cloud.points(), b.cloud.points());
    }
}
