mod common;

use approx::assert_relative_eq;
use common::*;
use graspkit::losses::param_components;
use graspkit::matching::*;
use graspkit::math::quat_normalize;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_matrix(rng: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..10.0))
}

#[test]
fn matches_exhaustive_minimum() {
    let mut rng = rng(70);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=7);
        let m = rng.gen_range(1..=7);
        let c = random_matrix(&mut rng, n, m);
        let a = hungarian(&c).unwrap();
        assert_relative_eq!(a.total_cost, brute_force_min_cost(&c), max_relative = 1e-12);
        assert_eq!(a.pairs.len(), n.min(m));
    }
}

#[test]
fn integer_matrices_with_ties() {
    let mut rng = rng(71);
    for _ in 0..300 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        let c = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0..3) as f64);
        let a = hungarian(&c).unwrap();
        assert_eq!(a.total_cost, brute_force_min_cost(&c));
        assert_eq!(hungarian(&c).unwrap(), a);
    }
}

#[test]
fn cost_matrix_examples() {
    let model = shadow();
    let mut rng = rng(72);
    let preds: Vec<_> = (0..4).map(|_| random_pose(&model, &mut rng, 0.2)).collect();
    let w = CostWeights::default();
    let c = cost_matrix(&model, &preds, &preds, &w).unwrap();
    for i in 0..4 {
        assert_eq!(c[(i, i)], 0.0);
    }
    let gts: Vec<_> = (0..3).map(|_| random_pose(&model, &mut rng, 0.2)).collect();
    let c = cost_matrix(&model, &preds, &gts, &w).unwrap();
    assert_eq!(c.shape(), (4, 3));
    for i in 0..4 {
        for j in 0..3 {
            let (t, q, r) = param_components(&model, &preds[i], &gts[j], 0.1);
            assert_relative_eq!(c[(i, j)], 2.0 * t + q + 2.0 * r, epsilon = 1e-15);
        }
    }
    let a = model.mid_pose();
    let mut b = a.clone();
    b.rotation = [0.0, 1.0, 0.0, 0.0];
    let c = cost_matrix(&model, &[a], &[b], &w).unwrap();
    assert_relative_eq!(c[(0, 0)], 2.0, epsilon = 1e-15);
    assert!(cost_matrix(&model, &[], &preds, &w).is_err());
}

#[test]
fn instability_matches_explicit_loop() {
    let mut rng = rng(73);
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=8);
        let a = hungarian(&random_matrix(&mut rng, n, m)).unwrap();
        let b = hungarian(&random_matrix(&mut rng, n, m)).unwrap();
        let (pa, pb) = (a.prediction_of(), b.prediction_of());
        let explicit = (0..m).filter(|&j| pa[j] != pb[j]).count() as f64 / m as f64;
        assert_eq!(matching_instability(&a, &b).unwrap(), explicit);
        assert_eq!(matching_instability(&b, &a).unwrap(), explicit);
    }
}

#[test]
fn cost_matrix_is_rotation_sign_invariant() {
    let model = pinch();
    let mut rng = rng(74);
    let g = random_pose(&model, &mut rng, 0.1);
    let mut flipped = g.clone();
    flipped.rotation = quat_normalize(&g.rotation.map(|c| -c)).unwrap();
    let c = cost_matrix(&model, &[flipped], &[g], &CostWeights::default()).unwrap();
    assert_eq!(c[(0, 0)], 0.0);
}

proptest! {
    #[test]
    fn optimal_against_random_assignments(seed in 0u64..10_000, n in 1usize..9, m in 1usize..9) {
        let mut rng = rng(seed);
        let c = random_matrix(&mut rng, n, m);
        let a = hungarian(&c).unwrap();
        // pairs injective, cost consistent
        let mut seen_p = vec![false; n];
        let mut seen_g = vec![false; m];
        let mut sum = 0.0;
        for &(p, g) in &a.pairs {
            prop_assert!(!seen_p[p] && !seen_g[g]);
            seen_p[p] = true;
            seen_g[g] = true;
            sum += c[(p, g)];
        }
        prop_assert_eq!(sum, a.total_cost);
        for _ in 0..20 {
            let mut cols: Vec<usize> = (0..m).collect();
            cols.shuffle(&mut rng);
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let manual: f64 = rows.iter().zip(&cols).map(|(&i, &j)| c[(i, j)]).sum();
            prop_assert!(a.total_cost <= manual + 1e-12);
        }
    }

    #[test]
    fn scaling_preserves_optimality(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = rng(seed);
        let n = rng.gen_range(1..7);
        let m = rng.gen_range(1..7);
        let c = random_matrix(&mut rng, n, m);
        let a = hungarian(&c).unwrap();
        let scaled = &c * scale;
        let under_scaled: f64 = a.pairs.iter().map(|&(i, j)| scaled[(i, j)]).sum();
        let b = hungarian(&scaled).unwrap();
        prop_assert!((under_scaled - b.total_cost).abs() <= 1e-9 * (1.0 + b.total_cost));
        prop_assert!((under_scaled - scale * a.total_cost).abs() <= 1e-9 * (1.0 + under_scaled));
    }
}
