use std::f64::consts::{PI, TAU};

use photoforge::elastic::ForceTriplet;
use photoforge::metrics::{
    angle_mae, count_accuracy, evaluate, magnitude_mape, match_forces, paired, LabeledForces, MeanForceBins,
};
use proptest::prelude::*;

/// Minimum assignment cost by dynamic programming over subsets, independent
/// of the permutation enumeration under test.
fn subset_dp(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len();
    let mut best = vec![f64::INFINITY; 1 << n];
    best[0] = 0.0;
    for mask in 0usize..(1 << n) {
        let i = mask.count_ones() as usize;
        if i == n || best[mask].is_infinite() {
            continue;
        }
        for j in (0..n).filter(|j| mask & (1 << j) == 0) {
            let d = (pred[i] - truth[j]).rem_euclid(TAU);
            let c = best[mask] + d.min(TAU - d);
            let next = &mut best[mask | (1 << j)];
            *next = next.min(c);
        }
    }
    best[(1 << n) - 1]
}

fn triplets(v: &[(f64, f64, f64)]) -> Vec<ForceTriplet> {
    v.iter().map(|&(f, a, t)| ForceTriplet::from([f, a, t])).collect()
}

type Triples = Vec<(f64, f64, f64)>;

fn arb_list(n: usize) -> impl Strategy<Value = Triples> {
    prop::collection::vec((0.01..0.9f64, 0.0..TAU, -0.5..0.5f64), n)
}

fn arb_pair() -> impl Strategy<Value = (Triples, Triples)> {
    (2usize..=6).prop_flat_map(|n| (arb_list(n), arb_list(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matching_cost_is_the_assignment_minimum((pred, truth) in arb_pair()) {
        let m = match_forces(&triplets(&pred), &triplets(&truth)).unwrap();
        let a: Vec<f64> = pred.iter().map(|p| p.1).collect();
        let b: Vec<f64> = truth.iter().map(|t| t.1).collect();
        prop_assert!((m.cost - subset_dp(&a, &b)).abs() < 1e-9);
        // identity pairing is one of the candidates
        let identity: f64 = a.iter().zip(&b).map(|(x, y)| { let d = (x - y).rem_euclid(TAU); d.min(TAU - d) }).sum();
        prop_assert!(m.cost <= identity + 1e-12);
        let mut used: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        used.sort();
        prop_assert_eq!(used, (0..a.len()).collect::<Vec<_>>());
    }

    #[test]
    fn metrics_ignore_prediction_order((pred, truth) in arb_pair(), shift in 0usize..6) {
        let p = triplets(&pred);
        let t = triplets(&truth);
        let mut q = p.clone();
        let k = shift % q.len();
        q.rotate_left(k);
        let a = paired(&p, &t).unwrap();
        let b = paired(&q, &t).unwrap();
        prop_assert!((angle_mae(&a).unwrap() - angle_mae(&b).unwrap()).abs() < 1e-9);
        prop_assert!((match_forces(&p, &t).unwrap().cost - match_forces(&q, &t).unwrap().cost).abs() < 1e-9);
    }

    #[test]
    fn full_turns_do_not_change_angle_error((pred, truth) in arb_pair(), turns in -3i32..=3) {
        let p = triplets(&pred);
        let t = triplets(&truth);
        let q: Vec<ForceTriplet> = p
            .iter()
            .map(|f| ForceTriplet { impact_angle: f.impact_angle + turns as f64 * TAU, ..*f })
            .collect();
        let a = angle_mae(&paired(&p, &t).unwrap()).unwrap();
        let b = angle_mae(&paired(&q, &t).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-7);
        prop_assert!((0.0..=180.0).contains(&a));
    }
}

#[test]
fn wraparound_pair_is_two_degrees() {
    let p = triplets(&[(0.1, 359f64.to_radians(), 0.0)]);
    let t = triplets(&[(0.1, 1f64.to_radians(), 0.0)]);
    assert!((angle_mae(&paired(&p, &t).unwrap()).unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn mape_is_a_percentage_of_the_truth() {
    let p = triplets(&[(0.11, 0.0, 0.0), (0.18, PI, 0.0)]);
    let t = triplets(&[(0.1, 0.0, 0.0), (0.2, PI, 0.0)]);
    let mape = magnitude_mape(&paired(&p, &t).unwrap()).unwrap();
    assert!((mape - 10.0).abs() < 1e-9);
    assert!(match_forces(&p[..1], &t).is_err());
}

#[test]
fn count_accuracy_fills_the_confusion_matrix() {
    let (acc, confusion) = count_accuracy(&[2, 3, 3, 5], &[2, 3, 4, 5]).unwrap();
    assert_eq!(acc, 0.75);
    assert_eq!(confusion[4][3], 1);
    assert_eq!(confusion[3][3], 1);
    assert!(count_accuracy(&[2], &[]).is_err());
}

#[test]
fn evaluate_joins_by_id_and_skips_miscounted_samples() {
    let label = |id: &str, v: &[(f64, f64, f64)]| LabeledForces { id: id.into(), forces: triplets(v) };
    let truth = vec![
        label("a", &[(0.1, 0.0, 0.0), (0.1, PI, 0.0)]),
        label("b", &[(0.2, 0.0, 0.0), (0.2, 2.0, 0.0), (0.2, 4.0, 0.0)]),
    ];
    let pred = vec![
        label("b", &[(0.2, 0.0, 0.0), (0.2, PI, 0.0)]),
        label("a", &[(0.1, PI + 0.01, 0.0), (0.1, 0.01, 0.0)]),
    ];
    let report = evaluate(&pred, &truth, &MeanForceBins::default()).unwrap();
    assert_eq!(report.samples, 2);
    assert_eq!(report.count_accuracy, 0.5);
    let m2 = &report.per_m[0];
    assert_eq!((m2.m, m2.matched), (2, 1));
    assert!((m2.mae_impact_deg.unwrap() - 0.01f64.to_degrees()).abs() < 1e-9);
    let m3 = &report.per_m[1];
    assert_eq!((m3.m, m3.matched), (3, 0));
    assert_eq!(m3.mae_impact_deg, None);
    assert!(evaluate(&pred[..1], &truth, &MeanForceBins::default()).is_err());
}
