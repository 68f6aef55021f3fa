use lipt_core::trajectory::{
    aggregate_scores, bradley_terry_strengths, decay_weights, fit_calibration, win_matrix, BceLoss, CalibrationOptions,
    GoldLabel, Mapping, MseLoss, PairwiseOutcome, PatientOutcomes,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn full_patient(id: &str, ts: &[f64], f: impl Fn(usize, usize) -> f64) -> PatientOutcomes {
    let mut outcomes = Vec::new();
    for j in 1..ts.len() {
        for i in 0..j {
            outcomes.push(PairwiseOutcome::new(id, i, j, f(i, j)).unwrap());
        }
    }
    PatientOutcomes { patient_id: id.into(), timestamps: ts.to_vec(), outcomes }
}

#[test]
fn two_item_ratio_is_exact() {
    let r = bradley_terry_strengths(&[vec![0.0, 3.0], vec![1.0, 0.0]]).unwrap();
    assert!(r.converged);
    assert!((r.strengths[0] / r.strengths[1] - 3.0).abs() < 1e-9);
    assert!(r.strengths.iter().map(|v| v.ln()).sum::<f64>().abs() < 1e-9);
}

#[test]
fn symmetric_counts_give_equal_strengths() {
    let w: Vec<Vec<f64>> = (0..4).map(|a| (0..4).map(|b| if a == b { 0.0 } else { 5.0 }).collect()).collect();
    let r = bradley_terry_strengths(&w).unwrap();
    assert!(r.strengths.iter().all(|s| (s - 1.0).abs() < 1e-12));
}

#[test]
fn five_item_recovery() {
    let truth = [0.3f64, 0.8, 1.5, 2.6, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut w = vec![vec![0.0; 5]; 5];
    for _ in 0..500 {
        let a = rng.random_range(0..5);
        let b = (a + rng.random_range(1..5)) % 5;
        if rng.random_bool(truth[a] / (truth[a] + truth[b])) {
            w[a][b] += 1.0;
        } else {
            w[b][a] += 1.0;
        }
    }
    let r = bradley_terry_strengths(&w).unwrap();
    assert!(r.converged);
    let rho = spearman(&r.strengths, &truth);
    assert!(rho >= 0.95, "spearman {rho}");
}

#[test]
fn scaling_strengths_keeps_win_probabilities() {
    let w = vec![vec![0.0, 4.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 1.0, 0.0]];
    let r = bradley_terry_strengths(&w).unwrap();
    let mut scaled = r.clone();
    scaled.strengths.iter_mut().for_each(|s| *s *= 7.5);
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                assert!((r.win_probability(a, b) - scaled.win_probability(a, b)).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn sharp_decay_favours_nearest_predecessor() {
    let w = decay_weights(30.0, &[0.0, 10.0, 29.0], 10.0);
    let direct: Vec<f64> = [30.0, 20.0, 1.0].iter().map(|d: &f64| (-10.0 * d).exp()).collect();
    let z: f64 = direct.iter().sum();
    assert!(w[2] > 0.999);
    for k in 0..3 {
        assert!((w[k] - direct[k] / z).abs() < 1e-15);
    }
}

#[test]
fn calibration_descends_and_flips_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut patients = Vec::new();
    let mut gold = Vec::new();
    for n in 0..30 {
        let ts: Vec<f64> = (0..4).map(|k| k as f64 * 3.0 + rng.random_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
        let id = format!("p{n}");
        let p = full_patient(&id, &ts, |_, j| ys[j]);
        for j in 1..4 {
            gold.push(GoldLabel { patient_id: id.clone(), visit: j, value: if ys[j] >= 0.5 { 0.0 } else { 1.0 } });
        }
        patients.push(p);
    }
    for loss in [&BceLoss as &dyn lipt_core::trajectory::CalibrationLoss, &MseLoss] {
        let fit = fit_calibration(&patients, &gold, loss, &CalibrationOptions::default()).unwrap();
        assert!(fit.phi.phi1 < 0.0, "{} phi1 {}", loss.name(), fit.phi.phi1);
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(!fit.saturated);
    }
}

#[test]
fn self_consistent_gold_is_near_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut patients = Vec::new();
    let mut gold = Vec::new();
    for n in 0..20 {
        let ts = [0.0, 1.0, 2.0];
        let ys: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..0.9)).collect();
        let id = format!("p{n}");
        let p = full_patient(&id, &ts, |_, j| ys[j]);
        let est = aggregate_scores(&p, 0.0, Mapping::default()).unwrap();
        for j in 1..3 {
            gold.push(GoldLabel { patient_id: id.clone(), visit: j, value: est.scores[j].unwrap() });
        }
        patients.push(p);
    }
    let fit = fit_calibration(&patients, &gold, &MseLoss, &CalibrationOptions::default()).unwrap();
    assert!(fit.loss < 1e-10, "loss {}", fit.loss);
    assert!((fit.phi.phi1 - 1.0).abs() < 1e-2 && fit.phi.phi0.abs() < 1e-2);
}

#[test]
fn equal_gold_labels_are_flagged() {
    let p = full_patient("a", &[0.0, 1.0, 2.0], |_, _| 0.7);
    let gold: Vec<GoldLabel> = (1..3).map(|j| GoldLabel { patient_id: "a".into(), visit: j, value: 1.0 }).collect();
    let fit = fit_calibration(&[p], &gold, &BceLoss, &CalibrationOptions::default()).unwrap();
    assert!(fit.saturated);
}

#[test]
fn visit_strengths_from_outcomes() {
    let p = full_patient("a", &[0.0, 1.0, 2.0, 3.0], |i, j| if j == 3 && i < 3 { 0.9 } else if i == 0 { 0.2 } else { 0.6 });
    let w = win_matrix(&p.outcomes, 4, true).unwrap();
    let r = bradley_terry_strengths(&w).unwrap();
    let top = (0..4).max_by(|&a, &b| r.strengths[a].total_cmp(&r.strengths[b])).unwrap();
    assert_eq!(top, 3);
}

proptest! {
    #[test]
    fn weights_sum_to_one(seed in any::<u64>(), theta in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..8);
        let times: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..100.0)).collect();
        let w = decay_weights(100.0, &times, theta);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn timestamp_shift_invariance(seed in any::<u64>(), theta in 0.0f64..3.0, c in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..20.0)).collect();
        ts.sort_by(f64::total_cmp);
        let ys: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = full_patient("a", &ts, |i, j| ys[i * 5 + j]);
        let mut q = p.clone();
        q.timestamps.iter_mut().for_each(|t| *t += c);
        let phi = Mapping { phi1: 1.7, phi0: -0.4 };
        let a = aggregate_scores(&p, theta, phi).unwrap();
        let b = aggregate_scores(&q, theta, phi).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
