use lipt_autodiff::{grad_check, BoundParams, GradCheckConfig, Graph, Tensor};
use lipt_core::features::{FrameFeatureMap, N_LLD};
use lipt_core::pse::{
    decode_checkpoint, encode_checkpoint, evaluate_pairs, fit_pse, pretrain_reconstruction, sample_latent,
    train_pairwise_classifier, BiasMode, LatentState, MergeMode, PatientTimeline, PseConfig, PseModel, VisitRecord,
    VisitState,
};
use lipt_core::CoreError;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HASH: &str = "test-hash";

fn tiny_config() -> PseConfig {
    PseConfig {
        latent_dim: 3,
        conv_channels: 4,
        kernel: 3,
        hidden: 5,
        frame_len: 8,
        batch_size: 4,
        lr: 1e-2,
        pretrain_epochs: 2,
        epochs: 2,
        ..PseConfig::default()
    }
}

fn random_map(rng: &mut ChaCha8Rng, frames: usize, shift: f64) -> FrameFeatureMap {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..N_LLD).map(|c| rng.random_range(-1.0..1.0) + if c < 4 { shift } else { 0.0 }).collect())
        .collect();
    FrameFeatureMap::from_rows(&rows, HASH, "synthetic").unwrap()
}

fn visit(pid: &str, t: f64, map: FrameFeatureMap, state: VisitState, global: Vec<f64>) -> VisitRecord {
    VisitRecord {
        patient_id: pid.into(),
        timestamp: t,
        frame_map: map,
        global: Some(global),
        state: Some(state),
    }
}

/// Admission (shifted up) then discharge, with globals carrying the shift.
fn cohort(seed: u64, n: usize, frames: usize) -> Vec<PatientTimeline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let pid = format!("p{k}");
            let base: f64 = rng.random_range(-0.5..0.5);
            let adm = random_map(&mut rng, frames, 2.0 + base);
            let dis = random_map(&mut rng, frames, base);
            let g_adm = vec![1.0 + base + 0.1 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g_dis = vec![base + 0.1 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            PatientTimeline::new(
                pid.clone(),
                vec![
                    visit(&pid, 0.0, adm, VisitState::Decompensated, g_adm),
                    visit(&pid, 7.0, dis, VisitState::PostTreatment, g_dis),
                ],
            )
            .unwrap()
        })
        .collect()
}

fn params_bits(m: &PseModel) -> Vec<u64> {
    m.params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn untrained_zero_weights_are_neutral() {
    let tls = cohort(1, 3, 8);
    let mut m = PseModel::new(tiny_config(), HASH, vec![]).unwrap();
    m.fit_normalizers(&tls).unwrap();
    assert_eq!(m.compare_visits(&tls[0], 0, 1).unwrap(), 0.5);
    assert!(m.compare_visits(&tls[0], 1, 0).is_err());
}

#[test]
fn zero_bias_swap_antisymmetry() {
    let tls = cohort(2, 6, 8);
    let cfg = PseConfig { bias: BiasMode::Zero, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
    fit_pse(&mut m, &tls).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    m.classifier_weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-3.0..3.0));
    for _ in 0..200 {
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = m.compare_vectors(&a, &b).unwrap() + m.compare_vectors(&b, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }
    for tl in &tls {
        let s = m.compare_visits(tl, 0, 1).unwrap();
        let z = m.encode_timeline(tl).unwrap();
        let r = m.compare_vectors(&z[1].mu, &z[0].mu).unwrap();
        assert!((s + r - 1.0).abs() < 1e-9);
    }
}

#[test]
fn visit_order_is_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let visits: Vec<VisitRecord> = (0..4)
        .map(|k| visit("a", k as f64 * 3.0, random_map(&mut rng, 10, 0.0), VisitState::Stable, vec![0.0, 0.0]))
        .collect();
    let sorted = PatientTimeline::new("a", visits.clone()).unwrap();
    let mut shuffled = visits.clone();
    shuffled.reverse();
    shuffled.swap(0, 2);
    let perm = PatientTimeline::new("a", shuffled).unwrap();
    let mut m = PseModel::new(tiny_config(), HASH, vec![]).unwrap();
    m.fit_normalizers(std::slice::from_ref(&sorted)).unwrap();
    assert_eq!(m.encode_timeline(&sorted).unwrap(), m.encode_timeline(&perm).unwrap());

    let mut tied = visits;
    tied[1].timestamp = tied[0].timestamp;
    assert!(PatientTimeline::new("a", tied).is_err());
}

#[test]
fn single_visit_starts_from_zero_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tl = PatientTimeline::new("a", vec![visit("a", 0.0, random_map(&mut rng, 8, 0.0), VisitState::Stable, vec![])]).unwrap();
    let mut m = PseModel::new(tiny_config(), HASH, vec![]).unwrap();
    m.fit_normalizers(std::slice::from_ref(&tl)).unwrap();
    let z = m.encode_timeline(&tl).unwrap();
    assert_eq!(z.len(), 1);
    assert!(z[0].sigma.iter().all(|s| *s > 0.0));
}

#[test]
fn catalog_mismatch_is_refused() {
    let tls = cohort(6, 2, 8);
    let mut m = PseModel::new(tiny_config(), "other", vec![]).unwrap();
    m.fit_normalizers(&tls).unwrap();
    assert!(matches!(m.prepare(&tls[0]), Err(CoreError::CatalogMismatch { .. })));
}

#[test]
fn training_is_bitwise_deterministic() {
    let tls = cohort(7, 6, 8);
    let run = || {
        let mut m = PseModel::new(tiny_config(), HASH, vec![]).unwrap();
        let r = fit_pse(&mut m, &tls).unwrap();
        (params_bits(&m), r)
    };
    assert_eq!(run(), run());
}

#[test]
fn overfits_one_patient() {
    let tls = cohort(8, 1, 16);
    let cfg = PseConfig {
        latent_dim: 8,
        conv_channels: 8,
        hidden: 8,
        frame_len: 16,
        pretrain_epochs: 20,
        epochs: 500,
        lr: 1e-2,
        ..PseConfig::default()
    };
    let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
    let r = fit_pse(&mut m, &tls).unwrap();
    let best = r.classifier.iter().map(|e| e.loss / 2.0).fold(f64::INFINITY, f64::min);
    assert!(best < 0.1, "bce {best}");
}

#[test]
fn reconstruction_overfits_constant_map() {
    let rows = vec![vec![0.5; N_LLD]; 8];
    let mut rows2 = rows.clone();
    rows2[0][0] = 1.5;
    let map = FrameFeatureMap::from_rows(&rows2, HASH, "c").unwrap();
    let tl = PatientTimeline::new("a", vec![visit("a", 0.0, map, VisitState::Stable, vec![])]).unwrap();
    let cfg = PseConfig { k2: 0.0, pretrain_epochs: 300, lr: 1e-2, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
    m.fit_normalizers(std::slice::from_ref(&tl)).unwrap();
    let data = vec![m.prepare(&tl).unwrap()];
    let curve = pretrain_reconstruction(&mut m, &data).unwrap();
    let last = curve.last().unwrap().mse;
    assert!(last < 1e-3, "mse {last}");
}

#[test]
fn kl_only_pulls_latents_to_prior() {
    let tls = cohort(10, 4, 8);
    let cfg = PseConfig { k1: 0.0, k2: 1.0, pretrain_epochs: 400, lr: 1e-2, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
    m.fit_normalizers(&tls).unwrap();
    let data: Vec<_> = tls.iter().map(|t| m.prepare(t).unwrap()).collect();
    let curve = pretrain_reconstruction(&mut m, &data).unwrap();
    assert!(curve.last().unwrap().kl < 0.01, "kl {}", curve.last().unwrap().kl);
    for tl in &tls {
        for s in m.encode_timeline(tl).unwrap() {
            assert!(s.mu.iter().all(|v| v.abs() < 0.15), "{:?}", s.mu);
            assert!(s.sigma.iter().all(|v| (v - 1.0).abs() < 0.15), "{:?}", s.sigma);
        }
    }
}

/// Maps built from two smooth patterns with patient-specific amplitudes.
fn structured_cohort(seed: u64, n: usize, frames: usize) -> Vec<PatientTimeline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let pid = format!("p{k}");
            let visits = (0..2)
                .map(|v| {
                    let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let rows: Vec<Vec<f64>> = (0..frames)
                        .map(|t| {
                            (0..N_LLD)
                                .map(|c| {
                                    let (tf, cf) = (t as f64 / frames as f64, c as f64 / N_LLD as f64);
                                    a * (6.0 * tf + 3.0 * cf).sin() + b * (2.0 * tf - 5.0 * cf).cos()
                                        + 0.05 * rng.random_range(-1.0..1.0)
                                })
                                .collect()
                        })
                        .collect();
                    let map = FrameFeatureMap::from_rows(&rows, HASH, "s").unwrap();
                    visit(&pid, v as f64, map, VisitState::Stable, vec![])
                })
                .collect();
            PatientTimeline::new(pid.clone(), visits).unwrap()
        })
        .collect()
}

#[test]
fn pretraining_loss_smoothly_decreases() {
    for seed in 0..5 {
        let tls = structured_cohort(100 + seed, 32, 16);
        let cfg = PseConfig {
            seed,
            latent_dim: 4,
            conv_channels: 16,
            hidden: 16,
            kernel: 5,
            frame_len: 16,
            pretrain_epochs: 40,
            lr: 3e-3,
            batch_size: 32,
            ..PseConfig::default()
        };
        let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
        m.fit_normalizers(&tls).unwrap();
        let data: Vec<_> = tls.iter().map(|t| m.prepare(t).unwrap()).collect();
        let curve = pretrain_reconstruction(&mut m, &data).unwrap();
        assert!(curve.iter().all(|e| e.loss.is_finite() && e.eval_mse.is_finite()));
        let smooth: Vec<f64> = curve.windows(5).map(|w| w.iter().map(|e| e.eval_mse).sum::<f64>() / 5.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn separable_pairs_are_learned() {
    let tls = cohort(11, 60, 8);
    let cfg = PseConfig { merge_mode: MergeMode::GlobalOnly, epochs: 200, lr: 5e-2, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![0, 1]).unwrap();
    let r = fit_pse(&mut m, &tls).unwrap();
    assert!(r.classifier.last().unwrap().accuracy >= 0.99);
    let data: Vec<_> = tls.iter().map(|t| m.prepare(t).unwrap()).collect();
    assert!(evaluate_pairs(&m, &data).unwrap().accuracy >= 0.99);
}

#[test]
fn shuffled_labels_stay_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut tls = cohort(12, 1000, 8);
    for tl in tls.iter_mut() {
        let mut states = [VisitState::Decompensated, VisitState::PostTreatment];
        states.shuffle(&mut rng);
        let mut visits = tl.visits().to_vec();
        for (v, s) in visits.iter_mut().zip(states) {
            v.state = Some(s);
            v.global = Some((0..2).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        *tl = PatientTimeline::new(tl.patient_id.clone(), visits).unwrap();
    }
    let cfg = PseConfig { merge_mode: MergeMode::GlobalOnly, epochs: 50, lr: 1e-2, batch_size: 32, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![0, 1]).unwrap();
    let r = fit_pse(&mut m, &tls).unwrap();
    let acc = r.classifier.last().unwrap().accuracy;
    assert!((acc - 0.5).abs() <= 0.05, "acc {acc}");
}

#[test]
fn classifier_handles_concat_mode() {
    let tls = cohort(13, 10, 8);
    let cfg = PseConfig { merge_mode: MergeMode::ConcatGlobal, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![0]).unwrap();
    fit_pse(&mut m, &tls).unwrap();
    let z = m.encode_timeline(&tls[0]).unwrap();
    assert_eq!(z[0].mu.len(), 4);
    assert_eq!(z[0].sigma[3], 1.0);
}

#[test]
fn latent_sampling_statistics() {
    let ls = LatentState { mu: vec![1.0, -2.0], sigma: vec![0.5, 2.0], visit: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 100_000;
    let mut acc = [0.0; 2];
    for _ in 0..n {
        let z = sample_latent(&ls, &mut rng);
        acc[0] += z[0];
        acc[1] += z[1];
    }
    for k in 0..2 {
        let mean = acc[k] / n as f64;
        assert!((mean - ls.mu[k]).abs() < 3.0 * ls.sigma[k] / (n as f64).sqrt());
    }
    let tight = LatentState { mu: vec![3.0], sigma: vec![0.0], visit: 0 };
    assert_eq!(sample_latent(&tight, &mut rng), vec![3.0]);
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(sample_latent(&ls, &mut a), sample_latent(&ls, &mut b));
}

#[test]
fn checkpoint_round_trip() {
    let tls = cohort(15, 4, 8);
    let cfg = PseConfig { merge_mode: MergeMode::ConcatGlobal, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![1]).unwrap();
    fit_pse(&mut m, &tls).unwrap();
    let bytes = encode_checkpoint(&m).unwrap();
    assert_eq!(&bytes[..8], b"LIPTCKPT");
    let back = decode_checkpoint(&bytes, HASH).unwrap();
    assert_eq!(back.config, m.config);
    for (a, b) in m.params.tensors().iter().zip(back.params.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert!(matches!(decode_checkpoint(&bytes, "other"), Err(CoreError::CatalogMismatch { .. })));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3], HASH).is_err());
}

#[test]
fn null_epochs_do_not_train() {
    let tls = cohort(16, 3, 8);
    let cfg = PseConfig { epochs: 0, pretrain_epochs: 0, ..tiny_config() };
    let mut m = PseModel::new(cfg, HASH, vec![]).unwrap();
    let before = params_bits(&m);
    fit_pse(&mut m, &tls).unwrap();
    assert_eq!(before, params_bits(&m));
    let data: Vec<_> = tls.iter().map(|t| m.prepare(t).unwrap()).collect();
    let mut m2 = m.clone();
    m2.config.epochs = 1;
    assert!(train_pairwise_classifier(&mut m2, &data[..0]).is_err());
}

/// Full pass (encoder, reparameterized decoder, classifier with swap) checked
/// against finite differences over every parameter.
#[test]
fn full_pass_gradients() {
    let cfg = PseConfig { merge_mode: MergeMode::ConcatGlobal, ..tiny_config() };
    for seed in 0..50u64 {
        let tls = cohort(200 + seed, 1, 8);
        let mut m = PseModel::new(PseConfig { seed, ..cfg.clone() }, HASH, vec![0]).unwrap();
        m.fit_normalizers(&tls).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.classifier_weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let prepared = m.prepare(&tls[0]).unwrap();
        let eps: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[3], 1.0, &mut rng)).collect();
        let f = |g: &mut Graph, vars: &[lipt_autodiff::Var]| {
            let p = BoundParams::from_vars(vars.to_vec());
            let xs: Vec<_> = prepared.inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
            let enc = m.encode_vars(g, &p, &xs).map_err(|e| match e {
                CoreError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let mut terms = Vec::new();
            for ((&x, &(mu, lv)), e) in xs.iter().zip(&enc).zip(&eps) {
                let e = g.constant(e.clone())?;
                let half = g.scale(lv, 0.5)?;
                let s = g.exp(half)?;
                let n = g.mul(s, e)?;
                let z = g.add(mu, n)?;
                let r = m.decode_var(g, &p, z).unwrap();
                terms.push(g.mse(r, x)?);
                terms.push(g.gaussian_kl(mu, lv)?);
            }
            let mus: Vec<_> = enc.iter().map(|(mu, _)| *mu).collect();
            let z = m.merge_vars(g, &mus, &prepared.globals).unwrap();
            let x = g.sub(z[1], z[0])?;
            let x = g.reshape(x, &[1, 4])?;
            let y = m.classify_var(g, &p, x).unwrap();
            terms.push(g.bce(y, &[0.0])?);
            let xs = g.scale(x, -1.0)?;
            let ys = m.classify_var(g, &p, xs).unwrap();
            terms.push(g.bce(ys, &[1.0])?);
            let all = g.concat(&terms, 0)?;
            g.sum(all)
        };
        let gc = GradCheckConfig { max_entries_per_input: Some(6), ..GradCheckConfig::default() };
        let report = grad_check(f, m.params.tensors(), &gc).unwrap();
        assert!(report.passed, "seed {seed}: {:?}", report.per_input);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn encoding_ignores_input_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..5);
        let mut visits: Vec<VisitRecord> = (0..n)
            .map(|k| visit("a", k as f64 + rng.random_range(0.0..0.5), random_map(&mut rng, 8, 0.0), VisitState::Stable, vec![]))
            .collect();
        let a = PatientTimeline::new("a", visits.clone()).unwrap();
        visits.shuffle(&mut rng);
        let b = PatientTimeline::new("a", visits).unwrap();
        let mut m = PseModel::new(tiny_config(), HASH, vec![]).unwrap();
        m.fit_normalizers(std::slice::from_ref(&a)).unwrap();
        prop_assert_eq!(m.encode_timeline(&a).unwrap(), m.encode_timeline(&b).unwrap());
    }
}
