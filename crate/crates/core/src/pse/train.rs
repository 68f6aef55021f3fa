use lipt_autodiff::{Adam, AdamConfig, AutodiffError, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::data::PatientTimeline;
use super::model::{PreparedTimeline, PseModel};
use crate::error::{invalid, CoreError, Result};

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const CLASSIFY_STREAM: u64 = 0x434c_5346;

/// One reference/target allocation per pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairBatch {
    /// Reference latents.
    pub a: Vec<Vec<f64>>,
    /// Target latents.
    pub b: Vec<Vec<f64>>,
    /// Allocation map: 0 keeps `(i, j)` as (reference, target), 1 swaps them.
    pub m: Vec<u8>,
    /// `B − A`.
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub x_swap: Vec<Vec<f64>>,
    pub y_swap: Vec<f64>,
}

/// One pair request: latents of a patient's visits, the pair, and whether
/// visit `j` is the worse one.
#[derive(Debug, Clone, Copy)]
pub struct PairRequest<'a> {
    pub latents: &'a [Vec<f64>],
    pub i: usize,
    pub j: usize,
    pub worse_j: bool,
}

pub fn draw_allocation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect()
}

fn pair_label(m: u8, worse_j: bool) -> f64 {
    if (m == 1) != worse_j {
        1.0
    } else {
        0.0
    }
}

/// Builds `X = B − A` with label `M` (flipped when `j` is the worse visit)
/// and the negated swap half with inverted labels.
pub fn build_pair_batch_with(requests: &[PairRequest<'_>], m: Vec<u8>) -> Result<PairBatch> {
    if m.len() != requests.len() {
        return invalid("allocation map length differs from the number of pairs");
    }
    let mut batch = PairBatch {
        a: Vec::new(),
        b: Vec::new(),
        m,
        x_train: Vec::new(),
        y_train: Vec::new(),
        x_swap: Vec::new(),
        y_swap: Vec::new(),
    };
    for (r, &m) in requests.iter().zip(&batch.m) {
        let (Some(zi), Some(zj)) = (r.latents.get(r.i), r.latents.get(r.j)) else {
            return invalid(format!("visit pair ({}, {}) missing from {} latents", r.i, r.j, r.latents.len()));
        };
        let (a, b) = if m == 0 { (zi, zj) } else { (zj, zi) };
        let x: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
        let y = pair_label(m, r.worse_j);
        batch.x_swap.push(x.iter().map(|v| -v).collect());
        batch.y_swap.push(1.0 - y);
        batch.x_train.push(x);
        batch.y_train.push(y);
        batch.a.push(a.clone());
        batch.b.push(b.clone());
    }
    Ok(batch)
}

pub fn build_pair_batch<R: Rng + ?Sized>(requests: &[PairRequest<'_>], rng: &mut R) -> Result<PairBatch> {
    let m = draw_allocation(requests.len(), rng);
    build_pair_batch_with(requests, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    /// Mean training objective over the epoch's sampled batches.
    pub loss: f64,
    pub mse: f64,
    pub kl: f64,
    /// Reconstruction MSE from `μ` over all visits after the epoch.
    pub eval_mse: f64,
}

/// Mean reconstruction MSE when decoding `μ` instead of a sample.
pub fn reconstruction_mse(model: &PseModel, data: &[PreparedTimeline]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model
        .params
        .tensors()
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<lipt_autodiff::Result<Vec<_>>>()?;
    let p = lipt_autodiff::BoundParams::from_vars(vars);
    let (mut tot, mut n) = (0.0, 0usize);
    for tl in data {
        let xs = constants(&mut g, &tl.inputs)?;
        for (&x, (mu, _)) in xs.iter().zip(model.encode_vars(&mut g, &p, &xs)?) {
            let r = model.decode_var(&mut g, &p, mu)?;
            let mse = g.mse(r, x)?;
            tot += g.value(mse).item();
            n += 1;
        }
    }
    if n == 0 {
        return invalid("no visits to reconstruct");
    }
    Ok(tot / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn diverged(epoch: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Autodiff(AutodiffError::NonFinite { op, index }) => CoreError::Diverged {
            epoch,
            detail: format!("non-finite value in {op} at index {index}"),
        },
        other => other,
    }
}

fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Diverged { epoch, detail: format!("loss is {loss}") })
    }
}

fn constants(g: &mut Graph, xs: &[Tensor]) -> Result<Vec<Var>> {
    Ok(xs.iter().map(|t| g.constant(t.clone())).collect::<lipt_autodiff::Result<Vec<_>>>()?)
}

/// Minimizes `k1·MSE(D(z), x) + k2·KL` per visit, with `z` sampled from the
/// encoder's Gaussian after the recurrent pass.
pub fn pretrain_reconstruction(model: &mut PseModel, data: &[PreparedTimeline]) -> Result<Vec<PretrainEpoch>> {
    if !model.config.merge_mode.uses_encoder() {
        return Ok(Vec::new());
    }
    if data.iter().all(|t| t.inputs.is_empty()) {
        return invalid("pretraining needs at least one timeline");
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PRETRAIN_STREAM);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let mut order: Vec<usize> = (0..data.len()).filter(|&k| !data[k].inputs.is_empty()).collect();
    let mut curve = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        let (mut tot, mut tot_mse, mut tot_kl, mut n_visits) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<(f64, f64, f64, usize)> {
                let mut g = Graph::new();
                let p = model.params.bind(&mut g)?;
                let mut terms = Vec::new();
                let (mut mse_sum, mut kl_sum) = (0.0, 0.0);
                for &k in chunk {
                    let xs = constants(&mut g, &data[k].inputs)?;
                    let enc = model.encode_vars(&mut g, &p, &xs)?;
                    for (&x, &(mu, lv)) in xs.iter().zip(&enc) {
                        let eps: Vec<f64> = (0..cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
                        let eps = g.constant(Tensor::from_vec(eps))?;
                        let half = g.scale(lv, 0.5)?;
                        let sigma = g.exp(half)?;
                        let noise = g.mul(sigma, eps)?;
                        let z = g.add(mu, noise)?;
                        let recon = model.decode_var(&mut g, &p, z)?;
                        let mse = g.mse(recon, x)?;
                        let kl = g.gaussian_kl(mu, lv)?;
                        mse_sum += g.value(mse).item();
                        kl_sum += g.value(kl).item();
                        let a = g.scale(mse, cfg.k1)?;
                        let b = g.scale(kl, cfg.k2)?;
                        terms.push(g.add(a, b)?);
                    }
                }
                let n = terms.len();
                let stacked = g.concat(&terms, 0)?;
                let loss = g.reduce_mean(stacked)?;
                let value = g.value(loss).item();
                g.backward(loss)?;
                let grads = p.grads(&g);
                adam.step(&mut model.params, &grads);
                Ok((value * n as f64, mse_sum, kl_sum, n))
            })()
            .map_err(diverged(epoch))?;
            check_finite(epoch, step.0)?;
            tot += step.0;
            tot_mse += step.1;
            tot_kl += step.2;
            n_visits += step.3;
        }
        let n = n_visits as f64;
        let e = PretrainEpoch {
            epoch,
            loss: tot / n,
            mse: tot_mse / n,
            kl: tot_kl / n,
            eval_mse: reconstruction_mse(model, data)?,
        };
        log::debug!(
            "pretrain epoch {epoch}: loss {:.6} mse {:.6} kl {:.6} eval {:.6}",
            e.loss,
            e.mse,
            e.kl,
            e.eval_mse
        );
        curve.push(e);
    }
    Ok(curve)
}

/// Minimizes `BCE(ŷ_train, y) + BCE(ŷ_swap, 1 − y)` (plus optional KL)
/// over every labeled pair of every timeline, with a fresh allocation map
/// per epoch.
pub fn train_pairwise_classifier(model: &mut PseModel, data: &[PreparedTimeline]) -> Result<Vec<ClassifierEpoch>> {
    let cfg = model.config.clone();
    let mut order: Vec<usize> = (0..data.len()).filter(|&k| !data[k].pairs.is_empty()).collect();
    if order.is_empty() {
        return invalid("no visit pairs with differing severity to train on");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CLASSIFY_STREAM);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tot, mut correct, mut count) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<(f64, usize, usize)> {
                let mut g = Graph::new();
                let p = model.params.bind(&mut g)?;
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                let mut kl_terms = Vec::new();
                for &k in chunk {
                    let tl = &data[k];
                    let mus = if cfg.merge_mode.uses_encoder() {
                        let xs = constants(&mut g, &tl.inputs)?;
                        let enc = model.encode_vars(&mut g, &p, &xs)?;
                        if cfg.cls_kl_weight > 0.0 {
                            for &(mu, lv) in &enc {
                                kl_terms.push(g.gaussian_kl(mu, lv)?);
                            }
                        }
                        enc.into_iter().map(|(mu, _)| mu).collect()
                    } else {
                        Vec::new()
                    };
                    let z = model.merge_vars(&mut g, &mus, &tl.globals)?;
                    let m = draw_allocation(tl.pairs.len(), &mut rng);
                    for (&(i, j, worse_j), &m) in tl.pairs.iter().zip(&m) {
                        let (a, b) = if m == 0 { (z[i], z[j]) } else { (z[j], z[i]) };
                        let x = g.sub(b, a)?;
                        let d = g.shape(x)[0];
                        rows.push(g.reshape(x, &[1, d])?);
                        labels.push(pair_label(m, worse_j));
                    }
                }
                let x = g.concat(&rows, 0)?;
                let y_hat = model.classify_var(&mut g, &p, x)?;
                let x_swap = g.scale(x, -1.0)?;
                let y_swap_hat = model.classify_var(&mut g, &p, x_swap)?;
                let swap_labels: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
                let l1 = g.bce(y_hat, &labels)?;
                let l2 = g.bce(y_swap_hat, &swap_labels)?;
                let mut loss = g.add(l1, l2)?;
                if !kl_terms.is_empty() {
                    let kl = g.concat(&kl_terms, 0)?;
                    let kl = g.reduce_mean(kl)?;
                    let kl = g.scale(kl, cfg.cls_kl_weight)?;
                    loss = g.add(loss, kl)?;
                }
                let value = g.value(loss).item();
                let ok = g
                    .value(y_hat)
                    .data()
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
                    .count();
                g.backward(loss)?;
                let grads = p.grads(&g);
                adam.step(&mut model.params, &grads);
                Ok((value * labels.len() as f64, ok, labels.len()))
            })()
            .map_err(diverged(epoch))?;
            check_finite(epoch, step.0)?;
            tot += step.0;
            correct += step.1;
            count += step.2;
        }
        let e = ClassifierEpoch {
            epoch,
            loss: tot / count as f64,
            accuracy: correct as f64 / count as f64,
        };
        log::debug!("classifier epoch {epoch}: loss {:.6} acc {:.4}", e.loss, e.accuracy);
        curve.push(e);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPrediction {
    pub patient_id: String,
    pub i: usize,
    pub j: usize,
    /// Ground truth: visit `j` is the worse one.
    pub worse_j: bool,
    /// `ŷ` with `j` as target.
    pub y_forward: f64,
    /// `ŷ` with `i` as target.
    pub y_reverse: f64,
}

impl PairPrediction {
    /// Correct calls out of the two allocations.
    pub fn correct(&self) -> usize {
        usize::from((self.y_forward >= 0.5) == self.worse_j) + usize::from((self.y_reverse >= 0.5) != self.worse_j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairEvaluation {
    pub predictions: Vec<PairPrediction>,
    /// Over both allocations of every pair.
    pub accuracy: f64,
}

pub fn evaluate_pairs(model: &PseModel, data: &[PreparedTimeline]) -> Result<PairEvaluation> {
    let mut predictions = Vec::new();
    for tl in data.iter().filter(|t| !t.pairs.is_empty()) {
        let z = model.comparison_vectors(tl, None)?;
        for &(i, j, worse_j) in &tl.pairs {
            predictions.push(PairPrediction {
                patient_id: tl.patient_id.clone(),
                i,
                j,
                worse_j,
                y_forward: model.compare_vectors(&z[i], &z[j])?,
                y_reverse: model.compare_vectors(&z[j], &z[i])?,
            });
        }
    }
    if predictions.is_empty() {
        return invalid("no labeled pairs to evaluate");
    }
    let correct: usize = predictions.iter().map(PairPrediction::correct).sum();
    let accuracy = correct as f64 / (2 * predictions.len()) as f64;
    Ok(PairEvaluation { predictions, accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseTrainingReport {
    pub pretrain: Vec<PretrainEpoch>,
    pub classifier: Vec<ClassifierEpoch>,
}

/// Fits normalizers, pretrains, then trains the pairwise classifier.
pub fn fit_pse(model: &mut PseModel, train: &[PatientTimeline]) -> Result<PseTrainingReport> {
    model.fit_normalizers(train)?;
    let data = train.iter().map(|t| model.prepare(t)).collect::<Result<Vec<_>>>()?;
    let pretrain = pretrain_reconstruction(model, &data)?;
    let classifier = train_pairwise_classifier(model, &data)?;
    Ok(PseTrainingReport { pretrain, classifier })
}
