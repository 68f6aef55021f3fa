//! Two-layer feed-forward baseline over global feature vectors, in
//! cross-sectional (single visit → state) and paired-difference modes.

use lipt_autodiff::{Adam, AdamConfig, Graph, ParamSet, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::math::sigmoid;
use crate::metrics::{evaluate, MetricReport};
use crate::pse::{PatientTimeline, Standardizer, VisitState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty added to the gradients of the weight matrices.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

/// `sigmoid(w2·tanh(W1 x + b1) + b2)` on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Fnn {
    pub config: FnnConfig,
    pub params: ParamSet,
    pub norm: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FnnFile {
    config: FnnConfig,
    mean: Vec<f64>,
    std: Vec<f64>,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Fnn {
    pub fn input_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.norm.apply(x)?;
        let t = self.params.tensors();
        let (w1, b1, w2, b2) = (t[0].data(), t[1].data(), t[2].data(), t[3].data()[0]);
        let f = z.len();
        let logit: f64 = (0..self.config.hidden)
            .map(|h| {
                let a: f64 = b1[h] + w1[h * f..(h + 1) * f].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
                w2[h] * a.tanh()
            })
            .sum::<f64>()
            + b2;
        Ok(sigmoid(logit))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FnnFile {
            config: self.config.clone(),
            mean: self.norm.mean.clone(),
            std: self.norm.std.clone(),
            params: self.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec())).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: FnnFile = serde_json::from_str(s)?;
        let mut params = ParamSet::new();
        for (name, shape, data) in file.params {
            params.add(name, Tensor::new(&shape, data)?);
        }
        if params.len() != 4 {
            return Err(CoreError::Checkpoint("feed-forward model needs 4 parameter tensors".into()));
        }
        Ok(Self {
            config: file.config,
            params,
            norm: Standardizer { mean: file.mean, std: file.std },
        })
    }
}

/// Trains on `(x, y)` rows with mean BCE, minibatch Adam.
pub fn train_fnn(xs: &[Vec<f64>], ys: &[f64], cfg: &FnnConfig) -> Result<Fnn> {
    if xs.is_empty() || xs.len() != ys.len() {
        return invalid("feed-forward training needs equally many inputs and labels");
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return invalid("hidden, batch_size and lr must be positive");
    }
    let norm = Standardizer::fit(xs.iter().map(Vec::as_slice))?;
    let f = norm.dim();
    if f == 0 {
        return invalid("no input features");
    }
    let z: Vec<Vec<f64>> = xs.iter().map(|x| norm.apply(x)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let b1 = 1.0 / (f as f64).sqrt();
    let b2 = 1.0 / (cfg.hidden as f64).sqrt();
    params.add("w1", Tensor::uniform(&[cfg.hidden, f], b1, &mut rng));
    params.add("b1", Tensor::uniform(&[cfg.hidden], b1, &mut rng));
    params.add("w2", Tensor::uniform(&[cfg.hidden], b2, &mut rng));
    params.add("b2", Tensor::zeros(&[1]));
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &params);
    let mut order: Vec<usize> = (0..z.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let p = params.bind(&mut g)?;
            let v = p.vars().to_vec();
            let data: Vec<f64> = chunk.iter().flat_map(|&k| z[k].iter().copied()).collect();
            let x = g.constant(Tensor::new(&[chunk.len(), f], data)?)?;
            let w1t = g.transpose(v[0])?;
            let h = g.matmul(x, w1t)?;
            let h = g.add(h, v[1])?;
            let h = g.tanh(h)?;
            let o = g.matmul(h, v[2])?;
            let o = g.add(o, v[3])?;
            let o = g.sigmoid(o)?;
            let labels: Vec<f64> = chunk.iter().map(|&k| ys[k]).collect();
            let loss = g.bce(o, &labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(CoreError::Diverged { epoch, detail: format!("loss is {value}") });
            }
            g.backward(loss)?;
            let mut grads = p.grads(&g);
            if cfg.weight_decay > 0.0 {
                for k in [0, 2] {
                    let w = params.tensors()[k].data().to_vec();
                    grads[k].data_mut().iter_mut().zip(w).for_each(|(gr, w)| *gr += cfg.weight_decay * w);
                }
            }
            adam.step(&mut params, &grads);
        }
    }
    Ok(Fnn { config: cfg.clone(), params, norm })
}

fn select(g: &[f64], idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&k| g.get(k).copied().ok_or_else(|| CoreError::Invalid(format!("global index {k} out of range"))))
        .collect()
}

/// Admission and discharge visits with their severity as the label.
pub fn cross_sectional_samples(timelines: &[PatientTimeline], idx: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for tl in timelines {
        for v in tl.visits() {
            let Some(state @ (VisitState::Decompensated | VisitState::PostTreatment)) = v.state else {
                continue;
            };
            let Some(g) = &v.global else {
                return invalid(format!("patient {}: visit lacks global features", tl.patient_id));
            };
            xs.push(select(g, idx)?);
            ys.push(state.severity() as f64);
        }
    }
    Ok((xs, ys))
}

/// Differences `g_target − g_reference` for both allocations of every
/// labeled pair.
pub fn paired_samples(timelines: &[PatientTimeline], idx: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for tl in timelines {
        let g = tl
            .visits()
            .iter()
            .map(|v| match &v.global {
                Some(g) => select(g, idx),
                None => invalid(format!("patient {}: visit lacks global features", tl.patient_id)),
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, j, worse_j) in tl.labeled_pairs() {
            let d: Vec<f64> = g[j].iter().zip(&g[i]).map(|(b, a)| b - a).collect();
            xs.push(d.iter().map(|v| -v).collect());
            ys.push(if worse_j { 0.0 } else { 1.0 });
            xs.push(d);
            ys.push(if worse_j { 1.0 } else { 0.0 });
        }
    }
    Ok((xs, ys))
}

fn check_two_classes(ys: &[f64], what: &str) -> Result<()> {
    if ys.iter().all(|y| *y == 1.0) || ys.iter().all(|y| *y == 0.0) {
        return invalid(format!("{what} split contains a single class"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FnnEvaluation {
    pub report: MetricReport,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

fn score(model: &Fnn, xs: &[Vec<f64>], ys: &[f64]) -> Result<FnnEvaluation> {
    let scores = xs.iter().map(|x| model.predict(x)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = ys.iter().map(|y| *y >= 0.5).collect();
    let preds: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
    Ok(FnnEvaluation { report: evaluate(&preds, &labels)?, scores, labels })
}

/// Trains on single visits of `train`, evaluates on visits of `test`.
pub fn cross_sectional_fnn(
    train: &[PatientTimeline],
    test: &[PatientTimeline],
    idx: &[usize],
    cfg: &FnnConfig,
) -> Result<(Fnn, FnnEvaluation)> {
    let (xs, ys) = cross_sectional_samples(train, idx)?;
    check_two_classes(&ys, "training")?;
    let model = train_fnn(&xs, &ys, cfg)?;
    let (tx, ty) = cross_sectional_samples(test, idx)?;
    check_two_classes(&ty, "test")?;
    let eval = score(&model, &tx, &ty)?;
    Ok((model, eval))
}

/// Trains on visit-pair differences of `train`, evaluates both allocations of
/// every labeled pair in `test`.
pub fn paired_fnn(
    train: &[PatientTimeline],
    test: &[PatientTimeline],
    idx: &[usize],
    cfg: &FnnConfig,
) -> Result<(Fnn, FnnEvaluation)> {
    let (xs, ys) = paired_samples(train, idx)?;
    check_two_classes(&ys, "training")?;
    let model = train_fnn(&xs, &ys, cfg)?;
    let (tx, ty) = paired_samples(test, idx)?;
    check_two_classes(&ty, "test")?;
    let eval = score(&model, &tx, &ty)?;
    Ok((model, eval))
}
