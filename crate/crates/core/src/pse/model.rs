use lipt_autodiff::{BoundParams, Graph, ParamId, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::{BiasMode, MergeMode, PseConfig};
use super::data::{normalize_frame_map, PatientTimeline, Standardizer};
use crate::error::{invalid, CoreError, Result};
use crate::features::N_LLD;
use crate::math::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub visit: usize,
}

/// `μ + σ ⊙ ε` with standard normal `ε`.
pub fn sample_latent<R: rand::Rng + ?Sized>(ls: &LatentState, rng: &mut R) -> Vec<f64> {
    ls.mu
        .iter()
        .zip(&ls.sigma)
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(rng);
            m + s * e
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamIds {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub gru_w_ih: ParamId,
    pub gru_w_hh: ParamId,
    pub gru_b_ih: ParamId,
    pub gru_b_hh: ParamId,
    pub mu_w: ParamId,
    pub mu_b: ParamId,
    pub lv_w: ParamId,
    pub lv_b: ParamId,
    pub dec_fc_w: ParamId,
    pub dec_fc_b: ParamId,
    pub dec_conv1_w: ParamId,
    pub dec_conv1_b: ParamId,
    pub dec_conv2_w: ParamId,
    pub dec_conv2_b: ParamId,
    pub cls_w: ParamId,
    pub cls_b: Option<ParamId>,
}

impl ParamIds {
    fn resolve(p: &ParamSet, bias: BiasMode) -> Result<Self> {
        Ok(Self {
            conv1_w: p.id("enc.conv1.w")?,
            conv1_b: p.id("enc.conv1.b")?,
            conv2_w: p.id("enc.conv2.w")?,
            conv2_b: p.id("enc.conv2.b")?,
            gru_w_ih: p.id("enc.gru.w_ih")?,
            gru_w_hh: p.id("enc.gru.w_hh")?,
            gru_b_ih: p.id("enc.gru.b_ih")?,
            gru_b_hh: p.id("enc.gru.b_hh")?,
            mu_w: p.id("enc.mu.w")?,
            mu_b: p.id("enc.mu.b")?,
            lv_w: p.id("enc.logvar.w")?,
            lv_b: p.id("enc.logvar.b")?,
            dec_fc_w: p.id("dec.fc.w")?,
            dec_fc_b: p.id("dec.fc.b")?,
            dec_conv1_w: p.id("dec.conv1.w")?,
            dec_conv1_b: p.id("dec.conv1.b")?,
            dec_conv2_w: p.id("dec.conv2.w")?,
            dec_conv2_b: p.id("dec.conv2.b")?,
            cls_w: p.id("cls.w")?,
            cls_b: match bias {
                BiasMode::Learned => Some(p.id("cls.b")?),
                BiasMode::Zero => None,
            },
        })
    }
}

/// Normalized inputs for one timeline.
#[derive(Debug, Clone)]
pub struct PreparedTimeline {
    pub patient_id: String,
    /// `(72, L)` per visit, in timestamp order.
    pub inputs: Vec<Tensor>,
    /// Standardized selected global features per visit (empty when unused).
    pub globals: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize, bool)>,
}

/// Encoder, decoder and pairwise classifier with their input normalizers.
#[derive(Debug, Clone)]
pub struct PseModel {
    pub config: PseConfig,
    pub params: ParamSet,
    pub(crate) ids: ParamIds,
    pub frame_norm: Option<Standardizer>,
    pub global_norm: Option<Standardizer>,
    pub global_indices: Vec<usize>,
    pub catalog_hash: String,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl PseModel {
    pub fn new(config: PseConfig, catalog_hash: impl Into<String>, global_indices: Vec<usize>) -> Result<Self> {
        config.validate()?;
        if config.merge_mode.uses_globals() && global_indices.is_empty() {
            return invalid("merge mode needs at least one selected global feature");
        }
        let global_indices = if config.merge_mode.uses_globals() { global_indices } else { Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c, k, h, d, l4) = (config.conv_channels, config.kernel, config.hidden, config.latent_dim, config.frame_len / 4);
        let mut p = ParamSet::new();
        p.add("enc.conv1.w", uniform(&[c, N_LLD, k], N_LLD * k, &mut rng));
        p.add("enc.conv1.b", uniform(&[c], N_LLD * k, &mut rng));
        p.add("enc.conv2.w", uniform(&[c, c, k], c * k, &mut rng));
        p.add("enc.conv2.b", uniform(&[c], c * k, &mut rng));
        p.add("enc.gru.w_ih", uniform(&[3 * h, c], h, &mut rng));
        p.add("enc.gru.w_hh", uniform(&[3 * h, h], h, &mut rng));
        p.add("enc.gru.b_ih", uniform(&[3 * h], h, &mut rng));
        p.add("enc.gru.b_hh", uniform(&[3 * h], h, &mut rng));
        p.add("enc.mu.w", uniform(&[d, h], h, &mut rng));
        p.add("enc.mu.b", uniform(&[d], h, &mut rng));
        p.add("enc.logvar.w", uniform(&[d, h], h, &mut rng));
        p.add("enc.logvar.b", uniform(&[d], h, &mut rng));
        p.add("dec.fc.w", uniform(&[c * l4, d], d, &mut rng));
        p.add("dec.fc.b", uniform(&[c * l4], d, &mut rng));
        p.add("dec.conv1.w", uniform(&[c, c, k], c * k, &mut rng));
        p.add("dec.conv1.b", uniform(&[c], c * k, &mut rng));
        p.add("dec.conv2.w", uniform(&[N_LLD, c, k], c * k, &mut rng));
        p.add("dec.conv2.b", uniform(&[N_LLD], c * k, &mut rng));
        let cls_dim = match config.merge_mode {
            MergeMode::LatentOnly => d,
            MergeMode::ConcatGlobal => d + global_indices.len(),
            MergeMode::GlobalOnly => global_indices.len(),
        };
        p.add("cls.w", Tensor::zeros(&[cls_dim]));
        if config.bias == BiasMode::Learned {
            p.add("cls.b", Tensor::zeros(&[1]));
        }
        let ids = ParamIds::resolve(&p, config.bias)?;
        Ok(Self {
            config,
            params: p,
            ids,
            frame_norm: None,
            global_norm: None,
            global_indices,
            catalog_hash: catalog_hash.into(),
        })
    }

    /// Rebuilds a model around loaded parameters, checking every shape.
    pub fn from_parts(
        config: PseConfig,
        catalog_hash: String,
        global_indices: Vec<usize>,
        params: ParamSet,
        frame_norm: Option<Standardizer>,
        global_norm: Option<Standardizer>,
    ) -> Result<Self> {
        let template = Self::new(config, catalog_hash, global_indices)?;
        if template.params.len() != params.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((name, want), (got_name, got)) in template.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter `{got_name}` {:?} does not match `{name}` {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self {
            ids: template.ids,
            params,
            frame_norm,
            global_norm,
            ..template
        })
    }

    /// Dimension of the vectors compared by the classifier.
    pub fn comparison_dim(&self) -> usize {
        self.params.get(self.ids.cls_w).numel()
    }

    /// Fits the frame and global standardizers on training timelines.
    pub fn fit_normalizers(&mut self, train: &[PatientTimeline]) -> Result<()> {
        let visits = train.iter().flat_map(|t| t.visits());
        let frame = Standardizer::fit(visits.clone().flat_map(|v| v.frame_map.rows()))?;
        self.frame_norm = Some(frame);
        if self.config.merge_mode.uses_globals() {
            let rows = visits
                .map(|v| self.select_globals(v.global.as_deref(), &v.patient_id))
                .collect::<Result<Vec<_>>>()?;
            self.global_norm = Some(Standardizer::fit(rows.iter().map(Vec::as_slice))?);
        }
        Ok(())
    }

    fn select_globals(&self, g: Option<&[f64]>, patient: &str) -> Result<Vec<f64>> {
        let Some(g) = g else {
            return invalid(format!("patient {patient}: visit lacks the global feature vector"));
        };
        self.global_indices
            .iter()
            .map(|&k| g.get(k).copied().ok_or_else(|| CoreError::Invalid(format!("global index {k} out of range"))))
            .collect()
    }

    pub fn prepare(&self, tl: &PatientTimeline) -> Result<PreparedTimeline> {
        let mut inputs = Vec::with_capacity(tl.len());
        let mut globals = Vec::with_capacity(tl.len());
        for v in tl.visits() {
            if v.frame_map.catalog_hash() != self.catalog_hash {
                return Err(CoreError::CatalogMismatch {
                    expected: self.catalog_hash.clone(),
                    found: v.frame_map.catalog_hash().to_string(),
                });
            }
            if self.config.merge_mode.uses_encoder() {
                let x = normalize_frame_map(&v.frame_map, self.config.frame_len, self.frame_norm.as_ref())?;
                inputs.push(Tensor::new(&[N_LLD, self.config.frame_len], x)?);
            }
            if self.config.merge_mode.uses_globals() {
                let Some(norm) = &self.global_norm else {
                    return invalid("global standardizer has not been fitted");
                };
                globals.push(norm.apply(&self.select_globals(v.global.as_deref(), &tl.patient_id)?)?);
            }
        }
        Ok(PreparedTimeline {
            patient_id: tl.patient_id.clone(),
            inputs,
            globals,
            pairs: tl.labeled_pairs(),
        })
    }

    fn embed(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let pad = self.config.kernel / 2;
        let ids = &self.ids;
        let h1 = g.conv1d(x, p.var(ids.conv1_w), Some(p.var(ids.conv1_b)), 2, pad)?;
        let h1 = g.tanh(h1)?;
        let h2 = g.conv1d(h1, p.var(ids.conv2_w), Some(p.var(ids.conv2_b)), 2, pad)?;
        let h2 = g.tanh(h2)?;
        let pooled = g.adaptive_mean_pool_time(h2, 1)?;
        Ok(g.reshape(pooled, &[self.config.conv_channels])?)
    }

    /// `(μ, log σ²)` per visit, through the recurrent cell from a zero state.
    pub fn encode_vars(&self, g: &mut Graph, p: &BoundParams, inputs: &[Var]) -> Result<Vec<(Var, Var)>> {
        let ids = &self.ids;
        let mut h = g.constant(Tensor::zeros(&[self.config.hidden]))?;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let e = self.embed(g, p, x)?;
            h = g.gru_cell_step(
                e,
                h,
                p.var(ids.gru_w_ih),
                p.var(ids.gru_w_hh),
                p.var(ids.gru_b_ih),
                p.var(ids.gru_b_hh),
            )?;
            let mu = g.matmul(p.var(ids.mu_w), h)?;
            let mu = g.add(mu, p.var(ids.mu_b))?;
            let lv = g.matmul(p.var(ids.lv_w), h)?;
            let lv = g.add(lv, p.var(ids.lv_b))?;
            out.push((mu, lv));
        }
        Ok(out)
    }

    /// Decodes a latent `(d)` to a `(72, L)` map.
    pub fn decode_var(&self, g: &mut Graph, p: &BoundParams, z: Var) -> Result<Var> {
        let ids = &self.ids;
        let (c, pad) = (self.config.conv_channels, self.config.kernel / 2);
        let y = g.matmul(p.var(ids.dec_fc_w), z)?;
        let y = g.add(y, p.var(ids.dec_fc_b))?;
        let y = g.reshape(y, &[c, self.config.frame_len / 4])?;
        let y = g.upsample_nearest(y, 2)?;
        let y = g.conv1d(y, p.var(ids.dec_conv1_w), Some(p.var(ids.dec_conv1_b)), 1, pad)?;
        let y = g.tanh(y)?;
        let y = g.upsample_nearest(y, 2)?;
        Ok(g.conv1d(y, p.var(ids.dec_conv2_w), Some(p.var(ids.dec_conv2_b)), 1, pad)?)
    }

    /// Comparison vectors per visit; `mus` is empty in global-only mode.
    pub fn merge_vars(&self, g: &mut Graph, mus: &[Var], globals: &[Vec<f64>]) -> Result<Vec<Var>> {
        match self.config.merge_mode {
            MergeMode::LatentOnly => Ok(mus.to_vec()),
            MergeMode::GlobalOnly => globals
                .iter()
                .map(|v| Ok(g.constant(Tensor::from_vec(v.clone()))?))
                .collect(),
            MergeMode::ConcatGlobal => mus
                .iter()
                .zip(globals)
                .map(|(&m, v)| {
                    let c = g.constant(Tensor::from_vec(v.clone()))?;
                    Ok(g.concat(&[m, c], 0)?)
                })
                .collect(),
        }
    }

    /// `sigmoid(X·w + b)` for stacked differences `X: (B, D)`.
    pub fn classify_var(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let logits = g.matmul(x, p.var(self.ids.cls_w))?;
        let logits = match self.ids.cls_b {
            Some(b) => g.add(logits, p.var(b))?,
            None => logits,
        };
        Ok(g.sigmoid(logits)?)
    }

    /// Comparison vectors of every visit, with `μ` latents (or sampled ones
    /// when configured and `rng` is given).
    pub fn comparison_vectors(&self, tl: &PreparedTimeline, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Vec<f64>>> {
        let states = self.latent_states(tl)?;
        let sample = self.config.sample_at_inference;
        match rng {
            Some(rng) if sample => Ok(states.iter().map(|s| sample_latent(s, rng)).collect()),
            _ => Ok(states.into_iter().map(|s| s.mu).collect()),
        }
    }

    /// Merged latent states per visit; concatenated global entries carry σ = 1.
    pub fn latent_states(&self, tl: &PreparedTimeline) -> Result<Vec<LatentState>> {
        let mut g = Graph::new();
        let p = self.bind_constants(&mut g)?;
        let n = tl.inputs.len().max(tl.globals.len());
        let mut mu_sig: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
        if self.config.merge_mode.uses_encoder() {
            let xs = tl.inputs.iter().map(|t| g.constant(t.clone())).collect::<lipt_autodiff::Result<Vec<_>>>()?;
            for (k, (mu, lv)) in self.encode_vars(&mut g, &p, &xs)?.into_iter().enumerate() {
                mu_sig[k].0 = g.value(mu).data().to_vec();
                mu_sig[k].1 = g.value(lv).data().iter().map(|v| (0.5 * v).exp()).collect();
            }
        }
        if self.config.merge_mode.uses_globals() {
            for (k, v) in tl.globals.iter().enumerate() {
                mu_sig[k].0.extend_from_slice(v);
                mu_sig[k].1.extend(std::iter::repeat_n(1.0, v.len()));
            }
        }
        Ok(mu_sig
            .into_iter()
            .enumerate()
            .map(|(visit, (mu, sigma))| LatentState { mu, sigma, visit })
            .collect())
    }

    pub fn encode_timeline(&self, tl: &PatientTimeline) -> Result<Vec<LatentState>> {
        self.latent_states(&self.prepare(tl)?)
    }

    fn bind_constants(&self, g: &mut Graph) -> Result<BoundParams> {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<lipt_autodiff::Result<Vec<_>>>()?;
        Ok(BoundParams::from_vars(vars))
    }

    /// `sigmoid(w·(b − a) + bias)`.
    pub fn compare_vectors(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let w = self.params.get(self.ids.cls_w).data();
        if a.len() != w.len() || b.len() != w.len() {
            return invalid(format!("comparison vectors must have {} entries", w.len()));
        }
        let bias = self.ids.cls_b.map_or(0.0, |id| self.params.get(id).data()[0]);
        let logit: f64 = w.iter().zip(a.iter().zip(b)).map(|(w, (a, b))| w * (b - a)).sum::<f64>() + bias;
        Ok(sigmoid(logit))
    }

    /// Probability that visit `j` is worse than visit `i` (`i < j`).
    pub fn compare_visits(&self, tl: &PatientTimeline, i: usize, j: usize) -> Result<f64> {
        if i >= j || j >= tl.len() {
            return invalid(format!("visit pair ({i}, {j}) invalid for {} visits", tl.len()));
        }
        let z = self.comparison_vectors(&self.prepare(tl)?, None)?;
        self.compare_vectors(&z[i], &z[j])
    }

    pub fn classifier_bias(&self) -> f64 {
        self.ids.cls_b.map_or(0.0, |id| self.params.get(id).data()[0])
    }

    pub fn classifier_weights(&self) -> &[f64] {
        self.params.get(self.ids.cls_w).data()
    }

    pub fn classifier_weights_mut(&mut self) -> &mut [f64] {
        self.params.get_mut(self.ids.cls_w).data_mut()
    }
}
