//! Cross-sectional versus paired comparison on a synthetic cohort over
//! repeated subject-disjoint splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{bayes_reference_accuracies, BayesReference, SyntheticCohort};
use crate::comparator::{evaluate_comparator, ComparatorRegistry, ComparatorSettings};
use crate::error::{invalid, Result};
use crate::fnn::{cross_sectional_fnn, FnnConfig};
use crate::global::GlobalSchema;
use crate::pse::{PatientTimeline, PseConfig, VisitState};
use crate::screening::{select_hf_voice_sets, FeatureSelection};
use crate::features::FeatureCatalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub alpha: f64,
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    pub comparator: String,
    pub pse: PseConfig,
    pub fnn: FnnConfig,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            train_fraction: 0.8,
            seeds: (0..5).collect(),
            comparator: "pse".into(),
            pse: PseConfig::default(),
            fnn: FnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResult {
    pub seed: u64,
    pub n_selected: usize,
    pub cross_sectional: f64,
    pub pairwise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub bayes: BayesReference,
    pub comparator: String,
    pub splits: Vec<SplitResult>,
    pub cross_sectional_mean: f64,
    pub cross_sectional_std: f64,
    pub pairwise_mean: f64,
    pub pairwise_std: f64,
}

/// Shuffles patient indices and cuts at `⌊fraction·n⌋`.
pub fn subject_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("train fraction must be in (0, 1), got {fraction}"));
    }
    let cut = (fraction * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return invalid(format!("{n} patients cannot be split at {fraction}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Screens admission against discharge global vectors of `train`.
pub fn screen_timelines(train: &[PatientTimeline], alpha: f64) -> Result<FeatureSelection> {
    let schema = GlobalSchema::new(&FeatureCatalog::default());
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for tl in train {
        let find = |s: VisitState| tl.visits().iter().find(|v| v.state == Some(s)).and_then(|v| v.global.clone());
        if let (Some(a), Some(d)) = (find(VisitState::Decompensated), find(VisitState::PostTreatment)) {
            pre.push(a);
            post.push(d);
        }
    }
    if pre.len() < 2 {
        return invalid("screening needs at least two patients with admission and discharge visits");
    }
    select_hf_voice_sets(&pre, &post, alpha, &schema.groups)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

pub fn run_benchmark(
    cohort: &SyntheticCohort,
    opts: &BenchmarkOptions,
    registry: &ComparatorRegistry,
) -> Result<BenchmarkResult> {
    if opts.seeds.is_empty() {
        return invalid("benchmark needs at least one seed");
    }
    let mut splits = Vec::with_capacity(opts.seeds.len());
    for &seed in &opts.seeds {
        let (tr, te) = subject_split(cohort.timelines.len(), opts.train_fraction, seed)?;
        let train: Vec<PatientTimeline> = tr.iter().map(|&k| cohort.timelines[k].clone()).collect();
        let test: Vec<PatientTimeline> = te.iter().map(|&k| cohort.timelines[k].clone()).collect();
        let selection = screen_timelines(&train, opts.alpha)?;
        let idx = selection.set_a.clone();
        if idx.is_empty() {
            return invalid(format!("split {seed}: no feature passed screening at alpha {}", opts.alpha));
        }
        let fnn = FnnConfig { seed, ..opts.fnn.clone() };
        let (_, cross) = cross_sectional_fnn(&train, &test, &idx, &fnn)?;
        let settings = ComparatorSettings {
            pse: PseConfig { seed, ..opts.pse.clone() },
            fnn,
            catalog_hash: cohort.catalog_hash.clone(),
            global_indices: idx.clone(),
        };
        let mut comparator = registry.create(&opts.comparator, &settings)?;
        comparator.fit(&train)?;
        let pairwise = evaluate_comparator(comparator.as_ref(), &test)?.accuracy;
        log::info!(
            "split {seed}: {} features, cross-sectional {:.3}, pairwise {pairwise:.3}",
            idx.len(),
            cross.report.accuracy
        );
        splits.push(SplitResult { seed, n_selected: idx.len(), cross_sectional: cross.report.accuracy, pairwise });
    }
    let (cm, cs) = mean_std(&splits.iter().map(|s| s.cross_sectional).collect::<Vec<_>>());
    let (pm, ps) = mean_std(&splits.iter().map(|s| s.pairwise).collect::<Vec<_>>());
    Ok(BenchmarkResult {
        bayes: bayes_reference_accuracies(&cohort.config)?,
        comparator: opts.comparator.clone(),
        splits,
        cross_sectional_mean: cm,
        cross_sectional_std: cs,
        pairwise_mean: pm,
        pairwise_std: ps,
    })
}
