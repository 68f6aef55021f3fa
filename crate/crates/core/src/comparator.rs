//! Pairwise comparators selectable by name.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::fnn::{paired_samples, train_fnn, Fnn, FnnConfig};
use crate::pse::{
    fit_pse, load_checkpoint, save_checkpoint, PairEvaluation, PairPrediction, PatientTimeline, PseConfig, PseModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorSettings {
    pub pse: PseConfig,
    pub fnn: FnnConfig,
    pub catalog_hash: String,
    pub global_indices: Vec<usize>,
}

/// Scores visit pairs of one patient.
pub trait PairwiseComparator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Trains and returns a JSON training report.
    fn fit(&mut self, train: &[PatientTimeline]) -> Result<serde_json::Value>;

    /// `(P(j worse than i), P(i worse than j))` for each `(i, j)`.
    fn pair_scores(&self, tl: &PatientTimeline, pairs: &[(usize, usize)]) -> Result<Vec<(f64, f64)>>;

    fn save(&self, path: &Path) -> Result<()>;
}

/// Accuracy over both allocations of every labeled pair.
pub fn evaluate_comparator(c: &dyn PairwiseComparator, data: &[PatientTimeline]) -> Result<PairEvaluation> {
    let mut predictions = Vec::new();
    for tl in data {
        let labeled = tl.labeled_pairs();
        if labeled.is_empty() {
            continue;
        }
        let pairs: Vec<(usize, usize)> = labeled.iter().map(|&(i, j, _)| (i, j)).collect();
        for ((i, j, worse_j), (f, r)) in labeled.into_iter().zip(c.pair_scores(tl, &pairs)?) {
            predictions.push(PairPrediction {
                patient_id: tl.patient_id.clone(),
                i,
                j,
                worse_j,
                y_forward: f,
                y_reverse: r,
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

fn check_pairs(tl: &PatientTimeline, pairs: &[(usize, usize)]) -> Result<()> {
    match pairs.iter().find(|&&(i, j)| i >= j || j >= tl.len()) {
        Some((i, j)) => invalid(format!("visit pair ({i}, {j}) invalid for {} visits", tl.len())),
        None => Ok(()),
    }
}

pub struct PseComparator {
    pub model: PseModel,
}

impl PairwiseComparator for PseComparator {
    fn name(&self) -> &'static str {
        "pse"
    }

    fn fit(&mut self, train: &[PatientTimeline]) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(fit_pse(&mut self.model, train)?)?)
    }

    fn pair_scores(&self, tl: &PatientTimeline, pairs: &[(usize, usize)]) -> Result<Vec<(f64, f64)>> {
        check_pairs(tl, pairs)?;
        let z = self.model.comparison_vectors(&self.model.prepare(tl)?, None)?;
        pairs
            .iter()
            .map(|&(i, j)| Ok((self.model.compare_vectors(&z[i], &z[j])?, self.model.compare_vectors(&z[j], &z[i])?)))
            .collect()
    }

    fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.model, path)
    }
}

/// Feed-forward network on differences of selected global features.
pub struct FnnLiptComparator {
    pub config: FnnConfig,
    pub global_indices: Vec<usize>,
    pub catalog_hash: String,
    pub model: Option<Fnn>,
}

#[derive(Serialize, Deserialize)]
struct FnnLiptFile {
    catalog_hash: String,
    global_indices: Vec<usize>,
    model: String,
}

impl FnnLiptComparator {
    fn model(&self) -> Result<&Fnn> {
        self.model.as_ref().ok_or_else(|| CoreError::Invalid("comparator has not been trained".into()))
    }
}

impl PairwiseComparator for FnnLiptComparator {
    fn name(&self) -> &'static str {
        "fnn-lipt"
    }

    fn fit(&mut self, train: &[PatientTimeline]) -> Result<serde_json::Value> {
        let (xs, ys) = paired_samples(train, &self.global_indices)?;
        self.model = Some(train_fnn(&xs, &ys, &self.config)?);
        Ok(serde_json::json!({ "samples": xs.len() }))
    }

    fn pair_scores(&self, tl: &PatientTimeline, pairs: &[(usize, usize)]) -> Result<Vec<(f64, f64)>> {
        check_pairs(tl, pairs)?;
        let model = self.model()?;
        let g = tl
            .visits()
            .iter()
            .map(|v| {
                let Some(g) = &v.global else {
                    return invalid(format!("patient {}: visit lacks global features", tl.patient_id));
                };
                self.global_indices
                    .iter()
                    .map(|&k| g.get(k).copied().ok_or_else(|| CoreError::Invalid(format!("global index {k} out of range"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        pairs
            .iter()
            .map(|&(i, j)| {
                let d: Vec<f64> = g[j].iter().zip(&g[i]).map(|(b, a)| b - a).collect();
                let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                Ok((model.predict(&d)?, model.predict(&neg)?))
            })
            .collect()
    }

    fn save(&self, path: &Path) -> Result<()> {
        let file = FnnLiptFile {
            catalog_hash: self.catalog_hash.clone(),
            global_indices: self.global_indices.clone(),
            model: self.model()?.to_json()?,
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }
}

type Create = Arc<dyn Fn(&ComparatorSettings) -> Result<Box<dyn PairwiseComparator>> + Send + Sync>;
type Load = Arc<dyn Fn(&Path, &str) -> Result<Box<dyn PairwiseComparator>> + Send + Sync>;

#[derive(Clone)]
struct Entry {
    create: Create,
    load: Load,
}

#[derive(Clone)]
pub struct ComparatorRegistry {
    entries: BTreeMap<String, Entry>,
}

impl Default for ComparatorRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(
            "pse",
            Arc::new(|s: &ComparatorSettings| {
                let model = PseModel::new(s.pse.clone(), s.catalog_hash.clone(), s.global_indices.clone())?;
                Ok(Box::new(PseComparator { model }) as Box<dyn PairwiseComparator>)
            }),
            Arc::new(|path: &Path, hash: &str| {
                Ok(Box::new(PseComparator { model: load_checkpoint(path, hash)? }) as Box<dyn PairwiseComparator>)
            }),
        );
        r.register(
            "fnn-lipt",
            Arc::new(|s: &ComparatorSettings| {
                if s.global_indices.is_empty() {
                    return invalid("fnn-lipt needs selected global features");
                }
                Ok(Box::new(FnnLiptComparator {
                    config: s.fnn.clone(),
                    global_indices: s.global_indices.clone(),
                    catalog_hash: s.catalog_hash.clone(),
                    model: None,
                }) as Box<dyn PairwiseComparator>)
            }),
            Arc::new(|path: &Path, hash: &str| {
                let file: FnnLiptFile = serde_json::from_slice(&std::fs::read(path)?)?;
                if file.catalog_hash != hash {
                    return Err(CoreError::CatalogMismatch { expected: hash.to_string(), found: file.catalog_hash });
                }
                let model = Fnn::from_json(&file.model)?;
                Ok(Box::new(FnnLiptComparator {
                    config: model.config.clone(),
                    global_indices: file.global_indices,
                    catalog_hash: file.catalog_hash,
                    model: Some(model),
                }) as Box<dyn PairwiseComparator>)
            }),
        );
        r
    }
}

impl ComparatorRegistry {
    pub fn register(&mut self, name: &str, create: Create, load: Load) {
        self.entries.insert(name.to_string(), Entry { create, load });
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| CoreError::UnknownStrategy {
            kind: "comparator",
            name: name.to_string(),
            available: self.names(),
        })
    }

    pub fn create(&self, name: &str, settings: &ComparatorSettings) -> Result<Box<dyn PairwiseComparator>> {
        (self.entry(name)?.create)(settings)
    }

    pub fn load(&self, name: &str, path: &Path, catalog_hash: &str) -> Result<Box<dyn PairwiseComparator>> {
        (self.entry(name)?.load)(path, catalog_hash)
    }
}
