//! Classification metrics and ROC analysis.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(preds: &[bool], labels: &[bool]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return invalid(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return invalid("no predictions");
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub macro_f1: f64,
    pub counts: ConfusionCounts,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> MetricReport {
    let mut flags = Vec::new();
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut flags);
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut flags);
    let sensitivity = ratio(c.tp, c.tp + c.fn_, "sensitivity", &mut flags);
    let specificity = ratio(c.tn, c.tn + c.fp, "specificity", &mut flags);
    let mut scratch = Vec::new();
    let neg_precision = ratio(c.tn, c.tn + c.fn_, "", &mut scratch);
    let macro_f1 = 0.5 * (f1(precision, sensitivity) + f1(neg_precision, specificity));
    MetricReport {
        accuracy,
        precision,
        sensitivity,
        specificity,
        macro_f1,
        counts: *c,
        degenerate: flags,
    }
}

/// Mean over both classes of the per-class F1.
pub fn macro_f1(preds: &[bool], labels: &[bool]) -> Result<f64> {
    Ok(classification_metrics(&confusion_counts(preds, labels)?).macro_f1)
}

pub fn evaluate(preds: &[bool], labels: &[bool]) -> Result<MetricReport> {
    Ok(classification_metrics(&confusion_counts(preds, labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Starts at (0, 0) with an infinite threshold and ends at (1, 1).
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Threshold sweep over the unique scores (score ≥ threshold ⇒ positive),
/// with the area by the trapezoid rule.
pub fn roc_auroc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return invalid(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return invalid("scores must be finite");
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("ROC needs both classes");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auroc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let thr = scores[order[k]];
        while k < order.len() && scores[order[k]] == thr {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let prev = points.last().unwrap();
        let (fpr, tpr) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auroc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
        points.push(RocPoint { threshold: thr, fpr, tpr });
    }
    Ok(RocCurve { points, auroc })
}
