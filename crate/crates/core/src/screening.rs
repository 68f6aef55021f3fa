//! Correlation analysis and t-test based feature screening.

use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{invalid, Result};
use crate::global::GlobalGroup;

/// Mean absolute Pearson correlation, `F × F`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Vec<f64>,
    pub n_features: usize,
    pub n_samples_averaged: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features + j]
    }
}

/// Averages `|corr(X_i)|` over samples, each a `T × F` matrix given as rows.
/// A zero-variance column contributes 0 to its off-diagonal entries for that
/// sample; the diagonal is 1.
pub fn mean_abs_correlation(samples: &[Vec<Vec<f64>>]) -> Result<CorrelationMatrix> {
    let Some(first) = samples.first() else {
        return invalid("correlation needs at least one sample");
    };
    let f = first.first().map_or(0, Vec::len);
    if f == 0 {
        return invalid("samples have no features");
    }
    let mut acc = vec![0.0; f * f];
    for (s, x) in samples.iter().enumerate() {
        if x.len() < 2 {
            return invalid(format!("sample {s} has fewer than 2 time points"));
        }
        if x.iter().any(|r| r.len() != f) {
            return invalid(format!("sample {s} has ragged rows"));
        }
        let t = x.len() as f64;
        let means: Vec<f64> = (0..f).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / t).collect();
        let centred: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect())
            .collect();
        let ss: Vec<f64> = (0..f).map(|c| centred.iter().map(|r| r[c] * r[c]).sum()).collect();
        for (c, v) in ss.iter().enumerate() {
            if *v <= 0.0 {
                log::debug!("sample {s}: column {c} has zero variance");
            }
        }
        for a in 0..f {
            for b in a + 1..f {
                if ss[a] <= 0.0 || ss[b] <= 0.0 {
                    continue;
                }
                let cov: f64 = centred.iter().map(|r| r[a] * r[b]).sum();
                let r = (cov / (ss[a] * ss[b]).sqrt()).abs().min(1.0);
                acc[a * f + b] += r;
                acc[b * f + a] += r;
            }
        }
    }
    let n = samples.len() as f64;
    for (i, v) in acc.iter_mut().enumerate() {
        *v = if i / f == i % f { 1.0 } else { *v / n };
    }
    Ok(CorrelationMatrix {
        values: acc,
        n_features: f,
        n_samples_averaged: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
    /// Zero variance with a nonzero mean difference: `t` is infinite and `p` is 0.
    pub degenerate: bool,
}

/// Two-sided p-value `I_x(dof/2, 1/2)` with `x = dof/(dof + t²)`.
pub fn student_t_p_value(t: f64, dof: f64) -> Result<f64> {
    if !t.is_finite() {
        return invalid("t statistic is not finite");
    }
    if !(dof >= 1.0) {
        return invalid(format!("degrees of freedom must be >= 1, got {dof}"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn finish(diff: f64, se2: f64, dof: f64) -> Result<TTestResult> {
    if se2 <= 0.0 {
        return Ok(if diff == 0.0 {
            TTestResult { t: 0.0, dof, p_two_sided: 1.0, degenerate: false }
        } else {
            TTestResult {
                t: f64::INFINITY.copysign(diff),
                dof,
                p_two_sided: 0.0,
                degenerate: true,
            }
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTestResult { t, dof, p_two_sided: student_t_p_value(t, dof)?, degenerate: false })
}

/// Pooled-variance two-sample t-test of `p_obs` against `n_obs`.
pub fn independent_t_test(p_obs: &[f64], n_obs: &[f64]) -> Result<TTestResult> {
    if p_obs.len() < 2 || n_obs.len() < 2 {
        return invalid("independent t-test needs at least 2 observations per group");
    }
    let (np, nn) = (p_obs.len() as f64, n_obs.len() as f64);
    let (mp, vp) = mean_var(p_obs);
    let (mn, vn) = mean_var(n_obs);
    let dof = np + nn - 2.0;
    let sp2 = ((np - 1.0) * vp + (nn - 1.0) * vn) / dof;
    finish(mp - mn, sp2 * (1.0 / np + 1.0 / nn), dof)
}

/// Paired t-test on `post − pre`.
pub fn paired_t_test(pre_obs: &[f64], post_obs: &[f64]) -> Result<TTestResult> {
    if pre_obs.len() != post_obs.len() {
        return invalid(format!("paired samples differ in length: {} vs {}", pre_obs.len(), post_obs.len()));
    }
    if pre_obs.len() < 2 {
        return invalid("paired t-test needs at least 2 pairs");
    }
    let d: Vec<f64> = post_obs.iter().zip(pre_obs).map(|(b, a)| b - a).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let ss: f64 = d.iter().map(|v| (v - mean).powi(2)).sum();
    finish(mean, ss / (n * (n - 1.0)), n - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTest {
    pub feature: usize,
    pub paired: TTestResult,
    pub independent: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTally {
    pub group: GlobalGroup,
    pub n_features: usize,
    pub n_paired: usize,
    pub n_independent: usize,
    pub pct_paired: f64,
    pub pct_independent: f64,
}

/// Set A holds paired-test hits, set B independent-test hits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSelection {
    pub alpha: f64,
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    pub tests: Vec<FeatureTest>,
    pub tallies: Vec<GroupTally>,
}

impl FeatureSelection {
    pub fn paired_set(&self) -> &[usize] {
        &self.set_a
    }

    pub fn independent_set(&self) -> &[usize] {
        &self.set_b
    }
}

/// Tests every column of row-aligned pre/post matrices (rows = patients).
/// `groups` labels columns for the per-group tallies.
pub fn select_hf_voice_sets(
    pre: &[Vec<f64>],
    post: &[Vec<f64>],
    alpha: f64,
    groups: &[GlobalGroup],
) -> Result<FeatureSelection> {
    if pre.len() != post.len() {
        return invalid(format!("pre has {} rows, post has {}", pre.len(), post.len()));
    }
    let f = groups.len();
    if pre.iter().chain(post).any(|r| r.len() != f) {
        return invalid(format!("every row must have {f} features"));
    }
    let mut tests = Vec::with_capacity(f);
    for c in 0..f {
        let a: Vec<f64> = pre.iter().map(|r| r[c]).collect();
        let b: Vec<f64> = post.iter().map(|r| r[c]).collect();
        tests.push(FeatureTest {
            feature: c,
            paired: paired_t_test(&a, &b)?,
            independent: independent_t_test(&a, &b)?,
        });
    }
    let set_a: Vec<usize> = tests.iter().filter(|t| t.paired.p_two_sided < alpha).map(|t| t.feature).collect();
    let set_b: Vec<usize> = tests
        .iter()
        .filter(|t| t.independent.p_two_sided < alpha)
        .map(|t| t.feature)
        .collect();
    let tallies = GlobalGroup::ALL
        .iter()
        .map(|&g| {
            let n_features = groups.iter().filter(|&&x| x == g).count();
            let n_paired = set_a.iter().filter(|&&c| groups[c] == g).count();
            let n_independent = set_b.iter().filter(|&&c| groups[c] == g).count();
            let pct = |k: usize| if n_features == 0 { 0.0 } else { 100.0 * k as f64 / n_features as f64 };
            GroupTally {
                group: g,
                n_features,
                n_paired,
                n_independent,
                pct_paired: pct(n_paired),
                pct_independent: pct(n_independent),
            }
        })
        .collect();
    Ok(FeatureSelection {
        alpha,
        set_a,
        set_b,
        tests,
        tallies,
    })
}
