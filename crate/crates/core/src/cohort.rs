//! Synthetic longitudinal cohorts with controllable between-patient
//! heterogeneity, emitted as frame maps and global vectors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{invalid, Result};
use crate::features::{FeatureCatalog, FrameFeatureMap, AUDSPEC_RASTA_L1, N_LLD, N_MEL, RASTA_FIRST};
use crate::global::{build_global_vector, GlobalSchema};
use crate::pse::{PatientTimeline, VisitRecord, VisitState};

pub const AR_COEF: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub visits_per_patient: usize,
    pub frames_per_visit: usize,
    /// Between-patient baseline stddev per channel.
    pub sigma_b: f64,
    /// AR(1) innovation stddev of the frame noise.
    pub sigma_w: f64,
    /// Condition effect along the unit direction `u`.
    pub delta: f64,
    /// Fraction of the 72 channels touched by `u`.
    pub rho_c: f64,
    pub rehospitalization_prob: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            visits_per_patient: 4,
            frames_per_visit: 32,
            sigma_b: 2.5,
            sigma_w: sigma_w_for_visit_noise(0.5, 32),
            delta: 1.0,
            rho_c: 0.05,
            rehospitalization_prob: 0.2,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return invalid("n_patients must be positive");
        }
        if self.visits_per_patient < 2 {
            return invalid("visits_per_patient must be at least 2");
        }
        if self.frames_per_visit == 0 {
            return invalid("frames_per_visit must be positive");
        }
        if !(self.sigma_b >= 0.0 && self.sigma_w >= 0.0) || !self.sigma_b.is_finite() || !self.sigma_w.is_finite() {
            return invalid("sigma_b and sigma_w must be finite and non-negative");
        }
        if !self.delta.is_finite() {
            return invalid("delta must be finite");
        }
        if !(self.rho_c > 0.0 && self.rho_c <= 1.0) {
            return invalid(format!("rho_c must be in (0, 1], got {}", self.rho_c));
        }
        if !(0.0..=1.0).contains(&self.rehospitalization_prob) {
            return invalid("rehospitalization_prob must be a probability");
        }
        Ok(())
    }

    /// Per-visit stddev of a channel's frame mean.
    pub fn visit_noise(&self) -> f64 {
        visit_noise(self.sigma_w, self.frames_per_visit)
    }
}

/// `Σ_{s,t} φ^|s−t|` over `t` frames.
fn ar_sum(frames: usize) -> f64 {
    let t = frames as f64;
    t + 2.0 * (1..frames).map(|k| (t - k as f64) * AR_COEF.powi(k as i32)).sum::<f64>()
}

/// `σ_v = sqrt(γ0/T² · Σ φ^|s−t|)` with `γ0 = σ_w²/(1−φ²)`.
pub fn visit_noise(sigma_w: f64, frames: usize) -> f64 {
    let gamma0 = sigma_w * sigma_w / (1.0 - AR_COEF * AR_COEF);
    (gamma0 * ar_sum(frames) / (frames * frames) as f64).sqrt()
}

/// Innovation stddev giving a per-visit noise of `sigma_v`.
pub fn sigma_w_for_visit_noise(sigma_v: f64, frames: usize) -> f64 {
    sigma_v * ((1.0 - AR_COEF * AR_COEF) * (frames * frames) as f64 / ar_sum(frames)).sqrt()
}

/// Channels ordered RASTA-first, so small `ρ_c` touches RASTA bands.
pub fn channel_order() -> Vec<usize> {
    let mut order = vec![AUDSPEC_RASTA_L1];
    order.extend(RASTA_FIRST..RASTA_FIRST + N_MEL);
    order.extend((0..N_LLD).filter(|c| !order.contains(c)).collect::<Vec<_>>());
    order
}

/// Unit-norm direction with equal weight on `⌈ρ_c·72⌉` channels.
pub fn effect_direction(rho_c: f64) -> (Vec<usize>, Vec<f64>) {
    let k = ((rho_c * N_LLD as f64).ceil() as usize).clamp(1, N_LLD);
    let chans: Vec<usize> = channel_order().into_iter().take(k).collect();
    let mut u = vec![0.0; N_LLD];
    for &c in &chans {
        u[c] = 1.0 / (k as f64).sqrt();
    }
    (chans, u)
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub config: CohortConfig,
    pub timelines: Vec<PatientTimeline>,
    /// Severity per patient per visit.
    pub severity: Vec<Vec<u8>>,
    pub affected_channels: Vec<usize>,
    pub direction: Vec<f64>,
    pub catalog_hash: String,
}

impl SyntheticCohort {
    /// Ground-truth `(i, j, worse_j)` for every pair with differing severity.
    pub fn direction_labels(&self) -> Vec<Vec<(usize, usize, bool)>> {
        self.timelines.iter().map(PatientTimeline::labeled_pairs).collect()
    }
}

fn severities(visits: usize, readmitted: bool) -> Vec<(u8, VisitState)> {
    (0..visits)
        .map(|k| match k {
            0 => (1, VisitState::Decompensated),
            1 => (0, VisitState::PostTreatment),
            k if k == visits - 1 && readmitted => (1, VisitState::Readmitted),
            _ => (0, VisitState::Stable),
        })
        .collect()
}

pub fn generate_cohort(cfg: &CohortConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let catalog = FeatureCatalog::default();
    let hash = catalog.hash();
    let schema = Arc::new(GlobalSchema::new(&catalog));
    let (affected, u) = effect_direction(cfg.rho_c);
    let gamma0_sd = cfg.sigma_w / (1.0 - AR_COEF * AR_COEF).sqrt();
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| crate::CoreError::Invalid(e.to_string()));
    let (base_d, init_d, innov_d) = (normal(cfg.sigma_b)?, normal(gamma0_sd)?, normal(cfg.sigma_w)?);
    let mut timelines = Vec::with_capacity(cfg.n_patients);
    let mut severity = Vec::with_capacity(cfg.n_patients);
    for n in 0..cfg.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(n as u64);
        let pid = format!("sim{n:04}");
        let baseline: Vec<f64> = (0..N_LLD).map(|_| base_d.sample(&mut rng)).collect();
        let readmitted = rng.random_bool(cfg.rehospitalization_prob);
        let plan = severities(cfg.visits_per_patient, readmitted);
        let mut t = 0.0;
        let mut visits = Vec::with_capacity(plan.len());
        for (k, &(s, state)) in plan.iter().enumerate() {
            if k == 1 {
                t += 7.0 + rng.random_range(0.0..3.0);
            } else if k > 1 {
                t += 30.0 + rng.random_range(0.0..10.0);
            }
            let mean: Vec<f64> = (0..N_LLD).map(|c| baseline[c] + cfg.delta * s as f64 * u[c]).collect();
            let mut e: Vec<f64> = (0..N_LLD).map(|_| init_d.sample(&mut rng)).collect();
            let mut values = Vec::with_capacity(cfg.frames_per_visit * N_LLD);
            for f in 0..cfg.frames_per_visit {
                if f > 0 {
                    for ec in e.iter_mut() {
                        *ec = AR_COEF * *ec + innov_d.sample(&mut rng);
                    }
                }
                values.extend(mean.iter().zip(&e).map(|(m, x)| m + x));
            }
            let map = FrameFeatureMap::new(values, hash.clone(), format!("{pid}_v{k}"))?;
            let global = build_global_vector(&map, &schema)?.values;
            visits.push(VisitRecord {
                patient_id: pid.clone(),
                timestamp: t,
                frame_map: map,
                global: Some(global),
                state: Some(state),
            });
        }
        severity.push(plan.iter().map(|p| p.0).collect());
        timelines.push(PatientTimeline::new(pid, visits)?);
    }
    Ok(SyntheticCohort {
        config: cfg.clone(),
        timelines,
        severity,
        affected_channels: affected,
        direction: u,
        catalog_hash: hash,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesReference {
    pub cross_sectional: f64,
    pub paired: f64,
    pub sigma_v: f64,
    /// `σ_v = 0`: the paired task is noise-free.
    pub degenerate: bool,
}

fn phi(x: f64) -> f64 {
    StdNormal::standard().cdf(x)
}

/// Bayes accuracies from the projection onto `u`, with
/// `σ_v` given directly.
pub fn bayes_accuracies(delta: f64, sigma_b: f64, sigma_v: f64) -> BayesReference {
    let d = delta.abs();
    let degenerate = sigma_v == 0.0;
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.5 } else if den == 0.0 { 1.0 } else { phi(num / den) };
    BayesReference {
        cross_sectional: ratio(d, 2.0 * (sigma_b * sigma_b + sigma_v * sigma_v).sqrt()),
        paired: ratio(d, std::f64::consts::SQRT_2 * sigma_v),
        sigma_v,
        degenerate,
    }
}

pub fn bayes_reference_accuracies(cfg: &CohortConfig) -> Result<BayesReference> {
    cfg.validate()?;
    let r = bayes_accuracies(cfg.delta, cfg.sigma_b, cfg.visit_noise());
    if r.degenerate {
        log::warn!("visit noise is zero; paired accuracy is trivially 1");
    }
    Ok(r)
}
