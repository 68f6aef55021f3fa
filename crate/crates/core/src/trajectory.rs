//! Per-visit trajectories from pairwise outcomes: decay-weighted aggregation,
//! calibration against gold labels, and Bradley-Terry ranking.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub patient_id: String,
    pub i: usize,
    pub j: usize,
    pub y_hat: f64,
}

impl PairwiseOutcome {
    pub fn new(patient_id: impl Into<String>, i: usize, j: usize, y_hat: f64) -> Result<Self> {
        if i >= j {
            return invalid(format!("pair ({i}, {j}) must have i < j"));
        }
        if !y_hat.is_finite() {
            return invalid("pairwise outcome is not finite");
        }
        Ok(Self { patient_id: patient_id.into(), i, j, y_hat })
    }
}

/// `𝒢(s) = sigmoid(phi1·s + phi0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub phi1: f64,
    pub phi0: f64,
}

impl Default for Mapping {
    fn default() -> Self {
        Self { phi1: 1.0, phi0: 0.0 }
    }
}

impl Mapping {
    pub fn apply(&self, s: f64) -> f64 {
        sigmoid(self.phi1 * s + self.phi0)
    }
}

/// One patient's visit timestamps and pairwise outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcomes {
    pub patient_id: String,
    pub timestamps: Vec<f64>,
    pub outcomes: Vec<PairwiseOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEstimate {
    pub patient_id: String,
    /// Mapped score per visit; `None` for visits with no predecessor (visit 0).
    pub scores: Vec<Option<f64>>,
    /// Weighted outcome sum before the mapping head.
    pub raw: Vec<Option<f64>>,
    pub theta: f64,
    pub phi: Mapping,
}

/// Normalized weights `exp(−θ(t_j − t_i))` over the given predecessor times.
pub fn decay_weights(t_j: f64, predecessor_times: &[f64], theta: f64) -> Vec<f64> {
    let logits: Vec<f64> = predecessor_times.iter().map(|t| -theta * (t_j - t)).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

struct Target {
    j: usize,
    /// `(t_j − t_i, ŷ_ij)` per predecessor outcome.
    terms: Vec<(f64, f64)>,
}

fn targets(p: &PatientOutcomes) -> Result<Vec<Target>> {
    let n = p.timestamps.len();
    if p.timestamps.iter().any(|t| !t.is_finite()) {
        return invalid(format!("patient {}: timestamps must be finite", p.patient_id));
    }
    let mut by_j: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for o in &p.outcomes {
        if o.i >= o.j || o.j >= n {
            return invalid(format!("patient {}: pair ({}, {}) out of range for {n} visits", p.patient_id, o.i, o.j));
        }
        if !o.y_hat.is_finite() {
            return invalid(format!("patient {}: non-finite outcome", p.patient_id));
        }
        by_j.entry(o.j).or_default().push((p.timestamps[o.j] - p.timestamps[o.i], o.y_hat));
    }
    if let Some(j) = (1..n).find(|j| !by_j.contains_key(j)) {
        return invalid(format!("patient {}: visit {j} has no predecessor outcome", p.patient_id));
    }
    Ok(by_j.into_iter().map(|(j, terms)| Target { j, terms }).collect())
}

fn weighted(terms: &[(f64, f64)], theta: f64) -> (f64, f64) {
    let logits: Vec<f64> = terms.iter().map(|(d, _)| -theta * d).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = e.iter().sum();
    let s: f64 = e.iter().zip(terms).map(|(w, (_, y))| w * y).sum::<f64>() / z;
    let mean_d: f64 = e.iter().zip(terms).map(|(w, (d, _))| w * d).sum::<f64>() / z;
    let mean_yd: f64 = e.iter().zip(terms).map(|(w, (d, y))| w * d * y).sum::<f64>() / z;
    (s, -(mean_yd - s * mean_d))
}

pub fn aggregate_scores(p: &PatientOutcomes, theta: f64, phi: Mapping) -> Result<TrajectoryEstimate> {
    let n = p.timestamps.len();
    let mut raw = vec![None; n];
    let mut scores = vec![None; n];
    for t in targets(p)? {
        let (s, _) = weighted(&t.terms, theta);
        raw[t.j] = Some(s);
        scores[t.j] = Some(phi.apply(s));
    }
    Ok(TrajectoryEstimate {
        patient_id: p.patient_id.clone(),
        scores,
        raw,
        theta,
        phi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub patient_id: String,
    pub visit: usize,
    pub value: f64,
}

/// Divergence between a mapped score and a gold label.
pub trait CalibrationLoss: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, y_hat: f64, y: f64) -> f64;
    /// Derivative with respect to the pre-sigmoid logit.
    fn grad_logit(&self, y_hat: f64, y: f64) -> f64;
}

pub struct BceLoss;

impl CalibrationLoss for BceLoss {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn value(&self, y_hat: f64, y: f64) -> f64 {
        let p = y_hat.clamp(1e-12, 1.0 - 1e-12);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    fn grad_logit(&self, y_hat: f64, y: f64) -> f64 {
        y_hat - y
    }
}

pub struct MseLoss;

impl CalibrationLoss for MseLoss {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn value(&self, y_hat: f64, y: f64) -> f64 {
        (y_hat - y).powi(2)
    }

    fn grad_logit(&self, y_hat: f64, y: f64) -> f64 {
        2.0 * (y_hat - y) * y_hat * (1.0 - y_hat)
    }
}

#[derive(Clone)]
pub struct LossRegistry {
    losses: BTreeMap<String, Arc<dyn CalibrationLoss>>,
}

impl Default for LossRegistry {
    fn default() -> Self {
        let mut r = Self { losses: BTreeMap::new() };
        r.register(Arc::new(BceLoss));
        r.register(Arc::new(MseLoss));
        r
    }
}

impl LossRegistry {
    pub fn register(&mut self, loss: Arc<dyn CalibrationLoss>) {
        self.losses.insert(loss.name().to_string(), loss);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn CalibrationLoss>> {
        self.losses.get(name).cloned().ok_or_else(|| CoreError::UnknownStrategy {
            kind: "calibration loss",
            name: name.to_string(),
            available: self.names(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.losses.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub initial_theta: f64,
    pub initial_phi: Mapping,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Stop once an accepted step improves the loss by less than this.
    pub tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            initial_theta: 0.0,
            initial_phi: Mapping::default(),
            max_iters: 2000,
            initial_step: 1.0,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub theta: f64,
    pub phi: Mapping,
    pub loss: f64,
    /// Mean loss after every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
    /// All gold labels are equal, so the mapping head runs off to saturation.
    pub saturated: bool,
}

struct Labeled {
    terms: Vec<(f64, f64)>,
    y: f64,
}

fn eval(data: &[Labeled], theta: f64, phi: Mapping, loss: &dyn CalibrationLoss) -> (f64, [f64; 3]) {
    let n = data.len() as f64;
    let mut total = 0.0;
    let mut g = [0.0; 3];
    for d in data {
        let (s, ds_dtheta) = weighted(&d.terms, theta);
        let y_hat = phi.apply(s);
        total += loss.value(y_hat, d.y);
        let dz = loss.grad_logit(y_hat, d.y);
        g[0] += dz * phi.phi1 * ds_dtheta;
        g[1] += dz * s;
        g[2] += dz;
    }
    (total / n, g.map(|v| v / n))
}

/// Full-batch projected gradient descent over `(θ ≥ 0, φ1, φ0)` with
/// backtracking, so the recorded loss never increases.
pub fn fit_calibration(
    patients: &[PatientOutcomes],
    gold: &[GoldLabel],
    loss: &dyn CalibrationLoss,
    opts: &CalibrationOptions,
) -> Result<CalibrationFit> {
    let mut index: HashMap<&str, Vec<Target>> = HashMap::new();
    for p in patients {
        index.insert(p.patient_id.as_str(), targets(p)?);
    }
    let mut data = Vec::new();
    for g in gold {
        if !(0.0..=1.0).contains(&g.value) {
            return invalid(format!("gold label {} outside [0, 1]", g.value));
        }
        let Some(ts) = index.get(g.patient_id.as_str()) else {
            return invalid(format!("gold label for unknown patient {}", g.patient_id));
        };
        let Some(t) = ts.iter().find(|t| t.j == g.visit) else {
            return invalid(format!("patient {} visit {} has no aggregated score", g.patient_id, g.visit));
        };
        data.push(Labeled { terms: t.terms.clone(), y: g.value });
    }
    if data.len() < 2 {
        return invalid("calibration needs at least 2 labeled visits");
    }
    let saturated = data.iter().all(|d| d.y == data[0].y);
    if saturated {
        log::warn!("all gold labels equal {}; mapping head will saturate", data[0].y);
    }

    let mut theta = opts.initial_theta.max(0.0);
    let mut phi = opts.initial_phi;
    let (mut cur, mut grad) = eval(&data, theta, phi, loss);
    let mut history = vec![cur];
    let mut step = opts.initial_step;
    for _ in 0..opts.max_iters {
        let mut accepted = None;
        while step > 1e-14 {
            let cand_theta = (theta - step * grad[0]).max(0.0);
            let cand_phi = Mapping { phi1: phi.phi1 - step * grad[1], phi0: phi.phi0 - step * grad[2] };
            let (l, g) = eval(&data, cand_theta, cand_phi, loss);
            if l.is_finite() && l <= cur {
                accepted = Some((cand_theta, cand_phi, l, g));
                break;
            }
            step *= 0.5;
        }
        let Some((t, p, l, g)) = accepted else { break };
        let gain = cur - l;
        theta = t;
        phi = p;
        cur = l;
        grad = g;
        history.push(cur);
        step *= 2.0;
        if gain < opts.tolerance {
            break;
        }
    }
    Ok(CalibrationFit {
        theta,
        phi,
        loss: cur,
        history,
        saturated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankResult {
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RankResult {
    /// `π_k / (π_k + π_l)`.
    pub fn win_probability(&self, k: usize, l: usize) -> f64 {
        self.strengths[k] / (self.strengths[k] + self.strengths[l])
    }
}

pub const BT_TOLERANCE: f64 = 1e-10;
pub const BT_MAX_ITERS: usize = 10_000;

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// MM iterations for the Bradley-Terry MLE. `wins[k][l]` counts k beating l.
pub fn bradley_terry_strengths(wins: &[Vec<f64>]) -> Result<RankResult> {
    let k = wins.len();
    if k == 0 {
        return invalid("empty win matrix");
    }
    for (a, row) in wins.iter().enumerate() {
        if row.len() != k {
            return invalid("win matrix must be square");
        }
        if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("win counts must be finite and non-negative");
        }
        if row[a] != 0.0 {
            return invalid(format!("item {a} has nonzero self-comparisons"));
        }
    }
    if k == 1 {
        return Ok(RankResult { strengths: vec![1.0], iterations: 0, converged: true });
    }
    let mut undirected = vec![Vec::new(); k];
    let mut beats = vec![Vec::new(); k];
    let mut beaten_by = vec![Vec::new(); k];
    for a in 0..k {
        for b in 0..k {
            if wins[a][b] + wins[b][a] > 0.0 {
                undirected[a].push(b);
            }
            if wins[a][b] > 0.0 {
                beats[a].push(b);
                beaten_by[b].push(a);
            }
        }
    }
    let mut comp = vec![usize::MAX; k];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for s in 0..k {
        if comp[s] == usize::MAX {
            let members: Vec<usize> = reach(&undirected, s).iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i).collect();
            for &m in &members {
                comp[m] = components.len();
            }
            components.push(members);
        }
    }
    if components.len() > 1 {
        return Err(CoreError::Disconnected(components));
    }
    let fwd = reach(&beats, 0);
    let bwd = reach(&beaten_by, 0);
    if let Some(bad) = (0..k).find(|&v| !fwd[v] || !bwd[v]) {
        return Err(CoreError::NoFiniteMle(format!(
            "win graph is not strongly connected (item {bad} is not mutually reachable with item 0)"
        )));
    }

    let total_wins: Vec<f64> = wins.iter().map(|r| r.iter().sum()).collect();
    let mut pi = vec![1.0; k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < BT_MAX_ITERS {
        iterations += 1;
        let mut next: Vec<f64> = (0..k)
            .map(|a| {
                let den: f64 = (0..k)
                    .filter(|&b| b != a)
                    .map(|b| (wins[a][b] + wins[b][a]) / (pi[a] + pi[b]))
                    .sum();
                total_wins[a] / den
            })
            .collect();
        let mean_log = next.iter().map(|v| v.ln()).sum::<f64>() / k as f64;
        next.iter_mut().for_each(|v| *v /= mean_log.exp());
        let change = next.iter().zip(&pi).map(|(n, o)| ((n - o) / o).abs()).fold(0.0, f64::max);
        pi = next;
        if change < BT_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Bradley-Terry did not converge within {BT_MAX_ITERS} iterations");
    }
    Ok(RankResult { strengths: pi, iterations, converged })
}

/// Win matrix over visits: an outcome ≥ 0.5 is a win for visit `j`
/// (deterioration by `j`). With `soft`, `j` gets `ŷ` and `i` gets `1 − ŷ`.
pub fn win_matrix(outcomes: &[PairwiseOutcome], n_visits: usize, soft: bool) -> Result<Vec<Vec<f64>>> {
    let mut w = vec![vec![0.0; n_visits]; n_visits];
    for o in outcomes {
        if o.i >= o.j || o.j >= n_visits {
            return invalid(format!("pair ({}, {}) out of range for {n_visits} visits", o.i, o.j));
        }
        if soft {
            let y = o.y_hat.clamp(0.0, 1.0);
            w[o.j][o.i] += y;
            w[o.i][o.j] += 1.0 - y;
        } else if o.y_hat >= 0.5 {
            w[o.j][o.i] += 1.0;
        } else {
            w[o.i][o.j] += 1.0;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(ts: &[f64], outs: &[(usize, usize, f64)]) -> PatientOutcomes {
        PatientOutcomes {
            patient_id: "p".into(),
            timestamps: ts.to_vec(),
            outcomes: outs.iter().map(|&(i, j, y)| PairwiseOutcome::new("p", i, j, y).unwrap()).collect(),
        }
    }

    #[test]
    fn single_predecessor_ignores_theta() {
        let p = patient(&[0.0, 5.0], &[(0, 1, 0.8)]);
        let phi = Mapping { phi1: 2.0, phi0: -1.0 };
        for theta in [0.0, 0.3, 50.0] {
            let e = aggregate_scores(&p, theta, phi).unwrap();
            assert_eq!(e.scores[0], None);
            assert_eq!(e.scores[1], Some(phi.apply(0.8)));
        }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = patient(&[0.0, 1.0, 7.0], &[(0, 1, 0.2), (0, 2, 0.9), (1, 2, 0.4)]);
        let e = aggregate_scores(&p, 0.0, Mapping::default()).unwrap();
        assert!((e.raw[2].unwrap() - 0.65).abs() < 1e-15);
    }

    #[test]
    fn missing_predecessor_is_an_error() {
        let p = patient(&[0.0, 1.0, 2.0], &[(0, 1, 0.2)]);
        assert!(aggregate_scores(&p, 0.0, Mapping::default()).is_err());
        assert!(PairwiseOutcome::new("p", 2, 1, 0.5).is_err());
    }

    #[test]
    fn theta_gradient_matches_finite_difference() {
        let terms = vec![(1.0, 0.2), (3.0, 0.9), (4.5, 0.4)];
        let h = 1e-6;
        for theta in [0.0, 0.4, 2.0] {
            let (_, g) = weighted(&terms, theta);
            let fd = (weighted(&terms, theta + h).0 - weighted(&terms, theta - h).0) / (2.0 * h);
            assert!((g - fd).abs() < 1e-8, "{g} vs {fd}");
        }
    }

    #[test]
    fn loss_registry_lookup() {
        let r = LossRegistry::default();
        assert_eq!(r.names(), vec!["bce", "mse"]);
        assert!(matches!(r.get("hinge"), Err(CoreError::UnknownStrategy { .. })));
    }

    #[test]
    fn bt_rejects_bad_input() {
        assert!(bradley_terry_strengths(&[vec![1.0]]).is_err());
        let one_sided = vec![vec![0.0, 3.0], vec![0.0, 0.0]];
        assert!(matches!(bradley_terry_strengths(&one_sided), Err(CoreError::NoFiniteMle(_))));
        let split = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 2.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        match bradley_terry_strengths(&split) {
            Err(CoreError::Disconnected(c)) => assert_eq!(c, vec![vec![0, 1], vec![2, 3]]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hard_and_soft_wins() {
        let o = [PairwiseOutcome::new("p", 0, 1, 0.7).unwrap()];
        assert_eq!(win_matrix(&o, 2, false).unwrap(), vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let s = win_matrix(&o, 2, true).unwrap();
        assert!((s[1][0] - 0.7).abs() < 1e-15 && (s[0][1] - 0.3).abs() < 1e-15);
    }
}
