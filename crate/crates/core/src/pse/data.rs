use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::{FrameFeatureMap, N_LLD};

/// Clinical state of a visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitState {
    Decompensated,
    PostTreatment,
    Stable,
    Readmitted,
}

impl VisitState {
    pub const ALL: [VisitState; 4] = [
        VisitState::Decompensated,
        VisitState::PostTreatment,
        VisitState::Stable,
        VisitState::Readmitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VisitState::Decompensated => "decompensated",
            VisitState::PostTreatment => "post_treatment",
            VisitState::Stable => "stable",
            VisitState::Readmitted => "readmitted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// 1 for the decompensated states, 0 otherwise.
    pub fn severity(self) -> u8 {
        match self {
            VisitState::Decompensated | VisitState::Readmitted => 1,
            VisitState::PostTreatment | VisitState::Stable => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub patient_id: String,
    /// Days.
    pub timestamp: f64,
    pub frame_map: FrameFeatureMap,
    pub global: Option<Vec<f64>>,
    pub state: Option<VisitState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTimeline {
    pub patient_id: String,
    visits: Vec<VisitRecord>,
}

impl PatientTimeline {
    /// Sorts visits by timestamp; ties, foreign records and non-finite
    /// timestamps are rejected.
    pub fn new(patient_id: impl Into<String>, mut visits: Vec<VisitRecord>) -> Result<Self> {
        let patient_id = patient_id.into();
        if visits.is_empty() {
            return invalid(format!("patient {patient_id} has no visits"));
        }
        if let Some(v) = visits.iter().find(|v| v.patient_id != patient_id) {
            return invalid(format!("visit of {} in timeline of {patient_id}", v.patient_id));
        }
        if visits.iter().any(|v| !v.timestamp.is_finite()) {
            return invalid(format!("patient {patient_id} has a non-finite timestamp"));
        }
        visits.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        if visits.windows(2).any(|w| w[0].timestamp == w[1].timestamp) {
            return invalid(format!("patient {patient_id} has tied visit timestamps"));
        }
        Ok(Self { patient_id, visits })
    }

    pub fn visits(&self) -> &[VisitRecord] {
        &self.visits
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.visits.iter().map(|v| v.timestamp).collect()
    }

    /// Visit pairs `i < j` whose severities are both known and differ,
    /// with `true` when `j` is the worse visit.
    pub fn labeled_pairs(&self) -> Vec<(usize, usize, bool)> {
        let sev: Vec<Option<u8>> = self.visits.iter().map(|v| v.state.map(VisitState::severity)).collect();
        let mut out = Vec::new();
        for j in 1..sev.len() {
            for i in 0..j {
                if let (Some(a), Some(b)) = (sev[i], sev[j]) {
                    if a != b {
                        out.push((i, j, b > a));
                    }
                }
            }
        }
        out
    }
}

/// Linear resampling of the frame axis to `len` rows (endpoints aligned).
pub fn resample_rows(map: &FrameFeatureMap, len: usize) -> Result<Vec<Vec<f64>>> {
    let n = map.n_frames();
    if n == 0 {
        return invalid("frame map is empty");
    }
    if len == 0 {
        return invalid("target length must be positive");
    }
    Ok((0..len)
        .map(|r| {
            if n == 1 || len == 1 {
                return map.row(0).to_vec();
            }
            let pos = r as f64 * (n - 1) as f64 / (len - 1) as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            map.row(lo).iter().zip(map.row(hi)).map(|(a, b)| a + frac * (b - a)).collect()
        })
        .collect())
}

/// Columns with stddev below this are centred but not scaled.
pub const STD_GUARD: f64 = 1e-8;

/// Per-column mean/stddev fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for r in rows {
            if sum.is_empty() {
                sum = vec![0.0; r.len()];
                sq = vec![0.0; r.len()];
            } else if r.len() != sum.len() {
                return invalid("ragged rows in standardizer fit");
            }
            for (k, v) in r.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return invalid("standardizer needs at least one row");
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return invalid(format!("row has {} values, standardizer expects {}", row.len(), self.mean.len()));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / if *s < STD_GUARD { 1.0 } else { *s })
            .collect())
    }
}

/// Resamples to `len` rows, standardizes, and returns `(72, len)` channel-major data.
pub fn normalize_frame_map(map: &FrameFeatureMap, len: usize, norm: Option<&Standardizer>) -> Result<Vec<f64>> {
    let Some(norm) = norm else {
        return invalid("frame standardizer has not been fitted");
    };
    if norm.dim() != N_LLD {
        return invalid(format!("frame standardizer has {} columns", norm.dim()));
    }
    let rows = resample_rows(map, len)?;
    let mut out = vec![0.0; N_LLD * len];
    for (t, r) in rows.iter().enumerate() {
        for (c, v) in norm.apply(r)?.into_iter().enumerate() {
            out[c * len + t] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[Vec<f64>]) -> FrameFeatureMap {
        FrameFeatureMap::from_rows(rows, "h", "s").unwrap()
    }

    #[test]
    fn ramp_resampling_matches_interpolation() {
        let rows: Vec<Vec<f64>> = (0..16).map(|t| vec![t as f64 * 0.5; N_LLD]).collect();
        let m = map(&rows);
        let r = resample_rows(&m, 8).unwrap();
        for (k, row) in r.iter().enumerate() {
            let pos = k as f64 * 15.0 / 7.0;
            assert!((row[3] - 0.5 * pos).abs() < 1e-12);
        }
        assert_eq!(resample_rows(&m, 16).unwrap(), rows);
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let rows: Vec<Vec<f64>> = (0..5).map(|t| (0..N_LLD).map(|c| if c == 0 { 4.0 } else { (t * c) as f64 }).collect()).collect();
        let s = Standardizer::fit(rows.iter().map(Vec::as_slice)).unwrap();
        let out = normalize_frame_map(&map(&rows), 5, Some(&s)).unwrap();
        assert!(out[..5].iter().all(|v| *v == 0.0));
        assert!(normalize_frame_map(&map(&rows), 5, None).is_err());
    }

    #[test]
    fn state_severities() {
        assert_eq!(VisitState::parse("readmitted").unwrap().severity(), 1);
        assert_eq!(VisitState::Stable.severity(), 0);
        assert!(VisitState::parse("x").is_none());
    }
}
