use super::catalog::N_LLD;
use crate::error::{invalid, Result};

/// `n_frames × 72` descriptor matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMap {
    values: Vec<f64>,
    catalog_hash: String,
    source_id: String,
}

impl FrameFeatureMap {
    pub fn new(values: Vec<f64>, catalog_hash: impl Into<String>, source_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(N_LLD) {
            return invalid(format!("frame map needs a positive multiple of {N_LLD} values, got {}", values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "non-finite value at frame {} column {}",
                i / N_LLD,
                i % N_LLD
            ));
        }
        Ok(Self {
            values,
            catalog_hash: catalog_hash.into(),
            source_id: source_id.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], catalog_hash: impl Into<String>, source_id: impl Into<String>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != N_LLD) {
            return invalid(format!("frame row has {} columns, expected {N_LLD}", r.len()));
        }
        Self::new(rows.concat(), catalog_hash, source_id)
    }

    pub fn n_frames(&self) -> usize {
        self.values.len() / N_LLD
    }

    pub fn n_cols(&self) -> usize {
        N_LLD
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_LLD..(t + 1) * N_LLD]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(N_LLD)
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * N_LLD + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    pub fn catalog_hash(&self) -> &str {
        &self.catalog_hash
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}
