//! On-disk dataset layout: CSV manifest, per-recording frame CSVs with JSON
//! sidecars, and a single global-feature CSV with a group index.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lipt_core::features::{FeatureCatalog, FrameFeatureMap};
use lipt_core::global::{GlobalGroup, GlobalSchema};
use lipt_core::pse::{PatientTimeline, VisitRecord, VisitState};
use serde::{Deserialize, Serialize};

use crate::Validation;

pub const GLOBALS_FILE: &str = "globals.csv";
pub const GROUPS_FILE: &str = "groups.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    A,
    U,
    I,
    Pg,
    Mm,
    Mlh,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Followup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub timestamp: f64,
    pub state: Option<VisitState>,
    pub task: TaskTag,
    /// Audio or frame-feature file, relative to the manifest directory.
    pub path: String,
    pub split: Split,
}

impl ManifestEntry {
    /// File stem of `path`.
    pub fn recording_id(&self) -> String {
        Path::new(&self.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

fn validation(msg: String) -> anyhow::Error {
    anyhow::Error::new(Validation(msg))
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let entries = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| validation(format!("manifest {}: {e}", path.display())))?;
        let m = Self { entries, base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default() };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Unique `(patient, task, timestamp)` and one split per patient.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if e.patient_id.is_empty() || e.path.is_empty() {
                return Err(validation("manifest rows need a patient id and a path".into()));
            }
            if !e.timestamp.is_finite() {
                return Err(validation(format!("patient {}: non-finite timestamp", e.patient_id)));
            }
            if !seen.insert((e.patient_id.as_str(), e.task, e.timestamp.to_bits())) {
                return Err(validation(format!(
                    "patient {}: two {:?} recordings at timestamp {}",
                    e.patient_id, e.task, e.timestamp
                )));
            }
            if !ids.insert(e.recording_id()) {
                return Err(validation(format!("recording id {} appears twice", e.recording_id())));
            }
            match split_of.insert(&e.patient_id, e.split) {
                Some(prev) if prev != e.split => {
                    return Err(validation(format!(
                        "patient {} appears in splits {prev:?} and {:?}",
                        e.patient_id, e.split
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    fn selected(&self, task: Option<TaskTag>, split: Option<Split>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| task.is_none_or(|t| t == e.task) && split.is_none_or(|s| s == e.split))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub recording_id: String,
    pub sample_rate: Option<u32>,
    pub catalog_hash: String,
    pub n_frames: usize,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_frame_csv(path: &Path, map: &FrameFeatureMap, catalog: &FeatureCatalog, sample_rate: Option<u32>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(catalog.names())?;
    for row in map.rows() {
        w.serialize(row)?;
    }
    w.flush()?;
    let side = FrameSidecar {
        recording_id: map.source_id().to_string(),
        sample_rate,
        catalog_hash: map.catalog_hash().to_string(),
        n_frames: map.n_frames(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn read_frame_csv(path: &Path, catalog: &FeatureCatalog) -> Result<FrameFeatureMap> {
    let side: FrameSidecar = serde_json::from_slice(
        &fs::read(sidecar_path(path)).with_context(|| format!("reading sidecar of {}", path.display()))?,
    )?;
    if side.catalog_hash != catalog.hash() {
        return Err(anyhow::Error::new(lipt_core::CoreError::CatalogMismatch {
            expected: catalog.hash(),
            found: side.catalog_hash,
        }))
        .with_context(|| path.display().to_string());
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != catalog.names() {
        return Err(validation(format!("{}: header does not match the feature catalog", path.display())));
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<Vec<f64>>, _>>()?;
    if rows.len() != side.n_frames {
        return Err(validation(format!("{}: {} frames, sidecar says {}", path.display(), rows.len(), side.n_frames)));
    }
    Ok(FrameFeatureMap::from_rows(&rows, side.catalog_hash, side.recording_id)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIndex {
    pub catalog_hash: String,
    pub features: Vec<GroupedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedFeature {
    pub name: String,
    pub group: String,
}

/// Writes `globals.csv`-style rows and the group index beside it.
pub fn write_globals(path: &Path, ids: &[String], rows: &[Vec<f64>], schema: &GlobalSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["recording_id".to_string()];
    header.extend(schema.names.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let index = GroupIndex {
        catalog_hash: schema.catalog_hash.clone(),
        features: schema
            .names
            .iter()
            .zip(&schema.groups)
            .map(|(n, g)| GroupedFeature { name: n.clone(), group: g.label().to_string() })
            .collect(),
    };
    fs::write(path.with_file_name(GROUPS_FILE), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

/// Rows keyed by recording id, in file order.
pub fn read_globals(path: &Path, schema: &GlobalSchema) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    if header != schema.names {
        return Err(validation(format!("{}: header does not match the global feature schema", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| validation(format!("{}: row {id}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        out.push((id, vals));
    }
    Ok(out)
}

pub fn group_of(label: &str) -> Option<GlobalGroup> {
    GlobalGroup::ALL.iter().copied().find(|g| g.label() == label)
}

/// Builds timelines from a feature manifest. Every visit must map to exactly
/// one recording after the task filter.
pub fn load_timelines(
    manifest: &Manifest,
    task: Option<TaskTag>,
    split: Option<Split>,
    catalog: &FeatureCatalog,
) -> Result<Vec<PatientTimeline>> {
    let schema = GlobalSchema::new(catalog);
    let globals_path = manifest.base_dir.join(GLOBALS_FILE);
    let globals: HashMap<String, Vec<f64>> =
        if globals_path.exists() { read_globals(&globals_path, &schema)?.into_iter().collect() } else { HashMap::new() };
    let mut by_patient: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.selected(task, split) {
        by_patient.entry(&e.patient_id).or_default().push(e);
    }
    let mut out = Vec::with_capacity(by_patient.len());
    for (pid, entries) in by_patient {
        let mut stamps = BTreeSet::new();
        for e in &entries {
            if !stamps.insert(e.timestamp.to_bits()) {
                return Err(validation(format!(
                    "patient {pid} has several recordings at timestamp {}; select one task",
                    e.timestamp
                )));
            }
        }
        let visits = entries
            .iter()
            .map(|e| {
                let map = read_frame_csv(&manifest.resolve(e), catalog)?;
                Ok(VisitRecord {
                    patient_id: pid.to_string(),
                    timestamp: e.timestamp,
                    frame_map: map,
                    global: globals.get(&e.recording_id()).cloned(),
                    state: e.state,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PatientTimeline::new(pid, visits)?);
    }
    if out.is_empty() {
        return Err(validation("no visits match the requested split and task".into()));
    }
    Ok(out)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| anyhow!("creating {}: {e}", dir.display()))
}

pub fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if !cond {
        bail!(Validation(msg.into()));
    }
    Ok(())
}
