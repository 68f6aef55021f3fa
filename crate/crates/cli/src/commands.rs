//! Subcommand implementations. Each writes its outputs and the resolved
//! configuration into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lipt_core::benchmark::{run_benchmark, screen_timelines, subject_split, BenchmarkOptions};
use lipt_core::cohort::{bayes_reference_accuracies, generate_cohort};
use lipt_core::comparator::{
    evaluate_comparator, ComparatorRegistry, ComparatorSettings, PairwiseComparator, PseComparator,
};
use lipt_core::features::{ExtractorRegistry, FeatureCatalog};
use lipt_core::global::{build_global_vector, GlobalSchema};
use lipt_core::metrics::{evaluate, roc_auroc, MetricReport};
use lipt_core::pse::{
    load_checkpoint, pretrain_reconstruction, save_checkpoint, train_pairwise_classifier, PairEvaluation,
    PatientTimeline, PseModel,
};
use lipt_core::screening::{select_hf_voice_sets, FeatureSelection};
use lipt_core::signal::load_waveform;
use lipt_core::trajectory::{
    aggregate_scores, bradley_terry_strengths, fit_calibration, win_matrix, CalibrationOptions, GoldLabel,
    LossRegistry, PairwiseOutcome, PatientOutcomes,
};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::config::RunConfig;
use crate::plot;
use crate::store::{
    ensure_dir, load_timelines, read_globals, require, write_frame_csv, write_globals, Manifest, ManifestEntry, Split,
    TaskTag, GLOBALS_FILE, MANIFEST_FILE,
};

pub struct RunContext {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub workers: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn manifest_path(explicit: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| crate::Validation("a manifest is required (--manifest or paths.manifest)".into()).into())
}

fn begin(ctx: &RunContext) -> Result<()> {
    ensure_dir(&ctx.out)?;
    ctx.cfg.write_resolved(&ctx.out)
}

#[derive(Serialize)]
struct ExtractionLogRow {
    recording_id: String,
    status: &'static str,
    frame: Option<usize>,
    column: Option<usize>,
    detail: String,
}

type Extracted = (ManifestEntry, Vec<f64>, Vec<ExtractionLogRow>);

pub fn extract(ctx: &RunContext, manifest: Option<&Path>) -> Result<()> {
    let manifest = Manifest::read(&manifest_path(manifest, &ctx.cfg)?)?;
    begin(ctx)?;
    let frames_dir = ctx.out.join("frames");
    ensure_dir(&frames_dir)?;
    let catalog = FeatureCatalog::default();
    let schema = Arc::new(GlobalSchema::new(&catalog));
    let registry = ExtractorRegistry::with_defaults();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(ctx.workers.max(1)).build()?;
    let results: Vec<Result<Extracted>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let id = e.recording_id();
                let w = load_waveform(&manifest.resolve(e), None)?;
                let (map, flags) = registry.extract_with_flags(&w, &catalog, &id)?;
                let global = build_global_vector(&map, &schema)?.values;
                let rel = format!("frames/{id}.csv");
                write_frame_csv(&ctx.out.join(&rel), &map, &catalog, Some(w.sample_rate()))?;
                let log = flags
                    .into_iter()
                    .map(|f| ExtractionLogRow {
                        recording_id: id.clone(),
                        status: "degenerate",
                        frame: Some(f.frame),
                        column: Some(f.column),
                        detail: catalog.entries()[f.column].name.clone(),
                    })
                    .collect();
                Ok((ManifestEntry { path: rel, ..e.clone() }, global, log))
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut log = csv::Writer::from_path(ctx.out.join("extraction_log.csv"))?;
    let mut failures = 0;
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok((entry, global, flags)) => {
                for f in flags {
                    log.serialize(f)?;
                }
                ids.push(entry.recording_id());
                entries.push(entry);
                rows.push(global);
            }
            Err(err) => {
                failures += 1;
                log::error!("{}: {err:#}", e.path);
                log.serialize(ExtractionLogRow {
                    recording_id: e.recording_id(),
                    status: "failed",
                    frame: None,
                    column: None,
                    detail: format!("{err:#}"),
                })?;
            }
        }
    }
    log.flush()?;
    Manifest { entries, base_dir: ctx.out.clone() }.write(&ctx.out.join(MANIFEST_FILE))?;
    write_globals(&ctx.out.join(GLOBALS_FILE), &ids, &rows, &schema)?;
    fs::write(ctx.out.join("catalog_hash.txt"), catalog.hash() + "\n")?;
    if failures > 0 {
        anyhow::bail!("{failures} of {} recordings failed; see extraction_log.csv", manifest.entries.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectionRow {
    feature: String,
    group: &'static str,
    t_paired: f64,
    p_paired: f64,
    t_indep: f64,
    p_indep: f64,
    in_a: bool,
    in_b: bool,
}

#[derive(Serialize)]
struct SelectionSummary<'a> {
    alpha: f64,
    set_a: Vec<&'a str>,
    set_b: Vec<&'a str>,
    set_a_indices: &'a [usize],
    set_b_indices: &'a [usize],
}

fn write_selection(dir: &Path, sel: &FeatureSelection, schema: &GlobalSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("selection.csv"))?;
    for t in &sel.tests {
        w.serialize(SelectionRow {
            feature: schema.names[t.feature].clone(),
            group: schema.groups[t.feature].label(),
            t_paired: t.paired.t,
            p_paired: t.paired.p_two_sided,
            t_indep: t.independent.t,
            p_indep: t.independent.p_two_sided,
            in_a: sel.set_a.binary_search(&t.feature).is_ok(),
            in_b: sel.set_b.binary_search(&t.feature).is_ok(),
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("tallies.csv"))?;
    w.write_record(["group", "n_features", "n_paired", "n_independent", "pct_paired", "pct_independent"])?;
    for t in &sel.tallies {
        w.write_record([
            t.group.label().to_string(),
            t.n_features.to_string(),
            t.n_paired.to_string(),
            t.n_independent.to_string(),
            t.pct_paired.to_string(),
            t.pct_independent.to_string(),
        ])?;
    }
    w.flush()?;
    let labels: Vec<String> = sel.tallies.iter().map(|t| t.group.label().to_string()).collect();
    let pct: Vec<f64> = sel.tallies.iter().map(|t| t.pct_paired).collect();
    fs::write(dir.join("tallies.svg"), plot::bar_chart("Paired-test hits per group (%)", &labels, &pct, "percent"))?;
    let name = |k: &usize| schema.names[*k].as_str();
    write_json(
        &dir.join("selection.json"),
        &SelectionSummary {
            alpha: sel.alpha,
            set_a: sel.set_a.iter().map(name).collect(),
            set_b: sel.set_b.iter().map(name).collect(),
            set_a_indices: &sel.set_a,
            set_b_indices: &sel.set_b,
        },
    )
}

/// Screens row-aligned pre/post global CSVs, or admission against discharge
/// visits of the manifest's training split.
pub fn screen(ctx: &RunContext, pre: Option<&Path>, post: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    let catalog = FeatureCatalog::default();
    let schema = GlobalSchema::new(&catalog);
    let pre = pre.map(Path::to_path_buf).or_else(|| ctx.cfg.paths.pre.clone());
    let post = post.map(Path::to_path_buf).or_else(|| ctx.cfg.paths.post.clone());
    let sel = match (pre, post) {
        (Some(pre), Some(post)) => {
            let a = read_globals(&pre, &schema)?;
            let b = read_globals(&post, &schema)?;
            require(
                a.len() == b.len(),
                format!("pre has {} rows but post has {}; rows must be aligned", a.len(), b.len()),
            )?;
            begin(ctx)?;
            let a: Vec<Vec<f64>> = a.into_iter().map(|r| r.1).collect();
            let b: Vec<Vec<f64>> = b.into_iter().map(|r| r.1).collect();
            select_hf_voice_sets(&a, &b, ctx.cfg.alpha, &schema.groups)?
        }
        (None, None) => {
            let m = Manifest::read(&manifest_path(manifest, &ctx.cfg)?)?;
            let train = load_timelines(&m, ctx.cfg.task, Some(Split::Train), &catalog)?;
            begin(ctx)?;
            screen_timelines(&train, ctx.cfg.alpha)?
        }
        _ => return Err(crate::Validation("--pre and --post must be given together".into()).into()),
    };
    write_selection(&ctx.out, &sel, &schema)
}

fn global_indices(ctx: &RunContext, train: &[PatientTimeline], needed: bool) -> Result<Vec<usize>> {
    if !needed {
        return Ok(Vec::new());
    }
    let sel = screen_timelines(train, ctx.cfg.alpha)?;
    write_selection(&ctx.out, &sel, &GlobalSchema::new(&FeatureCatalog::default()))?;
    require(!sel.set_a.is_empty(), format!("no global feature passed screening at alpha {}", ctx.cfg.alpha))?;
    Ok(sel.set_a)
}

fn needs_globals(cfg: &RunConfig) -> bool {
    cfg.comparator != "pse" || cfg.pse.merge_mode.uses_globals()
}

pub fn pretrain(ctx: &RunContext, manifest: Option<&Path>) -> Result<()> {
    let catalog = FeatureCatalog::default();
    let m = Manifest::read(&manifest_path(manifest, &ctx.cfg)?)?;
    let train = load_timelines(&m, ctx.cfg.task, Some(Split::Train), &catalog)?;
    begin(ctx)?;
    let idx = global_indices(ctx, &train, ctx.cfg.pse.merge_mode.uses_globals())?;
    let mut model = PseModel::new(ctx.cfg.pse.clone(), catalog.hash(), idx)?;
    model.fit_normalizers(&train)?;
    let data = train.iter().map(|t| model.prepare(t)).collect::<lipt_core::Result<Vec<_>>>()?;
    let curve = pretrain_reconstruction(&mut model, &data)?;
    let mut w = csv::Writer::from_path(ctx.out.join("pretrain_loss.csv"))?;
    for e in &curve {
        w.serialize(e)?;
    }
    w.flush()?;
    save_checkpoint(&model, &ctx.out.join("pretrained.ckpt"))?;
    Ok(())
}

#[derive(Serialize)]
struct PairRow {
    id: String,
    score: f64,
}

#[derive(Serialize)]
struct LabelRow {
    id: String,
    label: u8,
}

/// Both allocations of every pair as scored binary decisions.
fn flatten(eval: &PairEvaluation) -> (Vec<String>, Vec<f64>, Vec<bool>) {
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for p in &eval.predictions {
        ids.push(format!("{}:{}:{}", p.patient_id, p.i, p.j));
        scores.push(p.y_forward);
        labels.push(p.worse_j);
        ids.push(format!("{}:{}:{}", p.patient_id, p.j, p.i));
        scores.push(p.y_reverse);
        labels.push(!p.worse_j);
    }
    (ids, scores, labels)
}

#[derive(Serialize)]
struct RepeatReport {
    seed: u64,
    train_accuracy: f64,
    test: MetricReport,
    test_auroc: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    mean: f64,
    std: f64,
}

fn summary(v: &[f64]) -> Summary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Summary { mean, std: var.sqrt() }
}

#[derive(Serialize)]
struct TrainReport {
    comparator: String,
    n_train_patients: usize,
    n_test_patients: usize,
    n_selected_globals: usize,
    repeats: Vec<RepeatReport>,
    test_accuracy: Summary,
    test_macro_f1: Summary,
    train_accuracy: Summary,
}

#[derive(Serialize)]
struct EpochRow<'a> {
    seed: u64,
    phase: &'a str,
    epoch: u64,
    loss: f64,
}

fn epoch_rows(seed: u64, report: &serde_json::Value) -> Vec<EpochRow<'_>> {
    let mut rows = Vec::new();
    if let Some(obj) = report.as_object() {
        for (phase, v) in obj {
            for e in v.as_array().into_iter().flatten() {
                if let (Some(epoch), Some(loss)) = (e["epoch"].as_u64(), e["loss"].as_f64()) {
                    rows.push(EpochRow { seed, phase, epoch, loss });
                }
            }
        }
    }
    rows
}

fn build_comparator(
    ctx: &RunContext,
    registry: &ComparatorRegistry,
    settings: &ComparatorSettings,
    pretrained: Option<&Path>,
    train: &[PatientTimeline],
) -> Result<(Box<dyn PairwiseComparator>, serde_json::Value)> {
    match pretrained {
        Some(path) => {
            require(ctx.cfg.comparator == "pse", "--pretrained applies to the pse comparator only")?;
            let mut model = load_checkpoint(path, &settings.catalog_hash)?;
            let c = &settings.pse;
            model.config.seed = c.seed;
            model.config.epochs = c.epochs;
            model.config.lr = c.lr;
            model.config.batch_size = c.batch_size;
            model.config.cls_kl_weight = c.cls_kl_weight;
            let data = train.iter().map(|t| model.prepare(t)).collect::<lipt_core::Result<Vec<_>>>()?;
            let curve = train_pairwise_classifier(&mut model, &data)?;
            Ok((Box::new(PseComparator { model }), serde_json::json!({ "classifier": curve })))
        }
        None => {
            let mut c = registry.create(&ctx.cfg.comparator, settings)?;
            let report = c.fit(train)?;
            Ok((c, report))
        }
    }
}

/// Fits the comparator on the training split over the configured repeats and
/// reports test metrics; the first repeat's model and predictions are kept.
pub fn train(ctx: &RunContext, manifest: Option<&Path>, pretrained: Option<&Path>) -> Result<()> {
    let catalog = FeatureCatalog::default();
    let registry = ComparatorRegistry::default();
    let m = Manifest::read(&manifest_path(manifest, &ctx.cfg)?)?;
    let train = load_timelines(&m, ctx.cfg.task, Some(Split::Train), &catalog)?;
    let test = load_timelines(&m, ctx.cfg.task, Some(Split::Test), &catalog)?;
    require(
        registry.names().contains(&ctx.cfg.comparator),
        format!("unknown comparator `{}`; available: {:?}", ctx.cfg.comparator, registry.names()),
    )?;
    begin(ctx)?;
    let idx = global_indices(ctx, &train, needs_globals(&ctx.cfg) && pretrained.is_none())?;
    let mut repeats = Vec::new();
    let mut epochs = csv::Writer::from_path(ctx.out.join("epochs.csv"))?;
    let mut reports = Vec::new();
    for k in 0..ctx.cfg.repeats {
        let seed = ctx.cfg.seed + k as u64;
        let settings = ComparatorSettings {
            pse: lipt_core::pse::PseConfig { seed, ..ctx.cfg.pse.clone() },
            fnn: lipt_core::fnn::FnnConfig { seed, ..ctx.cfg.fnn.clone() },
            catalog_hash: catalog.hash(),
            global_indices: idx.clone(),
        };
        let (comparator, report) = build_comparator(ctx, &registry, &settings, pretrained, &train)?;
        for row in epoch_rows(seed, &report) {
            epochs.serialize(row)?;
        }
        reports.push(report);
        let train_eval = evaluate_comparator(comparator.as_ref(), &train)?;
        let test_eval = evaluate_comparator(comparator.as_ref(), &test)?;
        let (ids, scores, labels) = flatten(&test_eval);
        let preds: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
        let auroc = roc_auroc(&scores, &labels).ok().map(|r| r.auroc);
        log::info!("seed {seed}: train {:.3}, test {:.3}", train_eval.accuracy, test_eval.accuracy);
        if k == 0 {
            comparator.save(&ctx.out.join("model.ckpt"))?;
            let mut p = csv::Writer::from_path(ctx.out.join("predictions.csv"))?;
            let mut l = csv::Writer::from_path(ctx.out.join("labels.csv"))?;
            for ((id, s), y) in ids.iter().zip(&scores).zip(&labels) {
                p.serialize(PairRow { id: id.clone(), score: *s })?;
                l.serialize(LabelRow { id: id.clone(), label: *y as u8 })?;
            }
            p.flush()?;
            l.flush()?;
        }
        repeats.push(RepeatReport {
            seed,
            train_accuracy: train_eval.accuracy,
            test: evaluate(&preds, &labels)?,
            test_auroc: auroc,
        });
    }
    epochs.flush()?;
    write_json(&ctx.out.join("training_report.json"), &reports)?;
    let report = TrainReport {
        comparator: ctx.cfg.comparator.clone(),
        n_train_patients: train.len(),
        n_test_patients: test.len(),
        n_selected_globals: idx.len(),
        test_accuracy: summary(&repeats.iter().map(|r| r.test.accuracy).collect::<Vec<_>>()),
        test_macro_f1: summary(&repeats.iter().map(|r| r.test.macro_f1).collect::<Vec<_>>()),
        train_accuracy: summary(&repeats.iter().map(|r| r.train_accuracy).collect::<Vec<_>>()),
        repeats,
    };
    write_json(&ctx.out.join("metrics.json"), &report)
}

#[derive(Serialize)]
struct OutcomeRow<'a> {
    patient: &'a str,
    i: usize,
    j: usize,
    t_i: f64,
    t_j: f64,
    y_hat: f64,
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    patient: &'a str,
    visit: usize,
    timestamp: f64,
    score: Option<f64>,
    gold: Option<u8>,
}

#[derive(Serialize)]
struct RankRow<'a> {
    patient: &'a str,
    visit: usize,
    strength: Option<f64>,
    status: String,
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Scores every visit pair, aggregates per-visit trajectories and ranks
/// visits.
pub fn track(ctx: &RunContext, manifest: Option<&Path>, checkpoint: Option<&Path>, split: Option<Split>) -> Result<()> {
    let catalog = FeatureCatalog::default();
    let m = Manifest::read(&manifest_path(manifest, &ctx.cfg)?)?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.paths.checkpoint.clone())
        .ok_or_else(|| crate::Validation("a checkpoint is required (--checkpoint or paths.checkpoint)".into()))?;
    let timelines = load_timelines(&m, ctx.cfg.task, split, &catalog)?;
    let comparator = ComparatorRegistry::default().load(&ctx.cfg.comparator, &ckpt, &catalog.hash())?;
    let losses = LossRegistry::default();
    let loss = losses.get(&ctx.cfg.trajectory.loss)?;
    begin(ctx)?;
    let plots = ctx.out.join("plots");
    ensure_dir(&plots)?;

    let mut patients = Vec::new();
    let mut skipped = Vec::new();
    for tl in &timelines {
        if tl.len() < 2 {
            log::warn!("patient {} has a single visit; no pairs to score", tl.patient_id);
            skipped.push(tl.patient_id.clone());
            continue;
        }
        let pairs: Vec<(usize, usize)> = (0..tl.len()).flat_map(|i| (i + 1..tl.len()).map(move |j| (i, j))).collect();
        let scores = comparator.pair_scores(tl, &pairs)?;
        let outcomes = pairs
            .iter()
            .zip(&scores)
            .map(|(&(i, j), &(f, _))| PairwiseOutcome::new(tl.patient_id.clone(), i, j, f))
            .collect::<lipt_core::Result<Vec<_>>>()?;
        patients.push((tl, PatientOutcomes { patient_id: tl.patient_id.clone(), timestamps: tl.timestamps(), outcomes }));
    }

    let mut theta = ctx.cfg.trajectory.theta;
    let mut phi = ctx.cfg.mapping();
    if ctx.cfg.trajectory.calibrate {
        let gold: Vec<GoldLabel> = patients
            .iter()
            .flat_map(|(tl, _)| {
                tl.visits().iter().enumerate().skip(1).filter_map(|(k, v)| {
                    v.state.map(|s| GoldLabel { patient_id: tl.patient_id.clone(), visit: k, value: s.severity() as f64 })
                })
            })
            .collect();
        let all: Vec<PatientOutcomes> = patients.iter().map(|p| p.1.clone()).collect();
        let opts = CalibrationOptions { initial_theta: theta, initial_phi: phi, ..CalibrationOptions::default() };
        let fit = fit_calibration(&all, &gold, loss.as_ref(), &opts)?;
        theta = fit.theta;
        phi = fit.phi;
        write_json(&ctx.out.join("calibration.json"), &fit)?;
    }

    let mut ow = csv::Writer::from_path(ctx.out.join("outcomes.csv"))?;
    let mut tw = csv::Writer::from_path(ctx.out.join("trajectory.csv"))?;
    let mut rw = ctx.cfg.trajectory.rank.then(|| csv::Writer::from_path(ctx.out.join("ranking.csv"))).transpose()?;
    for (tl, po) in &patients {
        let ts = &po.timestamps;
        for o in &po.outcomes {
            ow.serialize(OutcomeRow { patient: &tl.patient_id, i: o.i, j: o.j, t_i: ts[o.i], t_j: ts[o.j], y_hat: o.y_hat })?;
        }
        let est = aggregate_scores(po, theta, phi)?;
        let gold: Vec<Option<u8>> = tl.visits().iter().map(|v| v.state.map(|s| s.severity())).collect();
        for (k, score) in est.scores.iter().enumerate() {
            tw.serialize(TrajectoryRow { patient: &tl.patient_id, visit: k, timestamp: ts[k], score: *score, gold: gold[k] })?;
        }
        let mut series = vec![(
            "score".to_string(),
            est.scores.iter().zip(ts).filter_map(|(s, t)| s.map(|s| (*t, s))).collect::<Vec<_>>(),
        )];
        if gold.iter().any(Option::is_some) {
            series.push((
                "gold".to_string(),
                gold.iter().zip(ts).filter_map(|(g, t)| g.map(|g| (*t, g as f64))).collect(),
            ));
        }
        let svg = plot::line_chart(&format!("Patient {}", tl.patient_id), &series, "time", "score", false);
        fs::write(plots.join(format!("{}.svg", sanitize(&tl.patient_id))), svg)?;
        if let Some(rw) = rw.as_mut() {
            let ranked = win_matrix(&po.outcomes, tl.len(), ctx.cfg.trajectory.soft).and_then(|w| bradley_terry_strengths(&w));
            for k in 0..tl.len() {
                let (strength, status) = match &ranked {
                    Ok(r) => (Some(r.strengths[k]), if r.converged { "ok".to_string() } else { "not_converged".to_string() }),
                    Err(e) => (None, e.to_string()),
                };
                rw.serialize(RankRow { patient: &tl.patient_id, visit: k, strength, status })?;
            }
        }
    }
    ow.flush()?;
    tw.flush()?;
    if let Some(mut rw) = rw {
        rw.flush()?;
    }
    let mut sw = csv::Writer::from_path(ctx.out.join("skipped.csv"))?;
    sw.write_record(["patient"])?;
    for s in &skipped {
        sw.write_record([s])?;
    }
    sw.flush()?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct ScoreIn {
    id: String,
    score: f64,
}

#[derive(serde::Deserialize)]
struct LabelIn {
    id: String,
    label: u8,
}

#[derive(Serialize)]
struct EvalReport {
    n: usize,
    threshold: f64,
    metrics: MetricReport,
    auroc: Option<f64>,
}

#[derive(Serialize)]
struct RocRow {
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| crate::Validation(format!("{}: {e}", path.display())).into())
}

pub fn eval(ctx: &RunContext, predictions: Option<&Path>, labels: Option<&Path>) -> Result<()> {
    let missing = |what: &str| crate::Validation(format!("--{what} is required"));
    let pred_path = predictions.map(Path::to_path_buf).or_else(|| ctx.cfg.paths.predictions.clone()).ok_or_else(|| missing("predictions"))?;
    let label_path = labels.map(Path::to_path_buf).or_else(|| ctx.cfg.paths.labels.clone()).ok_or_else(|| missing("labels"))?;
    let preds: Vec<ScoreIn> = read_rows(&pred_path)?;
    let labels: Vec<LabelIn> = read_rows(&label_path)?;
    let mut by_id: BTreeMap<&str, bool> = BTreeMap::new();
    for l in &labels {
        require(l.label <= 1, format!("label for {} must be 0 or 1", l.id))?;
        require(by_id.insert(&l.id, l.label == 1).is_none(), format!("label id {} repeats", l.id))?;
    }
    require(preds.len() == by_id.len(), format!("{} predictions but {} labels", preds.len(), by_id.len()))?;
    let mut scores = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for p in &preds {
        let y = by_id.get(p.id.as_str()).ok_or_else(|| crate::Validation(format!("prediction id {} has no label", p.id)))?;
        require(p.score.is_finite(), format!("score for {} is not finite", p.id))?;
        scores.push(p.score);
        truth.push(*y);
    }
    begin(ctx)?;
    let hard: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
    let metrics = evaluate(&hard, &truth)?;
    let roc = roc_auroc(&scores, &truth);
    let c = metrics.counts;
    fs::write(ctx.out.join("confusion.svg"), plot::confusion_matrix("Confusion matrix", c.tp, c.fn_, c.fp, c.tn))?;
    let auroc = match &roc {
        Ok(r) => {
            let mut w = csv::Writer::from_path(ctx.out.join("roc.csv"))?;
            for p in &r.points {
                w.serialize(RocRow { threshold: p.threshold, fpr: p.fpr, tpr: p.tpr })?;
            }
            w.flush()?;
            let pts = r.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            let svg = plot::line_chart(&format!("ROC (AUROC {:.3})", r.auroc), &[("ROC".into(), pts)], "false positive rate", "true positive rate", true);
            fs::write(ctx.out.join("roc.svg"), svg)?;
            Some(r.auroc)
        }
        Err(e) => {
            log::warn!("no ROC curve: {e}");
            None
        }
    };
    write_json(&ctx.out.join("metrics.json"), &EvalReport { n: scores.len(), threshold: 0.5, metrics, auroc })
}

#[derive(Serialize)]
struct SeverityRow<'a> {
    patient: &'a str,
    visit: usize,
    timestamp: f64,
    severity: u8,
}

/// Generates a synthetic cohort in the extraction layout, with its analytic
/// reference accuracies; `benchmark` also runs the paradigm comparison.
pub fn simulate(ctx: &RunContext, benchmark: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let cohort = generate_cohort(&cfg.cohort)?;
    let (_, test) = subject_split(cohort.timelines.len(), cfg.train_fraction, cfg.seed)?;
    begin(ctx)?;
    let frames = ctx.out.join("frames");
    ensure_dir(&frames)?;
    let catalog = FeatureCatalog::default();
    let schema = GlobalSchema::new(&catalog);
    let mut entries = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut sev = csv::Writer::from_path(ctx.out.join("severity.csv"))?;
    for (n, tl) in cohort.timelines.iter().enumerate() {
        let split = if test.contains(&n) { Split::Test } else { Split::Train };
        for (k, v) in tl.visits().iter().enumerate() {
            let id = v.frame_map.source_id().to_string();
            let rel = format!("frames/{id}.csv");
            write_frame_csv(&ctx.out.join(&rel), &v.frame_map, &catalog, None)?;
            entries.push(ManifestEntry {
                patient_id: tl.patient_id.clone(),
                timestamp: v.timestamp,
                state: v.state,
                task: TaskTag::A,
                path: rel,
                split,
            });
            ids.push(id);
            rows.push(v.global.clone().unwrap_or_default());
            sev.serialize(SeverityRow { patient: &tl.patient_id, visit: k, timestamp: v.timestamp, severity: cohort.severity[n][k] })?;
        }
    }
    sev.flush()?;
    Manifest { entries, base_dir: ctx.out.clone() }.write(&ctx.out.join(MANIFEST_FILE))?;
    write_globals(&ctx.out.join(GLOBALS_FILE), &ids, &rows, &schema)?;
    write_json(
        &ctx.out.join("reference.json"),
        &serde_json::json!({
            "bayes": bayes_reference_accuracies(&cfg.cohort)?,
            "affected_channels": cohort.affected_channels,
            "direction": cohort.direction,
        }),
    )?;
    if benchmark {
        let opts = BenchmarkOptions {
            alpha: cfg.alpha,
            train_fraction: cfg.train_fraction,
            seeds: (0..cfg.repeats as u64).map(|k| cfg.seed + k).collect(),
            comparator: cfg.comparator.clone(),
            pse: cfg.pse.clone(),
            fnn: cfg.fnn.clone(),
        };
        let result = run_benchmark(&cohort, &opts, &ComparatorRegistry::default())?;
        write_json(&ctx.out.join("benchmark.json"), &result)?;
    }
    Ok(())
}
