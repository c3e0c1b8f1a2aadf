//! Patient-level cross-validation, ROC/AUC, threshold metrics and the
//! analysis harnesses (band importance, scales-per-band ablation, component
//! sweep, class-wise mean spectra).

pub mod report;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container;
use crate::dataset::{default_mask_pixels, training_rows_for, Label3, Manifest, PatientStatus};
use crate::ensemble::{
    classify_patient, fit_band_ensemble, score_patch, score_vertebra, EnsembleConfig, EnsembleModel, Mode,
};
use crate::error::{Result, StvError};
use crate::image::GrayImage;
use crate::phantom::mix_seed;
use crate::spectral::{decompose, enhance_vector, masked_spectrum, signatures_at};
use crate::tvflow::FlowConfig;

/// Default number of folds.
pub const DEFAULT_FOLDS: usize = 10;

/// Per-patch features: raw signatures at the masked pixels and the masked spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    /// One raw signature (length = flow components) per masked pixel, in mask order.
    pub signatures: Vec<Vec<f64>>,
    /// `S_k` summed over the masked pixels.
    pub spectrum: Vec<f64>,
    /// Flow steps whose inner solve hit the iteration cap.
    pub unconverged_steps: usize,
}

/// Features of every manifest record, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub flow: FlowConfig,
    pub patches: Vec<PatchFeatures>,
}

pub fn patch_features(img: &GrayImage, flow: &FlowConfig, pixels: &[(usize, usize)]) -> Result<PatchFeatures> {
    let (stack, space) = decompose(img, flow)?;
    Ok(PatchFeatures {
        signatures: signatures_at(&stack, pixels)?,
        spectrum: masked_spectrum(img, &stack, pixels)?.values,
        unconverged_steps: space.unconverged_steps.len(),
    })
}

/// Decomposes every patch image (in parallel on the current rayon pool).
pub fn features_from_images(images: &[GrayImage], flow: &FlowConfig) -> Result<FeatureSet> {
    let pixels = default_mask_pixels();
    let patches = images
        .par_iter()
        .map(|img| patch_features(img, flow, &pixels))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet { flow: *flow, patches })
}

/// Reads and decomposes every raster referenced by the manifest.
pub fn extract_features(manifest: &Manifest, flow: &FlowConfig) -> Result<FeatureSet> {
    let pixels = default_mask_pixels();
    let patches = manifest
        .records
        .par_iter()
        .map(|r| {
            let img = container::read_raster(&manifest.resolve(r))?;
            patch_features(&img, flow, &pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet { flow: *flow, patches })
}

/// Patients with their vertebrae (record indices), in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientGroup {
    pub patient_id: String,
    pub status: PatientStatus,
    pub vertebrae: Vec<Vec<usize>>,
}

pub fn patient_groups(manifest: &Manifest) -> Vec<PatientGroup> {
    manifest
        .patients()
        .into_iter()
        .map(|(patient_id, status)| {
            let mut names: Vec<&str> = Vec::new();
            let mut vertebrae: Vec<Vec<usize>> = Vec::new();
            for (i, r) in manifest.records.iter().enumerate() {
                if r.patient_id != patient_id {
                    continue;
                }
                match names.iter().position(|v| *v == r.vertebra_id) {
                    Some(j) => vertebrae[j].push(i),
                    None => {
                        names.push(&r.vertebra_id);
                        vertebrae.push(vec![i]);
                    }
                }
            }
            PatientGroup {
                patient_id,
                status,
                vertebrae,
            }
        })
        .collect()
}

/// Assignment of patients to folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `(patient_id, fold)` in manifest patient order.
    pub assignment: Vec<(String, usize)>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.assignment.iter().find(|(p, _)| p == patient).map(|&(_, f)| f)
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|&&(_, f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Stratified patient-level folds: pathological patients, shuffled by a
/// ChaCha8 generator seeded with `seed`, are dealt round-robin over the
/// folds, and normal patients (shuffled by the same generator) continue the
/// deal where the pathological ones stopped.
pub fn kfold_by_patient(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let patients = manifest.patients();
    if k < 2 {
        return Err(StvError::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if k > patients.len() {
        return Err(StvError::InvalidConfig(format!(
            "{k} folds requested for {} patients",
            patients.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path: Vec<usize> = (0..patients.len()).filter(|&i| patients[i].1.is_pathological()).collect();
    let mut normal: Vec<usize> = (0..patients.len()).filter(|&i| !patients[i].1.is_pathological()).collect();
    path.shuffle(&mut rng);
    normal.shuffle(&mut rng);
    let mut fold = vec![0; patients.len()];
    for (slot, &p) in path.iter().chain(&normal).enumerate() {
        fold[p] = slot % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment: patients.into_iter().zip(fold).map(|((p, _), f)| (p, f)).collect(),
    })
}

/// Empirical ROC curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score
    /// taken as threshold in decreasing order.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve and trapezoidal AUC of `scores` against `truths` (true =
/// pathological). Tied scores form a single step, so the area equals the
/// pairwise concordance with ties counted one half.
pub fn roc_auc(scores: &[f64], truths: &[bool]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(StvError::dims(truths.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(StvError::InvalidConfig("non-finite score".into()));
    }
    let pos = truths.iter().filter(|&&t| t).count() as u64;
    let neg = truths.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(StvError::DegenerateTruth(format!(
            "{pos} positives and {neg} negatives; both classes are required"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area in units of 1 / (pos * neg)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// Confusion-matrix metrics with Pathological as the positive class and
/// decision `score > cutoff`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub specificity: f64,
    pub recall: f64,
    /// Absent when nothing is predicted positive.
    pub precision: Option<f64>,
}

pub fn metrics_at_cutoff(scores: &[f64], truths: &[bool], cutoff: f64) -> Result<CutoffMetrics> {
    if scores.len() != truths.len() {
        return Err(StvError::dims(truths.len(), scores.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &t) in scores.iter().zip(truths) {
        match (s > cutoff, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(StvError::DegenerateTruth("metrics need both classes".into()));
    }
    Ok(CutoffMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        recall: tp as f64 / (tp + fn_) as f64,
        precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
    })
}

/// Cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub ensemble: EnsembleConfig,
    pub folds: usize,
    pub seed: u64,
    /// Duplicate PATH_LU patches in the training folds.
    pub duplicate_lu: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            ensemble: EnsembleConfig::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            duplicate_lu: true,
        }
    }
}

/// Band tags of every masked pixel of a patch: `tags[pixel][band]`.
pub type PatchTags = Vec<Vec<u8>>;

/// A held-out patient with the band tags of all its patches.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPatient {
    pub patient_id: String,
    pub pathological: bool,
    pub vertebrae: Vec<Vec<PatchTags>>,
}

impl TaggedPatient {
    /// Patient score (highest vertebra score), optionally leaving one band out.
    pub fn score(&self, exclude: Option<usize>) -> Result<f64> {
        let mask_len = self
            .vertebrae
            .first()
            .and_then(|v| v.first())
            .map_or(0, |p| p.len());
        let vertebra_scores = self
            .vertebrae
            .iter()
            .map(|patches| {
                let patch_scores = patches
                    .iter()
                    .map(|tags| {
                        let pixels: Vec<f64> = tags
                            .iter()
                            .map(|t| crate::ensemble::mean_tags(t, exclude))
                            .collect();
                        score_patch(&pixels, mask_len)
                    })
                    .collect::<Result<Vec<_>>>()?;
                score_vertebra(&patch_scores)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(classify_patient(&vertebra_scores, 0.0)?.1)
    }
}

/// Outcome of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_patients: Vec<String>,
    pub test: Vec<TaggedPatient>,
    /// `(patient_id, pathological, score)` of the held-out patients.
    pub scores: Vec<(String, bool, f64)>,
    pub roc: RocCurve,
    pub metrics: CutoffMetrics,
    pub training_rows: usize,
}

/// Mean and sample standard deviation across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, sd, n })
    }
}

/// Cross-fold summary (mean and sd across folds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub auc: Stat,
    pub accuracy: Stat,
    pub specificity: Stat,
    pub recall: Stat,
    /// Over the folds where precision is defined; absent if none.
    pub precision: Option<Stat>,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub config: CvConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub summary: MetricsReport,
}

impl CvResult {
    /// All held-out patient scores, in fold then patient order.
    pub fn pooled_scores(&self) -> Vec<(String, bool, f64)> {
        self.folds.iter().flat_map(|f| f.scores.iter().cloned()).collect()
    }
}

/// Enhanced features of every patch for a configuration: `[patch][pixel][k]`,
/// using the first `n_components` components of each raw signature.
fn feature_rows(features: &FeatureSet, config: &EnsembleConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = config.bands.n_components;
    let available = features.flow.n_components;
    if n > available {
        return Err(StvError::InvalidConfig(format!(
            "{n} components requested but features carry {available}"
        )));
    }
    Ok(features
        .patches
        .iter()
        .map(|p| {
            p.signatures
                .iter()
                .map(|s| enhance_vector(&s[..n], config.p_enh))
                .collect()
        })
        .collect())
}

fn check_inputs(manifest: &Manifest, features: &FeatureSet) -> Result<()> {
    if manifest.is_empty() {
        return Err(StvError::Empty("manifest has no patches".into()));
    }
    if features.patches.len() != manifest.len() {
        return Err(StvError::dims(
            format!("{} patch features", manifest.len()),
            features.patches.len(),
        ));
    }
    Ok(())
}

fn train_and_tag(
    manifest: &Manifest,
    groups: &[PatientGroup],
    rows: &[Vec<Vec<f64>>],
    plan: &FoldPlan,
    fold: usize,
    config: &CvConfig,
) -> Result<(EnsembleModel, Vec<String>, Vec<TaggedPatient>, usize)> {
    let (test, train): (Vec<&PatientGroup>, Vec<&PatientGroup>) =
        groups.iter().partition(|g| plan.fold_of(&g.patient_id) == Some(fold));
    let test_ids: BTreeSet<&str> = test.iter().map(|g| g.patient_id.as_str()).collect();
    let train_ids: Vec<String> = train.iter().map(|g| g.patient_id.clone()).collect();
    let mut train_records: Vec<usize> = train.iter().flat_map(|g| g.vertebrae.concat()).collect();
    train_records.sort_unstable();
    if let Some(leak) = train_records
        .iter()
        .find(|&&i| test_ids.contains(manifest.records[i].patient_id.as_str()))
    {
        return Err(StvError::Contract(format!(
            "record {leak} of a held-out patient reached the training set"
        )));
    }
    let (model, n_rows) = fit_records(manifest, rows, &train_records, config, mix_seed(config.seed, &[fold as u64]))?;
    let tagged = tag_patients(&model, &test, rows)?;
    Ok((model, train_ids, tagged, n_rows))
}

fn fit_records(
    manifest: &Manifest,
    rows: &[Vec<Vec<f64>>],
    records: &[usize],
    config: &CvConfig,
    seed: u64,
) -> Result<(EnsembleModel, usize)> {
    let training = training_rows_for(manifest, records, config.duplicate_lu);
    let mut x: Vec<&[f64]> = Vec::new();
    let mut y: Vec<Label3> = Vec::new();
    for &(record, label) in &training.rows {
        for pixel in &rows[record] {
            x.push(pixel);
            y.push(label);
        }
    }
    Ok((fit_band_ensemble(&x, &y, &config.ensemble, seed)?, x.len()))
}

fn tag_patients(model: &EnsembleModel, groups: &[&PatientGroup], rows: &[Vec<Vec<f64>>]) -> Result<Vec<TaggedPatient>> {
    groups
        .iter()
        .map(|g| {
            let vertebrae = g
                .vertebrae
                .iter()
                .map(|patches| {
                    patches
                        .iter()
                        .map(|&r| rows[r].iter().map(|s| model.pixel_tags(s)).collect::<Result<PatchTags>>())
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TaggedPatient {
                patient_id: g.patient_id.clone(),
                pathological: g.status.is_pathological(),
                vertebrae,
            })
        })
        .collect()
}

/// Fits one model on every patient of the manifest with seed `config.seed`.
pub fn fit_on_manifest(manifest: &Manifest, features: &FeatureSet, config: &CvConfig) -> Result<EnsembleModel> {
    config.ensemble.validate()?;
    check_inputs(manifest, features)?;
    let rows = feature_rows(features, &config.ensemble)?;
    let records: Vec<usize> = (0..manifest.len()).collect();
    Ok(fit_records(manifest, &rows, &records, config, config.seed)?.0)
}

/// Scores every patient of the manifest with a trained model.
pub fn score_patients(manifest: &Manifest, features: &FeatureSet, model: &EnsembleModel) -> Result<Vec<TaggedPatient>> {
    check_inputs(manifest, features)?;
    let rows = feature_rows(features, &model.config)?;
    let groups = patient_groups(manifest);
    let refs: Vec<&PatientGroup> = groups.iter().collect();
    tag_patients(model, &refs, &rows)
}

fn summarize(folds: &[FoldOutcome], cutoff: f64) -> MetricsReport {
    let stat = |f: &dyn Fn(&FoldOutcome) -> f64| {
        Stat::of(&folds.iter().map(f).collect::<Vec<_>>()).expect("at least one fold")
    };
    let precisions: Vec<f64> = folds.iter().filter_map(|f| f.metrics.precision).collect();
    MetricsReport {
        auc: stat(&|f| f.roc.auc),
        accuracy: stat(&|f| f.metrics.accuracy),
        specificity: stat(&|f| f.metrics.specificity),
        recall: stat(&|f| f.metrics.recall),
        precision: Stat::of(&precisions),
        cutoff,
    }
}

/// Patient-level k-fold cross-validation. Folds run in parallel on the
/// current rayon pool and are combined in fold order.
pub fn run_cv(manifest: &Manifest, features: &FeatureSet, config: &CvConfig) -> Result<CvResult> {
    config.ensemble.validate()?;
    check_inputs(manifest, features)?;
    let plan = kfold_by_patient(manifest, config.folds, config.seed)?;
    let groups = patient_groups(manifest);
    let rows = feature_rows(features, &config.ensemble)?;
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (_, train_patients, test, training_rows) =
                train_and_tag(manifest, &groups, &rows, &plan, fold, config)?;
            let scores = test
                .iter()
                .map(|p| Ok((p.patient_id.clone(), p.pathological, p.score(None)?)))
                .collect::<Result<Vec<_>>>()?;
            let s: Vec<f64> = scores.iter().map(|x| x.2).collect();
            let t: Vec<bool> = scores.iter().map(|x| x.1).collect();
            let roc = roc_auc(&s, &t).map_err(|e| fold_error(fold, e))?;
            let metrics = metrics_at_cutoff(&s, &t, config.ensemble.cutoff).map_err(|e| fold_error(fold, e))?;
            Ok(FoldOutcome {
                fold,
                train_patients,
                test,
                scores,
                roc,
                metrics,
                training_rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&folds, config.ensemble.cutoff);
    Ok(CvResult {
        config: *config,
        plan,
        folds,
        summary,
    })
}

fn fold_error(fold: usize, e: StvError) -> StvError {
    match e {
        StvError::DegenerateTruth(m) => StvError::DegenerateTruth(format!("fold {fold}: {m}")),
        other => other,
    }
}

/// AUC with all bands and with each band left out, for one set of held-out patients.
pub fn band_drops(patients: &[TaggedPatient]) -> Result<(f64, Vec<f64>)> {
    let bands = patients
        .first()
        .and_then(|p| p.vertebrae.first())
        .and_then(|v| v.first())
        .and_then(|t| t.first())
        .map_or(0, |t| t.len());
    if bands < 2 {
        return Err(StvError::InvalidConfig(format!(
            "band importance needs at least 2 bands, got {bands}"
        )));
    }
    let truths: Vec<bool> = patients.iter().map(|p| p.pathological).collect();
    let auc_with = |exclude: Option<usize>| -> Result<f64> {
        let scores = patients.iter().map(|p| p.score(exclude)).collect::<Result<Vec<_>>>()?;
        Ok(roc_auc(&scores, &truths)?.auc)
    };
    let all = auc_with(None)?;
    let drops = (0..bands)
        .map(|b| Ok(all - auc_with(Some(b))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((all, drops))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandImportance {
    /// AUC of the pooled out-of-fold patient scores with every band.
    pub auc_all: f64,
    /// Pooled `AUC_all - AUC_without_band`, per band.
    pub drops: Vec<f64>,
    /// Mean across folds of the per-fold drops, per band.
    pub fold_mean_drops: Vec<f64>,
}

/// Leave-one-band-out AUC drops. Each held-out patient is scored by the model
/// of its own fold; `drops` compares AUCs over all held-out patients pooled,
/// `fold_mean_drops` averages the per-fold comparisons.
pub fn band_importance(manifest: &Manifest, features: &FeatureSet, config: &CvConfig) -> Result<BandImportance> {
    if config.ensemble.bands.validate().is_ok() && config.ensemble.bands.band_count() < 2 {
        return Err(StvError::InvalidConfig("band importance needs at least 2 bands".into()));
    }
    let cv = run_cv(manifest, features, config)?;
    let pooled: Vec<TaggedPatient> = cv.folds.iter().flat_map(|f| f.test.iter().cloned()).collect();
    let (auc_all, drops) = band_drops(&pooled)?;
    let per_fold = cv
        .folds
        .par_iter()
        .map(|f| band_drops(&f.test))
        .collect::<Result<Vec<_>>>()?;
    let k = per_fold.len() as f64;
    let fold_mean_drops = (0..drops.len())
        .map(|b| per_fold.iter().map(|(_, d)| d[b]).sum::<f64>() / k)
        .collect();
    Ok(BandImportance {
        auc_all,
        drops,
        fold_mean_drops,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub scales_per_band: usize,
    pub overlapping: bool,
    pub mode: Mode,
    pub summary: MetricsReport,
}

/// One cross-validation per `(scales, overlapping, mode)` combination. Every
/// configuration is validated before any run starts.
pub fn ablation_scales(
    manifest: &Manifest,
    features: &FeatureSet,
    base: &CvConfig,
    scales: &[usize],
    overlapping: &[bool],
    modes: &[Mode],
) -> Result<Vec<AblationRow>> {
    let mut configs = Vec::new();
    for &s in scales {
        for &o in overlapping {
            for &mode in modes {
                let mut cfg = *base;
                cfg.ensemble.bands.scales_per_band = s;
                cfg.ensemble.bands.overlapping = o;
                cfg.ensemble.mode = mode;
                cfg.ensemble.validate()?;
                configs.push(cfg);
            }
        }
    }
    configs
        .iter()
        .map(|cfg| {
            let cv = run_cv(manifest, features, cfg)?;
            Ok(AblationRow {
                scales_per_band: cfg.ensemble.bands.scales_per_band,
                overlapping: cfg.ensemble.bands.overlapping,
                mode: cfg.ensemble.mode,
                summary: cv.summary,
            })
        })
        .collect()
}

/// The component counts 20, 30, ..., 120.
pub fn default_sweep_counts() -> Vec<usize> {
    (20..=120).step_by(10).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_components: usize,
    pub summary: MetricsReport,
}

/// Cross-validation on signatures truncated to each component count.
pub fn component_sweep(
    manifest: &Manifest,
    features: &FeatureSet,
    base: &CvConfig,
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    let configs = counts
        .iter()
        .map(|&n| {
            let mut cfg = *base;
            cfg.ensemble.bands.n_components = n;
            cfg.ensemble.validate()?;
            if n > features.flow.n_components {
                return Err(StvError::InvalidConfig(format!(
                    "{n} components requested but features carry {}",
                    features.flow.n_components
                )));
            }
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .map(|cfg| {
            Ok(SweepRow {
                n_components: cfg.ensemble.bands.n_components,
                summary: run_cv(manifest, features, cfg)?.summary,
            })
        })
        .collect()
}

/// Mean masked spectrum per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpectra {
    pub dt: f64,
    /// `(class, patch count, mean S_k)` in class order. Absent classes are omitted.
    pub classes: Vec<(Label3, usize, Vec<f64>)>,
}

impl ClassSpectra {
    pub fn get(&self, label: Label3) -> Option<&[f64]> {
        self.classes.iter().find(|c| c.0 == label).map(|c| c.2.as_slice())
    }
}

pub fn mean_spectrum_by_class(manifest: &Manifest, features: &FeatureSet) -> Result<ClassSpectra> {
    check_inputs(manifest, features)?;
    let n = features.flow.n_components;
    let classes = Label3::ALL
        .iter()
        .filter_map(|&label| {
            let members: Vec<&PatchFeatures> = manifest
                .records
                .iter()
                .zip(&features.patches)
                .filter(|(r, _)| r.label == label)
                .map(|(_, p)| p)
                .collect();
            if members.is_empty() {
                return None;
            }
            let mut mean = vec![0.0; n];
            for p in &members {
                for (m, s) in mean.iter_mut().zip(&p.spectrum) {
                    *m += s;
                }
            }
            let count = members.len();
            mean.iter_mut().for_each(|m| *m /= count as f64);
            Some((label, count, mean))
        })
        .collect();
    Ok(ClassSpectra {
        dt: features.flow.dt,
        classes,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::PatchRecord;
    use proptest::prelude::*;
    use rand::Rng;
    use std::path::PathBuf;

    fn brute_auc(scores: &[f64], truths: &[bool]) -> f64 {
        let mut c = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if truths[i] && !truths[j] {
                    pairs += 1.0;
                    c += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        c / pairs
    }

    pub(crate) fn manifest(n_path: usize, n_normal: usize) -> Manifest {
        let mut records = Vec::new();
        for p in 0..n_path + n_normal {
            for v in 0..2 {
                let label = match (p < n_path, v) {
                    (true, 0) => Label3::PathHu,
                    (true, _) => Label3::PathLu,
                    _ => Label3::Normal,
                };
                records.push(PatchRecord {
                    patient_id: format!("p{p}"),
                    vertebra_id: format!("v{v}"),
                    patch_id: "0".into(),
                    label,
                    path: PathBuf::from(format!("{p}_{v}.stv")),
                });
            }
        }
        Manifest::new(records, PathBuf::new()).unwrap()
    }

    #[test]
    fn auc_examples() {
        let t = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &t).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &t).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &t).unwrap().auc, 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(StvError::DegenerateTruth(_))));
        let roc = roc_auc(&[0.8, 0.4, 0.6, 0.2], &t).unwrap();
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn cutoff_metric_examples() {
        let m = metrics_at_cutoff(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false], 0.5).unwrap();
        assert_eq!((m.accuracy, m.specificity, m.recall, m.precision), (1.0, 1.0, 1.0, Some(1.0)));
        let m = metrics_at_cutoff(&[0.1, 0.2, 0.3], &[true, false, false], 0.5).unwrap();
        assert_eq!((m.recall, m.specificity, m.precision), (0.0, 1.0, None));
        // TP=3 FP=1 TN=5 FN=1
        let scores = [0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let truths = [true, true, true, false, false, false, false, false, false, true];
        let m = metrics_at_cutoff(&scores, &truths, 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (3, 1, 5, 1));
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.specificity, 5.0 / 6.0);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.precision, Some(0.75));
    }

    #[test]
    fn folds_are_stratified_partitions() {
        let m = manifest(10, 10);
        let plan = kfold_by_patient(&m, 10, 3).unwrap();
        assert_eq!(plan, kfold_by_patient(&m, 10, 3).unwrap());
        for f in 0..10 {
            let members = plan.members(f);
            assert_eq!(members.len(), 2);
            let path = members.iter().filter(|p| p[1..].parse::<usize>().unwrap() < 10).count();
            assert_eq!(path, 1);
        }
        assert_eq!(plan.assignment.len(), 20);
        assert!(kfold_by_patient(&m, 21, 3).is_err());
        assert!(kfold_by_patient(&m, 1, 3).is_err());
        let uneven = manifest(7, 5);
        let plan = kfold_by_patient(&uneven, 5, 1).unwrap();
        for f in 0..5 {
            let members = plan.members(f);
            let path = members.iter().filter(|p| p[1..].parse::<usize>().unwrap() < 7).count();
            assert!((path as f64 - members.len() as f64 * 7.0 / 12.0).abs() <= 1.0);
        }
    }

    pub(crate) fn toy_features(m: &Manifest, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flow = FlowConfig { n_components: 20, ..FlowConfig::default() };
        let patches = m
            .records
            .iter()
            .map(|r| {
                let shift = if r.label == Label3::PathHu { 0.8 } else { 0.0 };
                PatchFeatures {
                    signatures: (0..13)
                        .map(|_| (0..20).map(|k| rng.gen_range(0.0..1.0) + if k < 5 { shift } else { 0.0 }).collect())
                        .collect(),
                    spectrum: (0..20).map(|k| k as f64 + shift).collect(),
                    unconverged_steps: 0,
                }
            })
            .collect();
        FeatureSet { flow, patches }
    }

    pub(crate) fn toy_config() -> CvConfig {
        let mut cfg = CvConfig { folds: 4, seed: 5, ..CvConfig::default() };
        cfg.ensemble.bands.n_components = 20;
        cfg
    }

    #[test]
    fn cv_keeps_test_patients_out_of_training() {
        let m = manifest(8, 8);
        let f = toy_features(&m, 1);
        let cv = run_cv(&m, &f, &toy_config()).unwrap();
        assert_eq!(cv.folds.len(), 4);
        for fold in &cv.folds {
            for p in &fold.test {
                assert!(!fold.train_patients.contains(&p.patient_id));
                assert_eq!(cv.plan.fold_of(&p.patient_id), Some(fold.fold));
            }
            assert_eq!(fold.train_patients.len() + fold.test.len(), 16);
        }
        assert!(cv.summary.auc.mean > 0.7);
        assert_eq!(cv, run_cv(&m, &f, &toy_config()).unwrap());
    }

    #[test]
    fn single_class_cohort_is_degenerate() {
        let m = manifest(0, 8);
        let f = toy_features(&m, 1);
        assert!(matches!(run_cv(&m, &f, &toy_config()), Err(StvError::DegenerateTruth(_))));
    }

    #[test]
    fn identical_bands_have_zero_drops() {
        let m = manifest(6, 6);
        let f = toy_features(&m, 2);
        let cv = run_cv(&m, &f, &toy_config()).unwrap();
        for fold in &cv.folds {
            // replace every band tag of a pixel by its first band's tag
            let mut test = fold.test.clone();
            for p in &mut test {
                for v in &mut p.vertebrae {
                    for patch in v {
                        for px in patch {
                            let t = px[0];
                            px.iter_mut().for_each(|x| *x = t);
                        }
                    }
                }
            }
            if let Ok((_, drops)) = band_drops(&test) {
                assert!(drops.iter().all(|&d| d == 0.0));
            }
        }
        let one_band = CvConfig {
            ensemble: EnsembleConfig {
                bands: crate::ensemble::BandConfig { n_components: 20, scales_per_band: 20, overlapping: false },
                ..toy_config().ensemble
            },
            ..toy_config()
        };
        assert!(band_importance(&m, &f, &one_band).is_err());
    }

    #[test]
    fn harness_validation() {
        let m = manifest(6, 6);
        let f = toy_features(&m, 2);
        assert!(ablation_scales(&m, &f, &toy_config(), &[7], &[false], &[Mode::Tree]).is_err());
        assert!(component_sweep(&m, &f, &toy_config(), &[30]).is_err());
        assert_eq!(default_sweep_counts().len(), 11);
        let rows = component_sweep(&m, &f, &toy_config(), &[10, 20]).unwrap();
        let base = run_cv(&m, &f, &toy_config()).unwrap();
        assert_eq!(rows[1].summary, base.summary);
    }

    #[test]
    fn class_spectra() {
        let m = manifest(3, 3);
        let f = toy_features(&m, 2);
        let spectra = mean_spectrum_by_class(&m, &f).unwrap();
        assert!((spectra.get(Label3::PathHu).unwrap()[3] - 3.8).abs() < 1e-12);
        assert_eq!(spectra.get(Label3::Normal).unwrap()[3], 3.0);
        let only_normal = manifest(0, 2);
        let spectra = mean_spectrum_by_class(&only_normal, &toy_features(&only_normal, 1)).unwrap();
        assert_eq!(spectra.classes.len(), 1);
        assert_eq!((spectra.classes[0].0, spectra.classes[0].1), (Label3::Normal, 4));
        assert!(spectra.get(Label3::PathHu).is_none());
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_concordance(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 7.0).collect();
            let truths: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(truths.iter().any(|&t| t) && truths.iter().any(|&t| !t));
            let roc = roc_auc(&scores, &truths).unwrap();
            prop_assert!((roc.auc - brute_auc(&scores, &truths)).abs() <= 1e-12);
            prop_assert!(roc.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            let warped: Vec<f64> = scores.iter().map(|s| s.powi(3) * 5.0 + 1.0).collect();
            prop_assert_eq!(roc_auc(&warped, &truths).unwrap().auc, roc.auc);
        }
    }
}
