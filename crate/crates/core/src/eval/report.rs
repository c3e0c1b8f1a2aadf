//! CSV writers for reports and plot data.

use std::path::Path;

use super::{AblationRow, CutoffMetrics, BandImportance, ClassSpectra, CvResult, MetricsReport, RocCurve, Stat, SweepRow};
use crate::ensemble::BandConfig;
use crate::error::{Result, StvError};

pub const CV_HEADER: [&str; 13] = [
    "fold",
    "patients",
    "auc",
    "auc_sd",
    "accuracy",
    "accuracy_sd",
    "specificity",
    "specificity_sd",
    "recall",
    "recall_sd",
    "precision",
    "precision_sd",
    "cutoff",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn to_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("utf-8 fields")
}

pub fn write_csv(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| StvError::io(path, e))
}

fn stat_cells(s: &Stat) -> [String; 2] {
    [num(s.mean), num(s.sd)]
}

fn summary_row(label: &str, patients: usize, m: &MetricsReport) -> Vec<String> {
    let mut row = vec![label.to_string(), patients.to_string()];
    for s in [&m.auc, &m.accuracy, &m.specificity, &m.recall] {
        row.extend(stat_cells(s));
    }
    match &m.precision {
        Some(p) => row.extend(stat_cells(p)),
        None => row.extend([String::new(), String::new()]),
    }
    row.push(num(m.cutoff));
    row
}

/// One row per fold plus a `summary` row (mean and sample sd across folds).
/// Undefined precision is left empty.
pub fn cv_report_csv(cv: &CvResult) -> String {
    let mut rows: Vec<Vec<String>> = cv
        .folds
        .iter()
        .map(|f| {
            let m = &f.metrics;
            vec![
                f.fold.to_string(),
                f.test.len().to_string(),
                num(f.roc.auc),
                String::new(),
                num(m.accuracy),
                String::new(),
                num(m.specificity),
                String::new(),
                num(m.recall),
                String::new(),
                m.precision.map(num).unwrap_or_default(),
                String::new(),
                num(cv.summary.cutoff),
            ]
        })
        .collect();
    let patients = cv.folds.iter().map(|f| f.test.len()).sum();
    rows.push(summary_row("summary", patients, &cv.summary));
    to_string(&CV_HEADER, &rows)
}

/// Held-out patient scores: `fold,patient_id,pathological,score`.
pub fn patient_scores_csv(cv: &CvResult) -> String {
    let rows: Vec<Vec<String>> = cv
        .folds
        .iter()
        .flat_map(|f| {
            f.scores
                .iter()
                .map(move |(p, t, s)| vec![f.fold.to_string(), p.clone(), (*t as u8).to_string(), num(*s)])
        })
        .collect();
    to_string(&["fold", "patient_id", "pathological", "score"], &rows)
}

/// Metrics of a trained model on one manifest.
pub fn model_report_csv(patients: usize, roc: &RocCurve, m: &CutoffMetrics, cutoff: f64) -> String {
    let row = vec![
        patients.to_string(),
        num(roc.auc),
        num(m.accuracy),
        num(m.specificity),
        num(m.recall),
        m.precision.map(num).unwrap_or_default(),
        num(cutoff),
    ];
    to_string(
        &["patients", "auc", "accuracy", "specificity", "recall", "precision", "cutoff"],
        &[row],
    )
}

/// Patient scores of a trained model: `patient_id,pathological,score,predicted`.
pub fn scores_csv(scores: &[(String, bool, f64)], cutoff: f64) -> String {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|(p, t, s)| vec![p.clone(), (*t as u8).to_string(), num(*s), ((*s > cutoff) as u8).to_string()])
        .collect();
    to_string(&["patient_id", "pathological", "score", "predicted"], &rows)
}

/// Ablation table: one row per configuration.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let header = [
        "scales_per_band",
        "overlapping",
        "mode",
        "auc",
        "auc_sd",
        "accuracy",
        "accuracy_sd",
        "specificity",
        "specificity_sd",
        "recall",
        "recall_sd",
        "precision",
        "precision_sd",
        "cutoff",
    ];
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.scales_per_band.to_string(),
                r.overlapping.to_string(),
                r.mode.to_string(),
            ];
            row.extend(summary_row("", 0, &r.summary).into_iter().skip(2));
            row
        })
        .collect();
    to_string(&header, &rows)
}

/// Band importance plot data: `band,k_first,k_last,drop` with 1-based scales.
pub fn band_importance_csv(importance: &BandImportance, bands: &BandConfig) -> String {
    let rows: Vec<Vec<String>> = importance
        .drops
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let r = bands.band_range(j);
            vec![(j + 1).to_string(), (r.start + 1).to_string(), r.end.to_string(), num(*d)]
        })
        .collect();
    to_string(&["band", "k_first", "k_last", "drop"], &rows)
}

/// Component sweep plot data: `components,auc,auc_sd`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n_components.to_string(), num(r.summary.auc.mean), num(r.summary.auc.sd)])
        .collect();
    to_string(&["components", "auc", "auc_sd"], &rows)
}

/// ROC plot data: `series,fpr,tpr`.
pub fn roc_csv(series: &[(&str, &RocCurve)]) -> String {
    let rows: Vec<Vec<String>> = series
        .iter()
        .flat_map(|(name, roc)| {
            roc.points
                .iter()
                .map(move |&(fpr, tpr)| vec![name.to_string(), num(fpr), num(tpr)])
        })
        .collect();
    to_string(&["series", "fpr", "tpr"], &rows)
}

/// Class-wise mean spectra: `k,t,class,patches,mean_s` with `t = k * dt`.
pub fn class_spectra_csv(spectra: &ClassSpectra) -> String {
    let rows: Vec<Vec<String>> = spectra
        .classes
        .iter()
        .flat_map(|(label, count, mean)| {
            mean.iter().enumerate().map(move |(i, s)| {
                let k = i + 1;
                vec![
                    k.to_string(),
                    num(k as f64 * spectra.dt),
                    label.to_string(),
                    count.to_string(),
                    num(*s),
                ]
            })
        })
        .collect();
    to_string(&["k", "t", "class", "patches", "mean_s"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{roc_auc, run_cv, tests as fixtures, CvConfig};

    #[test]
    fn cv_report_has_fold_rows_and_summary() {
        let m = fixtures::manifest(6, 6);
        let f = fixtures::toy_features(&m, 4);
        let cfg = CvConfig { folds: 3, ..fixtures::toy_config() };
        let cv = run_cv(&m, &f, &cfg).unwrap();
        let text = cv_report_csv(&cv);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CV_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[4].starts_with("summary,12,"));
        assert_eq!(patient_scores_csv(&cv).lines().count(), 13);
    }

    #[test]
    fn roc_rows() {
        let roc = roc_auc(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(roc_csv(&[("a", &roc)]), "series,fpr,tpr\na,0,0\na,0,1\na,1,1\n");
    }
}
