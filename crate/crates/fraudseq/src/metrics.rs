//! Binary-classifier evaluation: AUC, Kolmogorov-Smirnov score, precision,
//! and coverage (recall), plus the ROC and KS curves behind them.
//!
//! Convention: fraud is the positive class with label 1, and higher scores
//! mean more suspicious.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary plus the curve points it was computed from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ks: f64,
    pub precision: f64,
    pub coverage: f64,
    /// Operating threshold used for precision/coverage.
    pub threshold: f64,
    /// True when no score reached the threshold, making precision
    /// degenerate (reported as 0).
    pub degenerate_precision: bool,
    /// (false positive rate, true positive rate) per threshold sweep step.
    pub roc_points: Vec<(f64, f64)>,
    /// (threshold, |TPR - FPR|) per distinct score, thresholds ascending.
    pub ks_points: Vec<(f64, f64)>,
}

fn check_two_classes(labels: &[u8]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted half (Mann-Whitney formulation via average ranks).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    check_two_classes(labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, ranks 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        // total_cmp grouping keeps the loop finite even for NaN scores
        while j < n && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = n as f64 - n_pos;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Threshold sweep shared by the ROC and KS computations. Returns, per
/// distinct score threshold in descending order, (threshold, FPR, TPR) for
/// the rule "predict positive when score >= threshold".
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&threshold).is_eq() {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((threshold, fp / n_neg, tp / n_pos));
    }
    out
}

/// Maximum over thresholds of |TPR - FPR|; equivalently the sup-norm
/// distance between the per-class empirical score CDFs.
pub fn ks(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    check_two_classes(labels)?;
    Ok(sweep(scores, labels)
        .iter()
        .map(|(_, fpr, tpr)| (tpr - fpr).abs())
        .fold(0.0, f64::max))
}

/// Threshold that attains the KS maximum (smallest such threshold value in
/// sweep order, i.e. the largest score threshold).
pub fn ks_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_two_classes(labels)?;
    let pts = sweep(scores, labels);
    let mut best = (f64::NEG_INFINITY, pts[0].0);
    for (t, fpr, tpr) in pts {
        let gap = (tpr - fpr).abs();
        if gap > best.0 {
            best = (gap, t);
        }
    }
    Ok(best.1)
}

/// Precision and coverage for the rule "flag when score >= threshold".
/// Returns (precision, coverage, degenerate) where `degenerate` marks the
/// no-positive-predictions case (precision reported as 0).
pub fn precision_coverage(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<(f64, f64, bool)> {
    assert_eq!(scores.len(), labels.len());
    check_two_classes(labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let flagged = s >= threshold;
        match (flagged, l) {
            (true, 1) => tp += 1.0,
            (true, 0) => fp += 1.0,
            (false, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let coverage = tp / (tp + fn_);
    if tp + fp == 0.0 {
        Ok((0.0, coverage, true))
    } else {
        Ok((tp / (tp + fp), coverage, false))
    }
}

/// Full evaluation at the given threshold, or at the KS-maximizing
/// threshold when none is supplied.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: Option<f64>) -> Result<EvalReport> {
    let auc_v = auc(scores, labels)?;
    let pts = sweep(scores, labels);
    let ks_v = pts.iter().map(|(_, f, t)| (t - f).abs()).fold(0.0, f64::max);
    let threshold = match threshold {
        Some(t) => t,
        None => ks_threshold(scores, labels)?,
    };
    let (precision, coverage, degenerate) = precision_coverage(scores, labels, threshold)?;
    let mut roc_points = vec![(0.0, 0.0)];
    roc_points.extend(pts.iter().map(|(_, fpr, tpr)| (*fpr, *tpr)));
    if roc_points.last() != Some(&(1.0, 1.0)) {
        roc_points.push((1.0, 1.0));
    }
    let mut ks_points: Vec<(f64, f64)> = pts
        .iter()
        .rev()
        .map(|(t, fpr, tpr)| (*t, (tpr - fpr).abs()))
        .collect();
    ks_points.dedup_by(|a, b| a.0 == b.0);
    Ok(EvalReport {
        auc: auc_v,
        ks: ks_v,
        precision,
        coverage,
        threshold,
        degenerate_precision: degenerate,
        roc_points,
        ks_points,
    })
}

impl EvalReport {
    /// Human-readable summary, stable across runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "auc       {:.6}", self.auc);
        let _ = writeln!(s, "ks        {:.6}", self.ks);
        let _ = writeln!(s, "precision {:.6}{}", self.precision,
            if self.degenerate_precision { "  (degenerate: nothing flagged)" } else { "" });
        let _ = writeln!(s, "coverage  {:.6}", self.coverage);
        let _ = writeln!(s, "threshold {:.6}", self.threshold);
        s
    }

    /// Write report.txt, report.json, and the two curve files into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let io_err = |p: &Path, e| Error::io(p.display().to_string(), e);
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| io_err(&txt, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self).expect("serializes") + "\n")
            .map_err(|e| io_err(&json, e))?;
        for (name, points) in [("roc_points.txt", &self.roc_points), ("ks_points.txt", &self.ks_points)] {
            let mut text = String::new();
            for (x, y) in points {
                let _ = writeln!(text, "{x:.9e} {y:.9e}");
            }
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}
