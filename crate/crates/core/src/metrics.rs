//! Classification metrics (Cohen's kappa, weighted F1, AUROC, AUPRC) and
//! the pseudo-label coverage/quality report.
//!
//! AUROC uses the Mann-Whitney formulation with ties counted as 0.5.
//! AUPRC is step-interpolated average precision with tied scores grouped
//! into one threshold. Kappa uses the chance-corrected denominator
//! (1 - p_e).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::PseudoRecord;

/// K x K contingency table: rows index the true class, columns the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                context: "ConfusionMatrix::from_pairs",
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let mut cm = ConfusionMatrix::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p);
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.k && predicted < self.k, "class out of range");
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> usize {
        (0..self.k).map(|c| self.count(truth, c)).sum()
    }

    pub fn col_total(&self, predicted: usize) -> usize {
        (0..self.k).map(|r| self.count(r, predicted)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: usize = (0..self.k).map(|i| self.count(i, i)).sum();
        hits as f64 / total as f64
    }
}

/// Chance-corrected agreement: (p_o - p_e) / (1 - p_e).
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DegenerateMetric("kappa on empty confusion matrix"));
    }
    let n = total as f64;
    let p_o: f64 = (0..cm.k()).map(|i| cm.count(i, i) as f64).sum::<f64>() / n;
    let p_e: f64 = (0..cm.k())
        .map(|i| cm.row_total(i) as f64 * cm.col_total(i) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::DegenerateMetric("kappa undefined: p_e = 1"));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Per-class F1 score; 0 when the class has neither correct predictions
/// nor any precision/recall mass.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k())
        .map(|i| {
            let tp = cm.count(i, i) as f64;
            let support = cm.row_total(i) as f64;
            let predicted = cm.col_total(i) as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if support > 0.0 { tp / support } else { 0.0 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect()
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DegenerateMetric("weighted F1 on empty matrix"));
    }
    let f1 = per_class_f1(cm);
    Ok((0..cm.k())
        .map(|i| cm.row_total(i) as f64 / total as f64 * f1[i])
        .sum())
}

/// Per-sample positive-class score with binary true label.
#[derive(Debug, Clone)]
pub struct ScoredPredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<ScoredPredictions> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "ScoredPredictions",
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("ScoredPredictions scores"));
        }
        Ok(ScoredPredictions { scores, labels })
    }
}

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie).
pub fn auroc(preds: &ScoredPredictions) -> Result<f64> {
    let n_pos = preds.labels.iter().filter(|l| **l).count();
    let n_neg = preds.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateMetric("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..preds.scores.len()).collect();
    order.sort_by(|&a, &b| preds.scores[a].partial_cmp(&preds.scores[b]).unwrap());

    // Walk ascending scores in tie groups, counting negative mass below
    // and within each group.
    let mut wins = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0usize;
        let mut group_neg = 0usize;
        while j < order.len() && preds.scores[order[j]] == preds.scores[order[i]] {
            if preds.labels[order[j]] {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        wins += group_pos as f64 * (neg_below as f64 + 0.5 * group_neg as f64);
        neg_below += group_neg;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Average precision: sum over descending-score thresholds of
/// (R_n - R_{n-1}) * P_n, with tied scores grouped.
pub fn auprc(preds: &ScoredPredictions) -> Result<f64> {
    let n_pos = preds.labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return Err(Error::DegenerateMetric("AUPRC needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..preds.scores.len()).collect();
    order.sort_by(|&a, &b| preds.scores[b].partial_cmp(&preds.scores[a]).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut area = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && preds.scores[order[j]] == preds.scores[order[i]] {
            if preds.labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateMetric("spearman needs >= 2 points"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateMetric("spearman with constant input"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0 + 1.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// One row of the coverage/quality table at a given confidence threshold.
#[derive(Debug, Clone, Serialize)]
pub struct QualityRow {
    pub threshold: f64,
    pub coverage: f64,
    pub selected: usize,
    pub kappa: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub per_class_f1: Vec<Option<f64>>,
}

/// Sweep the confidence threshold over `grid` and score the selected
/// pseudo-label subset against the held-back true labels.
pub fn pseudo_quality_report(
    manifest: &[PseudoRecord],
    true_labels: &[usize],
    k: usize,
    grid: &[f64],
) -> Result<Vec<QualityRow>> {
    if manifest.len() != true_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "pseudo_quality_report",
            expected: manifest.len(),
            got: true_labels.len(),
        });
    }
    let n = manifest.len();
    let mut rows = Vec::with_capacity(grid.len());
    for &threshold in grid {
        let mut cm = ConfusionMatrix::new(k);
        let mut selected = 0usize;
        for (rec, &truth) in manifest.iter().zip(true_labels) {
            if rec.agree && rec.confidence > threshold {
                selected += 1;
                cm.record(truth, rec.label_prior);
            }
        }
        let coverage = if n == 0 { 0.0 } else { selected as f64 / n as f64 };
        if selected == 0 {
            rows.push(QualityRow {
                threshold,
                coverage,
                selected,
                kappa: None,
                weighted_f1: None,
                per_class_f1: vec![None; k],
            });
        } else {
            rows.push(QualityRow {
                threshold,
                coverage,
                selected,
                kappa: cohen_kappa(&cm).ok(),
                weighted_f1: weighted_f1(&cm).ok(),
                per_class_f1: per_class_f1(&cm).into_iter().map(Some).collect(),
            });
        }
    }
    Ok(rows)
}

/// Render quality rows as CSV with a stable column order.
pub fn quality_rows_to_csv(rows: &[QualityRow], k: usize) -> String {
    let mut out = String::from("rho,coverage,selected,kappa,weighted_f1");
    for c in 0..k {
        out.push_str(&format!(",f1_class_{c}"));
    }
    out.push('\n');
    for row in rows {
        let fmt_opt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{:.2},{:.6},{},{},{}",
            row.threshold,
            row.coverage,
            row.selected,
            fmt_opt(&row.kappa),
            fmt_opt(&row.weighted_f1)
        ));
        for c in 0..k {
            out.push(',');
            out.push_str(&fmt_opt(&row.per_class_f1[c]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm_2x2(a: usize, b: usize, c: usize, d: usize) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(2);
        for _ in 0..a {
            cm.record(0, 0);
        }
        for _ in 0..b {
            cm.record(0, 1);
        }
        for _ in 0..c {
            cm.record(1, 0);
        }
        for _ in 0..d {
            cm.record(1, 1);
        }
        cm
    }

    #[test]
    fn kappa_perfect_and_hand_value() {
        let cm = cm_2x2(50, 0, 0, 50);
        assert_eq!(cohen_kappa(&cm).unwrap(), 1.0);
        let cm = cm_2x2(40, 10, 10, 40);
        assert!((cohen_kappa(&cm).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn kappa_chance_level_and_degenerate() {
        // Everything predicted class 0 on balanced truth.
        let cm = cm_2x2(50, 0, 50, 0);
        assert!(cohen_kappa(&cm).unwrap().abs() < 1e-12);
        // All mass in one diagonal cell: p_e = 1.
        let cm = cm_2x2(10, 0, 0, 0);
        assert!(matches!(
            cohen_kappa(&cm),
            Err(Error::DegenerateMetric(_))
        ));
    }

    #[test]
    fn weighted_f1_hand_values() {
        let cm = cm_2x2(50, 0, 0, 50);
        assert_eq!(weighted_f1(&cm).unwrap(), 1.0);
        let cm = cm_2x2(40, 10, 10, 40);
        assert!((weighted_f1(&cm).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_has_zero_weight() {
        let mut cm = ConfusionMatrix::new(3);
        cm.record(0, 0);
        cm.record(1, 1);
        // class 2 never appears as truth
        let wf1 = weighted_f1(&cm).unwrap();
        assert_eq!(wf1, 1.0);
    }

    #[test]
    fn auroc_cases() {
        let perfect = ScoredPredictions::new(
            vec![0.9, 0.8, 0.2, 0.1],
            vec![true, true, false, false],
        )
        .unwrap();
        assert_eq!(auroc(&perfect).unwrap(), 1.0);

        let ties = ScoredPredictions::new(vec![0.5; 6], vec![true, false, true, false, true, false])
            .unwrap();
        assert_eq!(auroc(&ties).unwrap(), 0.5);

        let mixed = ScoredPredictions::new(
            vec![0.1, 0.4, 0.35, 0.8],
            vec![false, false, true, true],
        )
        .unwrap();
        assert!((auroc(&mixed).unwrap() - 0.75).abs() < 1e-12);

        let single = ScoredPredictions::new(vec![0.2, 0.4], vec![true, true]).unwrap();
        assert!(auroc(&single).is_err());
    }

    #[test]
    fn auprc_cases() {
        let perfect = ScoredPredictions::new(
            vec![0.9, 0.8, 0.2, 0.1],
            vec![true, true, false, false],
        )
        .unwrap();
        assert_eq!(auprc(&perfect).unwrap(), 1.0);

        // Single positive ranked last among n = 5 -> 1/5.
        let last = ScoredPredictions::new(
            vec![0.9, 0.8, 0.7, 0.6, 0.1],
            vec![false, false, false, false, true],
        )
        .unwrap();
        assert!((auprc(&last).unwrap() - 0.2).abs() < 1e-12);

        // All scores equal -> prevalence.
        let flat =
            ScoredPredictions::new(vec![0.3; 4], vec![true, false, false, false]).unwrap();
        assert!((auprc(&flat).unwrap() - 0.25).abs() < 1e-12);

        let none = ScoredPredictions::new(vec![0.1], vec![false]).unwrap();
        assert!(auprc(&none).is_err());
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[40.0, 30.0, 20.0, 10.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.5, 2.5, 4.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }
}
