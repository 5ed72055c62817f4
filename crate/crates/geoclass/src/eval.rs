//! Ranking metrics: per-class average precision, mean AP, and normalized
//! accuracy@k.
//!
//! Tie-breaking is deterministic everywhere: records by ascending index,
//! classes by ascending id. Classes without test positives are skipped by
//! mean AP and reported as skipped.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Score matrix plus ground-truth labels for a test split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    class_count: usize,
    scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(class_count: usize) -> Self {
        PredictionSet {
            class_count,
            scores: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, scores: Vec<f64>, label: usize) -> Result<()> {
        if scores.len() != self.class_count {
            return Err(Error::DimMismatch {
                context: "prediction scores".to_string(),
                expected: self.class_count,
                actual: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("prediction scores", "non-finite score".to_string()));
        }
        if label >= self.class_count {
            return Err(Error::invalid(
                "label",
                format!("{label} out of range for {} classes", self.class_count),
            ));
        }
        self.scores.push(scores);
        self.labels.push(label);
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }
}

/// Non-interpolated average precision: records sorted by descending score
/// (ties by ascending record index); AP is the mean, over positive ranks i
/// (1-based), of precision at i. `None` when there are no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positives.len());
    let total_positives = positives.iter().filter(|&&p| p).count();
    if total_positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if positives[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(sum / total_positives as f64)
}

/// Unweighted mean of per-class AP over classes with at least one positive.
pub fn mean_ap(preds: &PredictionSet) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for class in 0..preds.class_count {
        let scores: Vec<f64> = preds.scores.iter().map(|s| s[class]).collect();
        let positives: Vec<bool> = preds.labels.iter().map(|&l| l == class).collect();
        if let Some(ap) = average_precision(&scores, &positives) {
            sum += ap;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Top-k class ids of one score vector, ties by ascending class id.
fn top_k_classes(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fraction of each class's records whose top-k predictions contain the
/// class, averaged unweighted over the classes present in the test set.
pub fn normalized_accuracy_at_k(preds: &PredictionSet, k: usize) -> Option<f64> {
    if preds.is_empty() || k == 0 {
        return None;
    }
    let mut per_class_hits = vec![0usize; preds.class_count];
    let mut per_class_n = vec![0usize; preds.class_count];
    for (scores, &label) in preds.scores.iter().zip(&preds.labels) {
        per_class_n[label] += 1;
        if top_k_classes(scores, k).contains(&label) {
            per_class_hits[label] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for (hits, n) in per_class_hits.iter().zip(&per_class_n) {
        if *n > 0 {
            sum += *hits as f64 / *n as f64;
            classes += 1;
        }
    }
    (classes > 0).then(|| sum / classes as f64)
}

/// Per-class row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub ap: Option<f64>,
    pub acc1: Option<f64>,
    pub acc5: Option<f64>,
    pub n_test: usize,
}

/// Full metrics report for one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub mean_ap: Option<f64>,
    pub acc1: Option<f64>,
    pub acc5: Option<f64>,
    /// Classes skipped by mean AP for lacking positives.
    pub skipped_classes: Vec<usize>,
}

/// Compute the standard report: per-class AP and accuracies plus the means.
pub fn compute_metrics(preds: &PredictionSet) -> MetricsReport {
    let mut per_class = Vec::with_capacity(preds.class_count);
    let mut skipped = Vec::new();
    for class in 0..preds.class_count {
        let scores: Vec<f64> = preds.scores.iter().map(|s| s[class]).collect();
        let positives: Vec<bool> = preds.labels.iter().map(|&l| l == class).collect();
        let n_test = positives.iter().filter(|&&p| p).count();
        let ap = average_precision(&scores, &positives);
        if ap.is_none() {
            skipped.push(class);
        }
        let (acc1, acc5) = if n_test > 0 {
            let mut hit1 = 0usize;
            let mut hit5 = 0usize;
            for (s, &l) in preds.scores.iter().zip(&preds.labels) {
                if l != class {
                    continue;
                }
                if top_k_classes(s, 1).contains(&l) {
                    hit1 += 1;
                }
                if top_k_classes(s, 5).contains(&l) {
                    hit5 += 1;
                }
            }
            (
                Some(hit1 as f64 / n_test as f64),
                Some(hit5 as f64 / n_test as f64),
            )
        } else {
            (None, None)
        };
        per_class.push(ClassMetrics {
            class,
            ap,
            acc1,
            acc5,
            n_test,
        });
    }
    MetricsReport {
        per_class,
        mean_ap: mean_ap(preds),
        acc1: normalized_accuracy_at_k(preds, 1),
        acc5: normalized_accuracy_at_k(preds, 5),
        skipped_classes: skipped,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write `metrics.csv`: one `class,ap,acc1,acc5,n_test` row per class plus
/// a `mean` summary row.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "class,ap,acc1,acc5,n_test").map_err(|e| Error::io(path, e))?;
    for row in &report.per_class {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.class,
            fmt_opt(row.ap),
            fmt_opt(row.acc1),
            fmt_opt(row.acc5),
            row.n_test
        )
        .map_err(|e| Error::io(path, e))?;
    }
    let total: usize = report.per_class.iter().map(|r| r.n_test).sum();
    writeln!(
        w,
        "mean,{},{},{},{}",
        fmt_opt(report.mean_ap),
        fmt_opt(report.acc1),
        fmt_opt(report.acc5),
        total
    )
    .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
