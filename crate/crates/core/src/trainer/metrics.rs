use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification quality over `C+1` classes, the last being "unknown".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_nodes: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Accuracy on nodes of known classes; `None` if there are none.
    pub ind_accuracy: Option<f64>,
    /// Accuracy on nodes of unknown classes; `None` if there are none.
    pub ood_accuracy: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for predictions against targets, both in `0..num_classes` with
/// `num_classes - 1` standing for unknown. Classes never predicted and never
/// present score F1 = 0.
pub fn compute_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> MetricsReport {
    assert_eq!(pred.len(), truth.len(), "prediction/target length mismatch");
    let unknown = num_classes - 1;
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..num_classes).map(|t| confusion[t][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let ind_total: usize = (0..unknown).map(|c| per_class[c].support).sum();
    let ind_correct: usize = (0..unknown).map(|c| confusion[c][c]).sum();
    let ood_total = per_class[unknown].support;
    MetricsReport {
        num_nodes: pred.len(),
        accuracy: ratio(correct, pred.len()),
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64,
        ind_accuracy: (ind_total > 0).then(|| ratio(ind_correct, ind_total)),
        ood_accuracy: (ood_total > 0).then(|| ratio(confusion[unknown][unknown], ood_total)),
        per_class,
        confusion,
    }
}
