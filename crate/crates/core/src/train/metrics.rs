use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification scores derived from a confusion matrix whose rows are
/// true classes and columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub weighted_f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Scores with zero-denominator ratios defined as 0.
pub fn compute_metrics(confusion: &[Vec<u64>]) -> Result<Metrics> {
    let n = confusion.len();
    if n == 0 || confusion.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(
            "confusion matrix must be square and non-empty".into(),
        ));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Contract("confusion matrix is all zero".into()));
    }
    let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..n)
        .map(|c| confusion.iter().map(|r| r[c]).sum())
        .collect();
    let tp: Vec<u64> = (0..n).map(|c| confusion[c][c]).collect();
    let precision: Vec<f64> = (0..n)
        .map(|c| ratio(tp[c] as f64, predicted[c] as f64))
        .collect();
    let recall: Vec<f64> = (0..n)
        .map(|c| ratio(tp[c] as f64, support[c] as f64))
        .collect();
    let f1: Vec<f64> = (0..n)
        .map(|c| ratio(2.0 * precision[c] * recall[c], precision[c] + recall[c]))
        .collect();
    let weighted_f1 = (0..n).map(|c| support[c] as f64 * f1[c]).sum::<f64>() / total as f64;
    let accuracy = tp.iter().sum::<u64>() as f64 / total as f64;
    Ok(Metrics {
        confusion: confusion.to_vec(),
        accuracy,
        precision,
        recall,
        f1,
        support,
        weighted_f1,
    })
}

/// Counts `(truth, prediction)` pairs into an `n×n` matrix.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = vec![vec![0u64; n]; n];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n || p >= n {
            return Err(Error::Contract(format!(
                "label pair ({t}, {p}) outside {n} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class precision/recall/F1 block followed by accuracy and weighted F1.
pub fn format_class_report(metrics: &Metrics, label_names: &[String]) -> String {
    let width = label_names
        .iter()
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(5)
        .max(12);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>9} {:>9} {:>9} {:>9}",
        "class", "precision", "recall", "f1-score", "support"
    );
    for (c, name) in label_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            name, metrics.precision[c], metrics.recall[c], metrics.f1[c], metrics.support[c]
        );
    }
    let total: u64 = metrics.support.iter().sum();
    let _ = writeln!(
        out,
        "{:<width$} {:>9} {:>9} {:>9.4} {:>9}",
        "accuracy", "", "", metrics.accuracy, total
    );
    let _ = writeln!(
        out,
        "{:<width$} {:>9} {:>9} {:>9.4} {:>9}",
        "weighted f1", "", "", metrics.weighted_f1, total
    );
    out
}

/// Header for [`format_summary_row`].
pub fn summary_header() -> String {
    format!("{:<24} {:>9} {:>11}", "model", "accuracy", "weighted-f1")
}

/// One comparison-table row: accuracy in percent and weighted F1.
pub fn format_summary_row(name: &str, metrics: &Metrics) -> String {
    format!(
        "{:<24} {:>9.2} {:>11.4}",
        name,
        100.0 * metrics.accuracy,
        metrics.weighted_f1
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_two_class_example() {
        let m = compute_metrics(&[vec![3, 1], vec![2, 4]]).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 5e-5;
        assert!(close(m.precision[0], 0.6) && close(m.precision[1], 0.8));
        assert!(close(m.recall[0], 0.75) && close(m.recall[1], 0.6667));
        assert!(close(m.f1[0], 0.6667) && close(m.f1[1], 0.7273));
        assert!(close(m.weighted_f1, 0.7030));
        assert_eq!(m.accuracy, 0.7);
    }

    #[test]
    fn diagonal_scores_one_and_empty_prediction_scores_zero() {
        let m = compute_metrics(&[vec![2, 0], vec![0, 5]]).unwrap();
        assert!(m.f1.iter().all(|&f| f == 1.0) && m.accuracy == 1.0 && m.weighted_f1 == 1.0);
        let m = compute_metrics(&[vec![0, 3], vec![0, 5]]).unwrap();
        assert_eq!(m.precision[0], 0.0);
        assert_eq!(m.f1[0], 0.0);
        assert!(matches!(
            compute_metrics(&[vec![0, 0], vec![0, 0]]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let truth = [0, 1, 2, 3, 0, 1, 2, 3];
        let m = compute_metrics(&confusion_matrix(&truth, &[2; 8], 4).unwrap()).unwrap();
        assert_eq!(m.accuracy, 0.25);
    }

    #[test]
    fn report_lists_every_class() {
        let m = compute_metrics(&[vec![1, 0], vec![1, 1]]).unwrap();
        let r = format_class_report(&m, &["phy".into(), "cse".into()]);
        assert!(r.contains("phy") && r.contains("cse") && r.contains("precision"));
    }

    proptest! {
        #[test]
        fn accuracy_equals_weighted_recall(cells in proptest::collection::vec(0u64..20, 16)) {
            prop_assume!(cells.iter().sum::<u64>() > 0);
            let conf: Vec<Vec<u64>> = cells.chunks(4).map(|r| r.to_vec()).collect();
            let m = compute_metrics(&conf).unwrap();
            let total: u64 = m.support.iter().sum();
            let weighted_recall: f64 =
                (0..4).map(|c| m.support[c] as f64 * m.recall[c]).sum::<f64>() / total as f64;
            prop_assert!((m.accuracy - weighted_recall).abs() < 1e-12);
            for s in m.precision.iter().chain(&m.recall).chain(&m.f1) {
                prop_assert!((0.0..=1.0).contains(s));
            }
        }
    }
}
