//! Confusion matrices and the classification metric suite.
//!
//! Binary metrics use the class-1-positive convention by default (the
//! positive class is configurable). For k > 2 every metric is computed
//! one-vs-rest per class and macro-averaged over the classes where it is
//! defined; the reported F1 is the harmonic mean of the reported precision
//! and sensitivity, so the harmonic-mean identity holds at both levels.
//!
//! A zero denominator yields an explicit undefined marker (`None`), never 0
//! or NaN; reports additionally carry a zero-collapsed compatibility value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are actual classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!(
                "confusion matrix needs at least 2 classes, got {k}"
            )));
        }
        Ok(ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual >= self.k || predicted >= self.k {
            return Err(Error::Contract(format!(
                "label out of range: actual {actual}, predicted {predicted}, k {}",
                self.k
            )));
        }
        self.counts[actual * self.k + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Diagonal sum: correctly classified samples.
    pub fn correct(&self) -> u64 {
        (0..self.k).map(|c| self.count(c, c)).sum()
    }

    /// One-vs-rest counts (tp, fp, fn, tn) for `class` as positive.
    pub fn binary_counts(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.count(class, class);
        let fp: u64 = (0..self.k)
            .filter(|&a| a != class)
            .map(|a| self.count(a, class))
            .sum();
        let fn_: u64 = (0..self.k)
            .filter(|&p| p != class)
            .map(|p| self.count(class, p))
            .sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k)
    }
}

/// Tally predicted/actual label lists into a confusion matrix.
pub fn confusion_from_labels(
    predicted: &[usize],
    actual: &[usize],
    k: usize,
) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::Contract(format!(
            "label lists differ in length: {} predicted vs {} actual",
            predicted.len(),
            actual.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k)?;
    for (&p, &a) in predicted.iter().zip(actual) {
        cm.record(a, p)?;
    }
    Ok(cm)
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn harmonic(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) => {
            if p + r == 0.0 {
                Some(0.0)
            } else {
                Some(2.0 * p * r / (p + r))
            }
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
    /// One-vs-rest values per class; present only for k > 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<ClassMetrics>>,
}

fn class_metrics(cm: &ConfusionMatrix, class: usize) -> ClassMetrics {
    let (tp, fp, fn_, tn) = cm.binary_counts(class);
    let precision = ratio(tp, tp + fp);
    let sensitivity = ratio(tp, tp + fn_);
    ClassMetrics {
        class,
        precision,
        sensitivity,
        f1: harmonic(precision, sensitivity),
        specificity: ratio(tn, tn + fp),
        fdr: ratio(fp, tp + fp),
    }
}

fn macro_average(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Full metric suite. `positive_class` selects the positive label for the
/// binary case and is ignored for k > 2.
pub fn compute_metrics(cm: &ConfusionMatrix, positive_class: usize) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("metrics over an empty evaluation".into()));
    }
    let accuracy = cm.correct() as f64 / total as f64;

    if cm.k() == 2 {
        if positive_class >= 2 {
            return Err(Error::Config(format!(
                "positive class {positive_class} out of range for k = 2"
            )));
        }
        let m = class_metrics(cm, positive_class);
        Ok(MetricsReport {
            accuracy,
            precision: m.precision,
            sensitivity: m.sensitivity,
            f1: m.f1,
            specificity: m.specificity,
            fdr: m.fdr,
            per_class: None,
        })
    } else {
        let per_class: Vec<ClassMetrics> = (0..cm.k()).map(|c| class_metrics(cm, c)).collect();
        let precision = macro_average(per_class.iter().map(|m| m.precision));
        let sensitivity = macro_average(per_class.iter().map(|m| m.sensitivity));
        Ok(MetricsReport {
            accuracy,
            precision,
            sensitivity,
            f1: harmonic(precision, sensitivity),
            specificity: macro_average(per_class.iter().map(|m| m.specificity)),
            fdr: macro_average(per_class.iter().map(|m| m.fdr)),
            per_class: Some(per_class),
        })
    }
}

/// Zero-collapsed view of an optional metric (compatibility with reports
/// that fold undefined cases to 0).
pub fn zero_collapsed(value: Option<f64>) -> f64 {
    value.unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        // Positive class is index 1: counts[actual][predicted].
        let mut cm = ConfusionMatrix::new(2).unwrap();
        for _ in 0..tp {
            cm.record(1, 1).unwrap();
        }
        for _ in 0..fp {
            cm.record(0, 1).unwrap();
        }
        for _ in 0..fn_ {
            cm.record(1, 0).unwrap();
        }
        for _ in 0..tn {
            cm.record(0, 0).unwrap();
        }
        cm
    }

    #[test]
    fn perfect_predictions_have_empty_off_diagonal() {
        let predicted = [0, 1, 2, 1, 0];
        let cm = confusion_from_labels(&predicted, &predicted, 3).unwrap();
        for a in 0..3 {
            for p in 0..3 {
                if a != p {
                    assert_eq!(cm.count(a, p), 0);
                }
            }
        }
        assert_eq!(cm.correct(), 5);
    }

    #[test]
    fn accuracy_matches_quoted_fractions() {
        // 6 errors out of 248 -> 0.9758 at four decimals.
        let cm = binary(120, 3, 3, 122);
        assert_eq!(cm.total(), 248);
        let report = compute_metrics(&cm, 1).unwrap();
        assert!((report.accuracy - 242.0 / 248.0).abs() < 1e-15);
        assert_eq!(format!("{:.4}", report.accuracy), "0.9758");

        // 469 correct of 490 -> 0.9571.
        let cm = binary(234, 10, 11, 235);
        assert_eq!(cm.total(), 490);
        let report = compute_metrics(&cm, 1).unwrap();
        assert_eq!(format!("{:.4}", report.accuracy), "0.9571");
    }

    #[test]
    fn three_class_fixture_matches_hand_tally() {
        let actual = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let predicted = [0, 1, 0, 1, 1, 2, 2, 2, 0];
        let cm = confusion_from_labels(&predicted, &actual, 3).unwrap();
        assert_eq!(cm.count(0, 0), 2);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(1, 2), 1);
        assert_eq!(cm.count(2, 2), 2);
        assert_eq!(cm.count(2, 0), 1);
        assert_eq!(cm.total(), 9);
        assert_eq!(cm.correct(), 6);
    }

    #[test]
    fn perfect_classifier_scores_one_everywhere() {
        let cm = binary(1, 0, 0, 1);
        let r = compute_metrics(&cm, 1).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.sensitivity, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(r.fdr, Some(0.0));
    }

    #[test]
    fn hand_evaluated_binary_metrics() {
        // TP=40, FP=10, FN=5, TN=45.
        let cm = binary(40, 10, 5, 45);
        let r = compute_metrics(&cm, 1).unwrap();
        assert!((r.precision.unwrap() - 0.8).abs() < 1e-12);
        assert!((r.sensitivity.unwrap() - 40.0 / 45.0).abs() < 1e-12);
        assert!((r.f1.unwrap() - 2.0 * 0.8 * (40.0 / 45.0) / (0.8 + 40.0 / 45.0)).abs() < 1e-12);
        assert!((r.f1.unwrap() - 0.8421052631578948).abs() < 1e-12);
        assert!((r.specificity.unwrap() - 45.0 / 55.0).abs() < 1e-12);
        assert!((r.accuracy - 0.85).abs() < 1e-12);
        assert!((r.fdr.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn f1_fixed_point_when_precision_equals_sensitivity() {
        let cm = binary(30, 10, 10, 50);
        let r = compute_metrics(&cm, 1).unwrap();
        assert_eq!(r.precision, r.sensitivity);
        assert!((r.f1.unwrap() - r.precision.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fdr_values_and_identity() {
        let cm = binary(5, 0, 2, 3);
        assert_eq!(compute_metrics(&cm, 1).unwrap().fdr, Some(0.0));

        // FP=1, TP=122 -> 1/123.
        let cm = binary(122, 1, 0, 125);
        let r = compute_metrics(&cm, 1).unwrap();
        assert!((r.fdr.unwrap() - 1.0 / 123.0).abs() < 1e-12);
        assert!((r.fdr.unwrap() - 0.008130081300813009).abs() < 1e-15);

        // fdr + precision = 1 whenever both are defined.
        for (tp, fp, fn_, tn) in [(40, 10, 5, 45), (1, 1, 1, 1), (7, 0, 3, 2)] {
            let r = compute_metrics(&binary(tp, fp, fn_, tn), 1).unwrap();
            if let (Some(f), Some(p)) = (r.fdr, r.precision) {
                assert!((f + p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_denominators_yield_undefined_markers() {
        // Never predicts positive: TP+FP = 0.
        let cm = binary(0, 0, 5, 5);
        let r = compute_metrics(&cm, 1).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.fdr, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.sensitivity, Some(0.0));
        assert_eq!(zero_collapsed(r.precision), 0.0);
    }

    #[test]
    fn degenerate_always_class_zero_predictor() {
        // Balanced set, everything predicted class 0; positive class is 1.
        let predicted = vec![0; 10];
        let actual: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let cm = confusion_from_labels(&predicted, &actual, 2).unwrap();
        let r = compute_metrics(&cm, 1).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.sensitivity, Some(0.0));
        assert_eq!(r.specificity, Some(1.0));
    }

    #[test]
    fn macro_metrics_for_three_classes() {
        let actual = [0, 0, 1, 1, 2, 2];
        let predicted = [0, 0, 1, 1, 2, 2];
        let r =
            compute_metrics(&confusion_from_labels(&predicted, &actual, 3).unwrap(), 1).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
        let per_class = r.per_class.unwrap();
        assert_eq!(per_class.len(), 3);
        assert!(per_class.iter().all(|m| m.precision == Some(1.0)));
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.6, 0.6]), 1);
        assert_eq!(argmax(&[0.0, 0.2, 0.8]), 2);
    }

    #[test]
    fn mismatched_label_lists_are_a_contract_error() {
        assert!(confusion_from_labels(&[0, 1], &[0], 2).is_err());
        assert!(confusion_from_labels(&[0, 3], &[0, 1], 2).is_err());
    }
}
