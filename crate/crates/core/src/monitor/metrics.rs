use std::fmt;

use serde::{Deserialize, Serialize};

use crate::TrafficClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: TrafficClass,
    /// Ground-truth count (row sum).
    pub support: u64,
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    /// `None` when the class never occurs.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Confusion matrix (rows: ground truth, columns: prediction) and derived
/// scores. Ratios are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: [[u64; 4]; 4],
    pub total: u64,
    pub correct: u64,
    pub misclassified: u64,
    pub accuracy: f64,
    /// Benign samples predicted as any attack class.
    pub false_positives: u64,
    pub false_positive_rate: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[u64; 4]; 4]) -> MetricsReport {
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..4).map(|i| confusion[i][i]).sum();
        let benign = TrafficClass::Benign.index();
        let benign_total: u64 = confusion[benign].iter().sum();
        let false_positives = benign_total - confusion[benign][benign];
        let ratio = |n: u64, d: u64| if d == 0 { None } else { Some(n as f64 / d as f64) };
        let per_class = TrafficClass::ALL
            .iter()
            .map(|&class| {
                let i = class.index();
                let tp = confusion[i][i];
                let support: u64 = confusion[i].iter().sum();
                let predicted: u64 = (0..4).map(|r| confusion[r][i]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = match (precision, recall) {
                    (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                    (Some(_), Some(_)) => Some(0.0),
                    _ => None,
                };
                ClassMetrics {
                    class,
                    support,
                    precision,
                    recall,
                    f1,
                }
            })
            .collect();
        MetricsReport {
            confusion,
            total,
            correct,
            misclassified: total - correct,
            accuracy: ratio(correct, total).unwrap_or(0.0),
            false_positives,
            false_positive_rate: ratio(false_positives, benign_total).unwrap_or(0.0),
            per_class,
        }
    }

    pub fn class(&self, class: TrafficClass) -> &ClassMetrics {
        &self.per_class[class.index()]
    }
}

/// Build the report from `(ground truth, prediction)` pairs.
pub fn compute_metrics(
    pairs: impl IntoIterator<Item = (TrafficClass, TrafficClass)>,
) -> MetricsReport {
    let mut m = [[0u64; 4]; 4];
    for (truth, predicted) in pairs {
        m[truth.index()][predicted.index()] += 1;
    }
    MetricsReport::from_confusion(m)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10} {:>10} {:>10} {:>10}", "truth\\pred", "Benign", "DoS", "Fuzzing", "Spoof")?;
        for c in TrafficClass::ALL {
            let row = &self.confusion[c.index()];
            writeln!(f, "{:<10} {:>10} {:>10} {:>10} {:>10}", c.name(), row[0], row[1], row[2], row[3])?;
        }
        writeln!(f)?;
        writeln!(f, "{:<10} {:>10} {:>10} {:>10}", "class", "precision", "recall", "f1")?;
        for m in &self.per_class {
            writeln!(f, "{:<10} {:>10} {:>10} {:>10}", m.class.name(), pct(m.precision), pct(m.recall), pct(m.f1))?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "accuracy {:.2}%  misclassified {}/{}  false positives {}",
            self.accuracy * 100.0,
            self.misclassified,
            self.total,
            self.false_positives
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TrafficClass::*;

    #[test]
    fn perfect_predictions() {
        let pairs = TrafficClass::ALL.iter().flat_map(|&c| std::iter::repeat_n((c, c), 5));
        let r = compute_metrics(pairs);
        assert_eq!(r.accuracy, 1.0);
        for c in &r.per_class {
            assert_eq!((c.precision, c.recall, c.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.confusion[i][j], if i == j { 5 } else { 0 });
            }
        }
    }

    #[test]
    fn all_benign() {
        let r = compute_metrics(std::iter::repeat_n((Benign, Benign), 10));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.false_positives, 0);
        assert_eq!(r.class(Dos).support, 0);
        assert_eq!(r.class(Dos).recall, None);
    }

    #[test]
    fn rows_are_supports_and_recomputable() {
        let pairs = [
            (Benign, Benign),
            (Benign, Dos),
            (Dos, Dos),
            (Fuzzing, Benign),
            (Spoof, Spoof),
        ];
        let r = compute_metrics(pairs);
        assert_eq!(r.class(Benign).support, 2);
        assert_eq!(r.false_positives, 1);
        assert_eq!(r.correct, 3);
        assert_eq!(r.class(Dos).precision, Some(0.5));
        assert_eq!(r.accuracy, r.correct as f64 / r.total as f64);
    }
}
