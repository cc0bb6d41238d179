use std::fmt::Write as _;

use serde::Serialize;

use super::model::{Model, Sample};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
}

/// Classification quality of one evaluation.
///
/// `confusion[i][j]` counts samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: u64,
    pub accuracy: f64,
    /// Support-weighted mean of the per-class F1 scores.
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Builds the report from true and predicted labels. Precision of a
    /// class that is never predicted, and F1 of a class with zero precision
    /// and recall, are 0.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("EvalReport", truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::Input("no samples to evaluate".into()));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for y in [t, p] {
                if y >= classes {
                    return Err(Error::Index {
                        what: "class",
                        index: y,
                        len: classes,
                    });
                }
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let classes = confusion.len();
        let n: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..classes)
            .map(|c| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    class: c,
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let weighted_f1 = if n == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / n as f64
        };
        Self {
            samples: n,
            accuracy: ratio(correct, n),
            weighted_f1,
            per_class,
            confusion,
        }
    }

    /// Confusion matrix as an aligned text table, true classes down the side.
    pub fn confusion_table(&self) -> String {
        let width = self
            .confusion
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain([4, self.confusion.len().to_string().len() + 1])
            .max()
            .unwrap_or(4);
        let mut s = format!("{:>w$}", "t\\p", w = width);
        for c in 0..self.confusion.len() {
            write!(s, " {:>w$}", format!("p{c}"), w = width).unwrap();
        }
        s.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            write!(s, "{:>w$}", format!("t{c}"), w = width).unwrap();
            for v in row {
                write!(s, " {v:>w$}", w = width).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Mean of several reports: every rate is the arithmetic mean over reports,
/// supports and confusion counts are summed.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::Input("no reports to average".into()))?;
    let classes = first.confusion.len();
    if reports.iter().any(|r| r.confusion.len() != classes) {
        return Err(Error::Input("reports disagree on class count".into()));
    }
    let k = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let mut confusion = vec![vec![0u64; classes]; classes];
    for r in reports {
        for (acc, row) in confusion.iter_mut().zip(&r.confusion) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let per_class = (0..classes)
        .map(|c| ClassMetrics {
            class: c,
            precision: mean(&|r| r.per_class[c].precision),
            recall: mean(&|r| r.per_class[c].recall),
            f1: mean(&|r| r.per_class[c].f1),
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
        })
        .collect();
    Ok(EvalReport {
        samples: reports.iter().map(|r| r.samples).sum(),
        accuracy: mean(&|r| r.accuracy),
        weighted_f1: mean(&|r| r.weighted_f1),
        per_class,
        confusion,
    })
}

/// Predicts every sample with a frozen model and scores the predictions.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let predicted = par::map_slice(samples, |s| model.predict(s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    EvalReport::from_predictions(&truth, &predicted, model.config.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0, 0];
        let r = EvalReport::from_predictions(&y, &y, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn single_class_always_predicted() {
        let r = EvalReport::from_predictions(&[1; 5], &[1; 5], 3).unwrap();
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.per_class[0].precision, 0.0);
        assert_eq!(r.per_class[0].support, 0);
    }

    /// Hand-worked six-sample case.
    ///
    /// class 0: P = 2/2, R = 2/3, F1 = 0.8, support 3
    /// class 1: P = 1/2, R = 1/2, F1 = 0.5, support 2
    /// class 2: P = 1/2, R = 1/1, F1 = 2/3, support 1
    /// weighted F1 = (3*0.8 + 2*0.5 + 2/3) / 6
    #[test]
    fn six_sample_weighted_f1() {
        let truth = [0, 0, 0, 1, 1, 2];
        let pred = [0, 0, 1, 1, 2, 2];
        let r = EvalReport::from_predictions(&truth, &pred, 3).unwrap();
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);
        let expected = (3.0 * 0.8 + 2.0 * 0.5 + 2.0 / 3.0) / 6.0;
        assert!((r.weighted_f1 - expected).abs() < 1e-12);
        assert!((r.per_class[0].recall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].precision, 0.5);
        assert_eq!(r.confusion, vec![vec![2, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        let rows: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![3, 2, 1]);
        assert_eq!(r.samples, 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(EvalReport::from_predictions(&[], &[], 2), Err(Error::Input(_))));
        assert!(matches!(
            EvalReport::from_predictions(&[0, 3], &[0, 1], 2),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn mean_of_reports() {
        let a = EvalReport::from_predictions(&[0, 1], &[0, 1], 2).unwrap();
        let b = EvalReport::from_predictions(&[0, 1, 1], &[1, 1, 1], 2).unwrap();
        let m = mean_report(&[a.clone(), b.clone()]).unwrap();
        assert!((m.accuracy - (a.accuracy + b.accuracy) / 2.0).abs() < 1e-15);
        assert!((m.weighted_f1 - (a.weighted_f1 + b.weighted_f1) / 2.0).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 3]]);
        assert_eq!(m.samples, 5);
    }

    #[test]
    fn table_is_aligned() {
        let r = EvalReport::from_predictions(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        let t = r.confusion_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[1].starts_with("  t0"));
    }
}
