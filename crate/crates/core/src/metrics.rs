//! Instance-level classification metrics with an ordinal error measure.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Ordering of classes used for rank errors: `order[r]` is the 0-based
/// class at rank `r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl ClassOrder {
    pub fn identity(classes: usize) -> Self {
        let order: Vec<usize> = (0..classes).collect();
        ClassOrder {
            rank: order.clone(),
            order,
        }
    }

    /// From 0-based classes listed by rank; must be a permutation.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let k = order.len();
        let mut rank = vec![usize::MAX; k];
        for (r, &c) in order.iter().enumerate() {
            if c >= k || rank[c] != usize::MAX {
                return Err(Error::InvalidParameter(format!(
                    "class order {order:?} is not a permutation"
                )));
            }
            rank[c] = r;
        }
        Ok(ClassOrder { order, rank })
    }

    /// Parses a comma-separated list of 1-based classes, e.g. `2,1,5,4,3`.
    pub fn parse(s: &str, classes: usize) -> Result<Self> {
        let order = s
            .split(',')
            .map(|t| match t.trim().parse::<usize>() {
                Ok(c) if c >= 1 => Ok(c - 1),
                _ => Err(Error::InvalidParameter(format!("bad class `{t}` in class order"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if order.len() != classes {
            return Err(Error::LengthMismatch {
                expected: classes,
                actual: order.len(),
            });
        }
        Self::new(order)
    }

    pub fn rank(&self, class: usize) -> usize {
        self.rank[class]
    }

    pub fn classes(&self) -> usize {
        self.order.len()
    }

    /// 1-based, comma separated.
    pub fn to_list(&self) -> String {
        self.order
            .iter()
            .map(|c| (c + 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Percent of correctly classified instances.
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub rmse: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub class_order: ClassOrder,
    pub evaluated: usize,
    pub excluded: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores 0-based predictions against truth; `None` truths are skipped.
///
/// Precision, recall and F1 are computed per class and then averaged
/// (macro); a class with an empty denominator scores 0.
pub fn evaluate(
    predicted: &[usize],
    truth: &[Option<usize>],
    classes: usize,
    order: &ClassOrder,
) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if order.classes() != classes {
        return Err(Error::LengthMismatch {
            expected: classes,
            actual: order.classes(),
        });
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut sq_err = 0.0;
    let mut evaluated = 0usize;
    for (&p, t) in predicted.iter().zip(truth) {
        let Some(t) = *t else { continue };
        for c in [p, t] {
            if c >= classes {
                return Err(Error::ClassOutOfRange {
                    index: c + 1,
                    classes,
                });
            }
        }
        confusion[t][p] += 1;
        let d = order.rank(p) as f64 - order.rank(t) as f64;
        sq_err += d * d;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableInstances);
    }
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for k in 0..classes {
        let tp = confusion[k][k];
        let predicted_k: usize = (0..classes).map(|t| confusion[t][k]).sum();
        let actual_k: usize = confusion[k].iter().sum();
        let p = ratio(tp, predicted_k);
        let r = ratio(tp, actual_k);
        precision += p;
        recall += r;
        if p + r > 0.0 {
            f1 += 2.0 * p * r / (p + r);
        }
    }
    let kf = classes as f64;
    Ok(MetricsReport {
        accuracy: 100.0 * ratio(correct, evaluated),
        recall: recall / kf,
        precision: precision / kf,
        f1: f1 / kf,
        rmse: (sq_err / evaluated as f64).sqrt(),
        confusion,
        class_order: order.clone(),
        evaluated,
        excluded: truth.len() - evaluated,
    })
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 5] = ["accuracy", "recall", "precision", "f1", "rmse"];

    fn row(&self) -> [f64; 5] {
        [self.accuracy, self.recall, self.precision, self.f1, self.rmse]
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>12} {:>9} {:>9} {:>9} {:>9}",
            "Accuracy[%]", "Recall", "Precision", "F1", "RMSE"
        );
        let _ = writeln!(
            s,
            "{:>12.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            self.accuracy, self.recall, self.precision, self.f1, self.rmse
        );
        let _ = writeln!(
            s,
            "evaluated={} excluded={} class_order={}",
            self.evaluated,
            self.excluded,
            self.class_order.to_list()
        );
        s
    }

    /// Header `accuracy,recall,precision,f1,rmse` and one value row.
    pub fn to_csv(&self) -> String {
        let vals: Vec<String> = self.row().iter().map(|v| v.to_string()).collect();
        format!("{}\n{}\n", Self::COLUMNS.join(","), vals.join(","))
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::COLUMNS.iter().zip(self.row()) {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "evaluated={}", self.evaluated);
        let _ = writeln!(s, "excluded={}", self.excluded);
        let _ = writeln!(s, "class_order={}", self.class_order.to_list());
        s
    }

    /// Rows are true classes, columns predicted classes (1-based labels).
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\pred");
        for c in 1..=k {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{}", t + 1);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth: Vec<Option<usize>> = (0..10).map(|i| Some(i % 5)).collect();
        let pred: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let r = evaluate(&pred, &truth, 5, &ClassOrder::identity(5)).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn off_by_one_rank_everywhere() {
        let truth: Vec<Option<usize>> = (0..20).map(|i| Some(i % 4)).collect();
        let pred: Vec<usize> = (0..20).map(|i| (i % 4) + 1).collect();
        let r = evaluate(&pred, &truth, 5, &ClassOrder::identity(5)).unwrap();
        assert_eq!(r.rmse, 1.0);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn unknown_truth_is_excluded() {
        let r = evaluate(&[0, 1, 2], &[Some(0), None, Some(2)], 3, &ClassOrder::identity(3)).unwrap();
        assert_eq!(r.evaluated, 2);
        assert_eq!(r.excluded, 1);
        assert_eq!(r.accuracy, 100.0);
        assert!(matches!(
            evaluate(&[0, 1], &[None, None], 3, &ClassOrder::identity(3)),
            Err(Error::NoEvaluableInstances)
        ));
    }

    #[test]
    fn confusion_sums_and_trace_accuracy() {
        let truth: Vec<Option<usize>> = [0, 1, 2, 2, 1, 0, 0].iter().map(|&c| Some(c)).collect();
        let pred = [0, 2, 2, 1, 1, 1, 0];
        let r = evaluate(&pred, &truth, 3, &ClassOrder::identity(3)).unwrap();
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(total, 7);
        let trace: usize = (0..3).map(|k| r.confusion[k][k]).sum();
        assert!((r.accuracy - 100.0 * trace as f64 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_uses_class_order_ranks() {
        // 1-based order 2,1,3 swaps the ranks of the first two classes
        let order = ClassOrder::parse("2,1,3", 3).unwrap();
        let r = evaluate(&[2], &[Some(1)], 3, &order).unwrap();
        assert_eq!(r.rmse, 2.0);
        assert!(ClassOrder::parse("1,1,2", 3).is_err());
        assert!(ClassOrder::parse("1,2", 3).is_err());
        assert!(ClassOrder::parse("0,1,2", 3).is_err());
    }

    #[test]
    fn serializations() {
        let r = evaluate(&[0, 1], &[Some(0), Some(0)], 2, &ClassOrder::identity(2)).unwrap();
        assert!(r.to_csv().starts_with("accuracy,recall,precision,f1,rmse\n50,"));
        assert_eq!(r.confusion_csv(), "true\\pred,1,2\n1,1,1\n2,0,0\n");
        assert!(r.to_key_values().contains("rmse=0.7071067811865476\n"));
    }
}
