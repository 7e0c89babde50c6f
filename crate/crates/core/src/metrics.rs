//! Classification reports in the layout of the evaluation tables:
//! per-class precision, recall, F1 and support, macro and weighted averages,
//! and accuracy. Undefined ratios (zero denominators) are reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Answer;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("confusion matrix must be {n}x{n}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Reorders classes: new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        ConfusionMatrix {
            classes: order.iter().map(|&i| self.classes[i].clone()).collect(),
            counts: order
                .iter()
                .map(|&i| order.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }
}

/// Builds the confusion matrix of label indices into `classes`.
pub fn confusion(truths: &[usize], predictions: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes.to_vec());
    let n = classes.len();
    for (&t, &p) in truths.iter().zip(predictions) {
        for label in [t, p] {
            if label >= n {
                return Err(Error::UnknownLabel(label.to_string()));
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Like [`confusion`] with labels given by name.
pub fn confusion_named<S: AsRef<str>>(
    truths: &[S],
    predictions: &[S],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    let index = |s: &S| {
        classes
            .iter()
            .position(|c| c == s.as_ref())
            .ok_or_else(|| Error::UnknownLabel(s.as_ref().to_string()))
    };
    if truths.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    let t = truths.iter().map(index).collect::<Result<Vec<_>>>()?;
    let p = predictions.iter().map(index).collect::<Result<Vec<_>>>()?;
    confusion(&t, &p, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn report(cm: &ConfusionMatrix) -> ClassificationReport {
    let n = cm.classes.len();
    let total = cm.total();
    let classes: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = cm.counts[i][i];
            let precision = ratio(tp, cm.col_sum(i));
            let recall = ratio(tp, cm.row_sum(i));
            ClassMetrics {
                name: cm.classes[i].clone(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: cm.row_sum(i),
            }
        })
        .collect();

    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
        }
    };
    let accuracy = ratio(cm.trace(), total);
    ClassificationReport {
        macro_avg: Averages {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
        },
        weighted_avg: Averages {
            precision: weighted(|c| c.precision),
            // support * (tp / support) summed over classes is the trace.
            recall: accuracy,
            f1: weighted(|c| c.f1),
        },
        accuracy,
        total,
        classes,
    }
}

/// Micro-averaged F1. For single-label data this is the accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> f64 {
    let tp = cm.trace();
    let total = cm.total();
    // Every miss is one false positive and one false negative.
    f1(ratio(tp, total), ratio(tp, total))
}

/// Formats a rate as a percentage with two decimals, rounding half to even.
pub fn percent(rate: f64) -> String {
    format!("{:.2}", (rate * 10_000.0).round_ties_even() / 100.0)
}

impl ClassificationReport {
    pub fn macro_f1(&self) -> f64 {
        self.macro_avg.f1
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Column-aligned text table, rates in percent.
    pub fn to_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "precision", "recall", "f1-score", "support"
        );
        let row = |out: &mut String, name: &str, p: f64, r: f64, f: f64, s: u64| {
            let _ = writeln!(
                out,
                "{name:width$}  {:>9}  {:>9}  {:>9}  {s:>9}",
                percent(p),
                percent(r),
                percent(f)
            );
        };
        for c in &self.classes {
            row(&mut out, &c.name, c.precision, c.recall, c.f1, c.support);
        }
        out.push('\n');
        let m = self.macro_avg;
        row(&mut out, "macro avg", m.precision, m.recall, m.f1, self.total);
        let w = self.weighted_avg;
        row(&mut out, "weighted avg", w.precision, w.recall, w.f1, self.total);
        let _ = writeln!(
            out,
            "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "accuracy",
            "",
            "",
            percent(self.accuracy),
            self.total
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Yes/no evaluation with each answer taken as the positive class in turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub yes: LabelMetrics,
    pub no: LabelMetrics,
    pub accuracy: f64,
    pub total: u64,
}

pub fn pope_report(truths: &[Answer], answers: &[Answer]) -> Result<PopeReport> {
    if truths.len() != answers.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            actual: answers.len(),
        });
    }
    let code = |a: &Answer| match a {
        Answer::Yes => Ok(0),
        Answer::No => Ok(1),
        Answer::Other => Err(Error::NonBinary),
    };
    let t = truths.iter().map(code).collect::<Result<Vec<_>>>()?;
    let p = answers.iter().map(code).collect::<Result<Vec<_>>>()?;
    let cm = confusion(&t, &p, &["Yes".to_string(), "No".to_string()])?;
    let r = report(&cm);
    let label = |c: &ClassMetrics| LabelMetrics {
        precision: c.precision,
        recall: c.recall,
        f1: c.f1,
    };
    Ok(PopeReport {
        yes: label(&r.classes[0]),
        no: label(&r.classes[1]),
        accuracy: r.accuracy,
        total: r.total,
    })
}

impl PopeReport {
    pub const HEADER: &'static str = "Yes-P\tYes-R\tYes-F1\tNo-P\tNo-R\tNo-F1\tAccuracy";

    /// One tab-separated row in percent, matching [`PopeReport::HEADER`].
    pub fn to_row(&self) -> String {
        [
            self.yes.precision,
            self.yes.recall,
            self.yes.f1,
            self.no.precision,
            self.no.recall,
            self.no.f1,
            self.accuracy,
        ]
        .iter()
        .map(|&v| percent(v))
        .collect::<Vec<_>>()
        .join("\t")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(names(counts.len()), counts).unwrap()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 5e-5, "{a} vs {b}");
    }

    #[test]
    fn confusion_counts() {
        let c = confusion(&[0, 0, 1], &[0, 1, 1], &names(2)).unwrap();
        assert_eq!(c.counts, vec![vec![1, 1], vec![0, 1]]);
        let perfect = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], &names(3)).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let empty = confusion(&[], &[], &names(2)).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(matches!(confusion(&[0], &[], &names(2)), Err(Error::LengthMismatch { .. })));
        assert!(matches!(confusion(&[0], &[2], &names(2)), Err(Error::UnknownLabel(_))));
        let named = confusion_named(&["c1", "c0"], &["c1", "c1"], &names(2)).unwrap();
        assert_eq!(named.counts, vec![vec![0, 1], vec![0, 1]]);
        assert!(matches!(
            confusion_named(&["x"], &["c0"], &names(2)),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn two_by_two_oracle() {
        let r = report(&cm(vec![vec![8, 2], vec![1, 9]]));
        close(r.classes[0].precision, 0.8889);
        close(r.classes[0].recall, 0.8);
        close(r.classes[0].f1, 0.8421);
        close(r.classes[1].precision, 0.8182);
        close(r.classes[1].recall, 0.9);
        close(r.classes[1].f1, 0.8571);
        assert_eq!(r.accuracy, 0.85);
        assert_eq!(r.classes[0].support, 10);

        let perfect = report(&cm(vec![vec![2, 0], vec![0, 2]]));
        for c in &perfect.classes {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(perfect.accuracy, 1.0);
    }

    #[test]
    fn zero_denominators_give_zero_and_still_count() {
        // Class 2 never occurs and is never predicted.
        let r = report(&cm(vec![vec![3, 1, 0], vec![0, 4, 0], vec![0, 0, 0]]));
        assert_eq!(r.classes[2].precision, 0.0);
        assert_eq!(r.classes[2].recall, 0.0);
        assert_eq!(r.classes[2].f1, 0.0);
        close(r.macro_avg.recall, (0.75 + 1.0) / 3.0);
        let empty = report(&cm(vec![vec![0, 0], vec![0, 0]]));
        assert_eq!(empty.accuracy, 0.0);
        assert_eq!(empty.weighted_avg.f1, 0.0);
    }

    #[test]
    fn percent_rounds_half_to_even() {
        assert_eq!(percent(0.85), "85.00");
        assert_eq!(percent(0.938_6), "93.86");
        assert_eq!(percent(0.000_125), "0.01");
        assert_eq!(percent(0.000_135), "0.01");
        assert_eq!(percent(1.0), "100.00");
        assert_eq!(percent(0.873_1), "87.31");
    }

    #[test]
    fn table_layout() {
        let mut m = cm(vec![vec![8, 2], vec![1, 9]]);
        m.classes = vec!["A_Y".into(), "A_YH".into()];
        let t = report(&m).to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].ends_with("precision     recall   f1-score    support"));
        assert!(lines[1].starts_with("A_Y "));
        assert!(lines[1].contains("88.89") && lines[1].ends_with("10"));
        assert!(lines[4].starts_with("macro avg"));
        assert!(lines[5].starts_with("weighted avg"));
        assert!(lines[6].starts_with("accuracy") && lines[6].contains("85.00"));
        let json: serde_json::Value = serde_json::from_str(&report(&m).to_json()).unwrap();
        assert_eq!(json["accuracy"], 0.85);
        assert_eq!(json["classes"][1]["name"], "A_YH");
    }

    #[test]
    fn pope_oracle() {
        use Answer::{No as N, Yes as Y};
        let r = pope_report(&[Y, Y, N, N], &[Y, N, N, N]).unwrap();
        assert_eq!((r.yes.precision, r.yes.recall), (1.0, 0.5));
        close(r.yes.f1, 0.6667);
        close(r.no.precision, 2.0 / 3.0);
        assert_eq!(r.no.recall, 1.0);
        close(r.no.f1, 0.8);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.to_row(), "100.00\t50.00\t66.67\t66.67\t100.00\t80.00\t75.00");

        let all = pope_report(&[Y, N], &[Y, N]).unwrap();
        assert_eq!((all.yes.f1, all.no.f1, all.accuracy), (1.0, 1.0, 1.0));
        let flipped = pope_report(&[Y, N, N], &[N, Y, Y]).unwrap();
        assert_eq!((flipped.yes.precision, flipped.yes.recall), (0.0, 0.0));
        assert_eq!((flipped.no.precision, flipped.no.recall), (0.0, 0.0));
        assert_eq!(flipped.accuracy, 0.0);
        assert!(matches!(pope_report(&[Y], &[Answer::Other]), Err(Error::NonBinary)));
    }

    fn matrices() -> impl Strategy<Value = ConfusionMatrix> {
        (1usize..6).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(0u64..50, n), n).prop_map(cm)
        })
    }

    proptest! {
        #[test]
        fn weighted_recall_and_micro_f1_equal_accuracy(m in matrices()) {
            let r = report(&m);
            prop_assert_eq!(r.weighted_avg.recall, r.accuracy);
            prop_assert!((micro_f1(&m) - r.accuracy).abs() < 1e-12);
            for c in &r.classes {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            prop_assert_eq!(r.classes.iter().map(|c| c.support).sum::<u64>(), m.total());
        }

        #[test]
        fn permutation_keeps_aggregates(m in matrices(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..m.classes.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = report(&m);
            let b = report(&m.permuted(&order));
            for (i, &o) in order.iter().enumerate() {
                prop_assert_eq!(&b.classes[i], &a.classes[o]);
            }
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
            prop_assert!((a.weighted_avg.precision - b.weighted_avg.precision).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn self_confusion_is_perfect(labels in prop::collection::vec(0usize..4, 1..40)) {
            let m = confusion(&labels, &labels, &names(4)).unwrap();
            prop_assert_eq!(report(&m).accuracy, 1.0);
        }
    }
}
