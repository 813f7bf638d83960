//! Accuracy and per-class precision, recall and F1 from a 2x2 confusion matrix.

use serde::{Deserialize, Serialize};

/// `counts[true][predicted]`, class 0 is fake.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Self {
        assert_eq!(labels.len(), predictions.len(), "label and prediction counts differ");
        let mut c = Self::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            c.counts[y][p] += 1;
        }
        c
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    /// Treats `class` as the positive class. Undefined ratios are 0.
    pub fn for_class(c: &Confusion, class: usize) -> Self {
        let other = 1 - class;
        let tp = c.counts[class][class];
        let fp = c.counts[other][class];
        let fn_ = c.counts[class][other];
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        Self {
            accuracy: ratio(confusion.correct(), confusion.total()),
            fake: ClassMetrics::for_class(&confusion, 0),
            real: ClassMetrics::for_class(&confusion, 1),
            confusion,
        }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Self {
        Self::from_confusion(Confusion::from_predictions(labels, predictions))
    }

    pub const CSV_HEADER: &'static str = "accuracy,fake_precision,fake_recall,fake_f1,real_precision,real_recall,real_f1,fake_as_fake,fake_as_real,real_as_fake,real_as_real";

    /// Fields in [`Metrics::CSV_HEADER`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        let c = self.confusion.counts;
        vec![
            self.accuracy.to_string(),
            self.fake.precision.to_string(),
            self.fake.recall.to_string(),
            self.fake.f1.to_string(),
            self.real.precision.to_string(),
            self.real.recall.to_string(),
            self.real.f1.to_string(),
            c[0][0].to_string(),
            c[0][1].to_string(),
            c[1][0].to_string(),
            c[1][1].to_string(),
        ]
    }
}
