use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a BinaryLabel, &'a BinaryLabel)>,
    {
        let mut c = ConfusionCounts::default();
        for (pred, truth) in pairs {
            match (pred.is_positive(), truth.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any of the three ratios had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

/// Precision, recall and F1 of the positive class.
pub fn prf1(c: &ConfusionCounts) -> Prf1 {
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let (f1, z) = f1_parts(precision, recall);
    Prf1 {
        precision,
        recall,
        f1,
        zero_division: zero_division || z,
    }
}

fn f1_parts(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

/// Harmonic mean of a precision and a recall.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    f1_parts(precision, recall).0
}
