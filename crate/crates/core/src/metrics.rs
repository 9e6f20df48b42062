//! Classification metrics: overall accuracy, sensitivity, positive predictive
//! value, and F1, computed from confusion counts.
//!
//! Zero-denominator cases produce an explicit `None` ("undefined") rather than
//! a silent 0.0, and serialize as `null`; averaging code must not fold
//! undefined values into means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with respect to one designated positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub total: usize,
    pub positive_class: usize,
}

/// Count TP/FP/FN/TN of `positive_class` over parallel label vectors.
pub fn confusion(
    truth: &[usize],
    pred: &[usize],
    positive_class: usize,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            expected: format!("{} predictions", truth.len()),
            got: format!("{}", pred.len()),
        });
    }
    if positive_class >= num_classes {
        return Err(Error::invalid(format!(
            "positive class {positive_class} out of range for {num_classes} classes"
        )));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
        total: truth.len(),
        positive_class,
    };
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        if t >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!(
                "label out of range at index {i}: truth {t}, pred {p}, classes {num_classes}"
            )));
        }
        match (t == positive_class, p == positive_class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// The four reported quantities; `None` marks an undefined (0/0) value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: Option<f64>,
    pub sen: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Harmonic mean of sensitivity and precision; `None` when either is
/// undefined or both are zero.
pub fn f1_score(sen: Option<f64>, ppv: Option<f64>) -> Option<f64> {
    match (sen, ppv) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        _ => None,
    }
}

/// OA = (TP+TN)/N, Sen = TP/(TP+FN), PPV = TP/(TP+FP), F1 harmonic mean.
pub fn compute_metrics(c: &ConfusionCounts) -> MetricReport {
    let oa = ratio(c.tp + c.tn, c.total);
    let sen = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    MetricReport {
        oa,
        sen,
        ppv,
        f1: f1_score(sen, ppv),
    }
}

/// Metrics from raw label vectors. Binary problems report the designated
/// positive class; for more classes, Sen/PPV/F1 are macro-averaged over
/// one-vs-rest classes while OA stays plain accuracy. A macro average is
/// undefined when any per-class component is undefined.
pub fn evaluate_labels(
    truth: &[usize],
    pred: &[usize],
    num_classes: usize,
    positive_class: usize,
) -> Result<MetricReport> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if num_classes == 2 {
        return Ok(compute_metrics(&confusion(truth, pred, positive_class, 2)?));
    }
    let mut sens = Vec::with_capacity(num_classes);
    let mut ppvs = Vec::with_capacity(num_classes);
    let mut f1s = Vec::with_capacity(num_classes);
    let mut correct = 0;
    for (t, p) in truth.iter().zip(pred) {
        if t == p {
            correct += 1;
        }
    }
    for class in 0..num_classes {
        let m = compute_metrics(&confusion(truth, pred, class, num_classes)?);
        sens.push(m.sen);
        ppvs.push(m.ppv);
        f1s.push(m.f1);
    }
    let macro_mean = |vals: &[Option<f64>]| -> Option<f64> {
        let mut sum = 0.0;
        for v in vals {
            sum += (*v)?;
        }
        Some(sum / vals.len() as f64)
    };
    Ok(MetricReport {
        oa: ratio(correct, truth.len()),
        sen: macro_mean(&sens),
        ppv: macro_mean(&ppvs),
        f1: macro_mean(&f1s),
    })
}

/// Round to 4 decimals for display (ties away from zero, matching the usual
/// printed-table convention).
pub fn round4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

impl MetricReport {
    /// Copy with every defined value rounded to 4 decimals.
    pub fn rounded(&self) -> MetricReport {
        MetricReport {
            oa: self.oa.map(round4),
            sen: self.sen.map(round4),
            ppv: self.ppv.map(round4),
            f1: self.f1.map(round4),
        }
    }
}

/// Mean of several reports, component-wise. A component is undefined if it is
/// undefined in any input. Computed as a centered mean (first value plus mean
/// deviation from it), so identical inputs average to themselves exactly.
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let mean = |get: fn(&MetricReport) -> Option<f64>| -> Option<f64> {
        let first = get(reports.first()?)?;
        let mut dev = 0.0;
        for r in reports {
            dev += get(r)? - first;
        }
        Some(first + dev / reports.len() as f64)
    };
    MetricReport {
        oa: mean(|r| r.oa),
        sen: mean(|r| r.sen),
        ppv: mean(|r| r.ppv),
        f1: mean(|r| r.f1),
    }
}
