//! Confusion counts and summary statistics with class B as the positive
//! class.

use std::fmt;

use rayon::prelude::*;

use crate::data::{pnm, Label, Sample};
use crate::engine::EngineError;
use crate::net::Network;
use crate::tensor::Tensor;

pub const METRICS_CSV_HEADER: &str = "fold,arch,split,tp,fp,tn,fn,sens,spec,acc,prec,f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::B, Label::B) => self.tp += 1,
            (Label::A, Label::B) => self.fp += 1,
            (Label::A, Label::A) => self.tn += 1,
            (Label::B, Label::A) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn merge(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// `num / den` as a percentage, or 0 when `den` is 0.
fn pct(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

/// Harmonic mean of two percentages, or 0 when both are 0.
pub fn f1_from(precision: f64, sensitivity: f64) -> f64 {
    let den = precision + sensitivity;
    if den == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / den
    }
}

/// Statistics are percentages, kept unrounded.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `None` for an aggregate over folds.
    pub fold: Option<usize>,
    pub counts: Confusion,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    /// Names of statistics whose denominator was zero (reported as 0).
    pub degenerate: Vec<&'static str>,
}

impl MetricsReport {
    pub fn from_counts(fold: Option<usize>, counts: Confusion) -> Self {
        let Confusion { tp, fp, tn, fn_ } = counts;
        let mut degenerate = Vec::new();
        let mut stat = |name, num, den| {
            let (v, bad) = pct(num, den);
            if bad {
                degenerate.push(name);
            }
            v
        };
        let sensitivity = stat("sensitivity", tp, tp + fn_);
        let specificity = stat("specificity", tn, tn + fp);
        let accuracy = stat("accuracy", tp + tn, counts.total());
        let precision = stat("precision", tp, tp + fp);
        let f1 = f1_from(precision, sensitivity);
        if precision + sensitivity == 0.0 {
            degenerate.push("f1");
        }
        Self {
            fold,
            counts,
            sensitivity,
            specificity,
            accuracy,
            precision,
            f1,
            degenerate,
        }
    }

    /// A report built from published statistics alone (counts unknown).
    pub fn from_statistics(fold: Option<usize>, sens: f64, spec: f64, acc: f64, prec: f64, f1: f64) -> Self {
        Self {
            fold,
            counts: Confusion::default(),
            sensitivity: sens,
            specificity: spec,
            accuracy: acc,
            precision: prec,
            f1,
            degenerate: Vec::new(),
        }
    }

    pub fn csv_row(&self, arch: &str, split: &str) -> String {
        let fold = self.fold.map_or_else(|| "all".to_string(), |f| f.to_string());
        let c = self.counts;
        format!(
            "{fold},{arch},{split},{},{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1}",
            c.tp, c.fp, c.tn, c.fn_, self.sensitivity, self.specificity, self.accuracy, self.precision, self.f1
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fold {
            Some(k) => write!(f, "fold {k}: ")?,
            None => write!(f, "average: ")?,
        }
        let c = self.counts;
        write!(
            f,
            "TP={} FP={} TN={} FN={} sens={:.1} spec={:.1} acc={:.1} prec={:.1} F1={:.1}",
            c.tp, c.fp, c.tn, c.fn_, self.sensitivity, self.specificity, self.accuracy, self.precision, self.f1
        )
    }
}

/// Macro average: the unweighted mean of each statistic over folds. Counts
/// are summed.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<MetricsReport, EngineError> {
    if reports.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    if reports.len() == 1 {
        return Ok(reports[0].clone());
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        fold: None,
        counts: reports.iter().map(|r| r.counts).fold(Confusion::default(), Confusion::merge),
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        f1: mean(|r| r.f1),
        degenerate: Vec::new(),
    })
}

/// An image in memory with its ground truth.
#[derive(Debug, Clone)]
pub struct LabelledImage {
    pub image: Tensor<f32>,
    pub label: Label,
}

/// Reads every sample, in parallel, preserving order.
pub fn load_images(samples: &[&Sample]) -> Result<Vec<LabelledImage>, EngineError> {
    samples
        .par_iter()
        .map(|s| {
            Ok(LabelledImage {
                image: pnm::read_image(&s.resolved)?,
                label: s.label,
            })
        })
        .collect()
}

/// Confusion counts of `net` over preloaded images. Prediction is the argmax
/// of the final probabilities, ties going to class A.
pub fn confusion(net: &Network<f32>, images: &[LabelledImage]) -> Result<Confusion, EngineError> {
    if images.is_empty() {
        return Err(EngineError::EmptySplit);
    }
    images
        .par_iter()
        .map(|s| {
            let k = net.predict_class(&s.image)?;
            let predicted = Label::from_class_index(k).unwrap_or(Label::B);
            let mut c = Confusion::default();
            c.record(s.label, predicted);
            Ok(c)
        })
        .try_reduce(Confusion::default, |a, b| Ok(a.merge(b)))
}

pub fn evaluate_images(
    net: &Network<f32>,
    images: &[LabelledImage],
    fold: Option<usize>,
) -> Result<MetricsReport, EngineError> {
    Ok(MetricsReport::from_counts(fold, confusion(net, images)?))
}

pub fn evaluate(net: &Network<f32>, samples: &[&Sample], fold: Option<usize>) -> Result<MetricsReport, EngineError> {
    if samples.is_empty() {
        return Err(EngineError::EmptySplit);
    }
    evaluate_images(net, &load_images(samples)?, fold)
}

/// Statistic used to rank snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    F1,
    Accuracy,
}

impl std::str::FromStr for Selection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f1" => Ok(Selection::F1),
            "accuracy" | "acc" => Ok(Selection::Accuracy),
            other => Err(format!("selection `{other}` is not f1 or accuracy")),
        }
    }
}

/// Validation score as a fraction in `[0, 1]`.
pub fn validation_score(net: &Network<f32>, images: &[LabelledImage], selection: Selection) -> Result<f64, EngineError> {
    let report = evaluate_images(net, images, None)?;
    Ok(score_of(&report, selection))
}

pub fn score_of(report: &MetricsReport, selection: Selection) -> f64 {
    match selection {
        Selection::F1 => report.f1 / 100.0,
        Selection::Accuracy => report.accuracy / 100.0,
    }
}
