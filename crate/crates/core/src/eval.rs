//! Classification and line-localization metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::cam::localize_sample;
use crate::corpus::{Label, Manifest, Split};
use crate::dataset::{encode_unit, load_units};
use crate::model::ModelParams;
use crate::{Error, Result, Scalar};

/// Counts with Buggy as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Buggy, Label::Buggy) => self.tp += 1,
            (Label::Buggy, Label::Clean) => self.fp += 1,
            (Label::Clean, Label::Buggy) => self.fn_ += 1,
            (Label::Clean, Label::Clean) => self.tn += 1,
        }
    }

    /// `None` when nothing was predicted Buggy.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when nothing is actually Buggy.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Grid with predictions as rows and ground truth as columns.
impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>14}{:>14}", "", "actual buggy", "actual clean")?;
        writeln!(f, "{:<14}{:>14}{:>14}", "pred buggy", self.tp, self.fp)?;
        write!(f, "{:<14}{:>14}{:>14}", "pred clean", self.fn_, self.tn)
    }
}

pub fn confusion(predictions: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    predictions
        .iter()
        .zip(truth)
        .for_each(|(&p, &t)| cm.add(p, t));
    Ok(cm)
}

/// Line-level overlap counts: `a` hits, `b` misses, `c` false alarms, `n`
/// lines in the unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LocalizationTally {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub n: usize,
}

impl LocalizationTally {
    pub fn new(flagged: &BTreeSet<usize>, truth: &BTreeSet<usize>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("unit has no lines".into()));
        }
        if let Some(l) = flagged.iter().chain(truth).find(|&&l| l == 0 || l > n) {
            return Err(Error::InvalidArgument(format!("line {l} outside 1..={n}")));
        }
        let a = flagged.intersection(truth).count();
        Ok(LocalizationTally {
            a,
            b: truth.len() - a,
            c: flagged.len() - a,
            n,
        })
    }

    /// `A / (A + B + C)`, 1 when both sets are empty.
    pub fn iou_standard(&self) -> f64 {
        let den = self.a + self.b + self.c;
        if den == 0 {
            1.0
        } else {
            self.a as f64 / den as f64
        }
    }

    /// `A / ((A + B) + C/N)`, 1 when the denominator is 0.
    pub fn iou_discounted(&self) -> f64 {
        let den = (self.a + self.b) as f64 + self.c as f64 / self.n as f64;
        if den == 0.0 {
            1.0
        } else {
            self.a as f64 / den
        }
    }
}

/// `(discounted, standard)`.
pub fn iou(flagged: &BTreeSet<usize>, truth: &BTreeSet<usize>, n: usize) -> Result<(f64, f64)> {
    let t = LocalizationTally::new(flagged, truth, n)?;
    Ok((t.iou_discounted(), t.iou_standard()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitOutcome {
    pub path: PathBuf,
    pub unit: String,
    pub actual: Label,
    pub predicted: Label,
    pub prob_buggy: f64,
    /// Present for Buggy units only.
    pub tally: Option<LocalizationTally>,
    pub flagged_lines: BTreeSet<usize>,
    pub truth_lines: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: Split,
    pub confusion: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    /// Means over Buggy units; `None` when there are none.
    pub mean_iou_discounted: Option<f64>,
    pub mean_iou_standard: Option<f64>,
    pub units: Vec<UnitOutcome>,
    pub skipped: Vec<(PathBuf, String)>,
}

impl MetricsReport {
    pub fn from_outcomes(
        split: Split,
        units: Vec<UnitOutcome>,
        skipped: Vec<(PathBuf, String)>,
    ) -> Self {
        let mut cm = ConfusionMatrix::default();
        units.iter().for_each(|u| cm.add(u.predicted, u.actual));
        let tallies: Vec<_> = units.iter().filter_map(|u| u.tally).collect();
        let mean = |f: fn(&LocalizationTally) -> f64| {
            (!tallies.is_empty()).then(|| tallies.iter().map(f).sum::<f64>() / tallies.len() as f64)
        };
        MetricsReport {
            split,
            confusion: cm,
            precision: cm.precision(),
            recall: cm.recall(),
            accuracy: cm.accuracy(),
            mean_iou_discounted: mean(LocalizationTally::iou_discounted),
            mean_iou_standard: mean(LocalizationTally::iou_standard),
            units,
            skipped,
        }
    }

    /// Aligned human-readable summary.
    pub fn to_text(&self) -> String {
        let rate = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let buggy = self.units.iter().filter(|u| u.tally.is_some()).count();
        format!(
            "split          {}\nunits          {}\nskipped files  {}\n\n{}\n\n\
             precision      {}\nrecall         {}\naccuracy       {}\n\
             iou standard   {}  ({buggy} buggy units)\niou discounted {}\n",
            self.split.as_str(),
            self.units.len(),
            self.skipped.len(),
            self.confusion,
            rate(self.precision),
            rate(self.recall),
            rate(self.accuracy),
            rate(self.mean_iou_standard),
            rate(self.mean_iou_discounted),
        )
    }
}

/// Predict and localize every unit of `split`.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    manifest: &Manifest,
    split: Split,
    theta: f64,
) -> Result<MetricsReport> {
    let data = load_units(manifest, &[split])?;
    if data.units.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split {} has no units",
            split.as_str()
        )));
    }
    let outcomes = data
        .units
        .par_iter()
        .map(|u| {
            let sample = encode_unit(u, &params.vocab, params.hp.l_max);
            let cam = localize_sample(params, &sample, &u.vector.unit_name, theta)?;
            let tally = if u.label == Label::Buggy {
                let shift = |s: &BTreeSet<usize>| {
                    s.iter()
                        .map(|l| l + 1 - u.vector.start_line)
                        .collect::<BTreeSet<_>>()
                };
                Some(LocalizationTally::new(
                    &shift(&cam.flagged_lines),
                    &shift(&u.truth_lines),
                    u.vector.line_count(),
                )?)
            } else {
                None
            };
            Ok(UnitOutcome {
                path: u.path.clone(),
                unit: u.vector.unit_name.clone(),
                actual: u.label,
                predicted: cam.predicted,
                prob_buggy: cam.prob_buggy,
                tally,
                flagged_lines: cam.flagged_lines,
                truth_lines: u.truth_lines.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_outcomes(split, outcomes, data.skipped))
}
