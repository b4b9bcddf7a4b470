//! Binary confusion matrix (PD positive) and the four reported metrics.
//!
//! A metric whose denominator vanishes is reported as [`Undefined`] naming
//! the zero marginal, never as 0.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::signal::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// A metric with a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Undefined {
    pub metric: &'static str,
    pub zero: &'static str,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} undefined ({} = 0)", self.metric, self.zero)
    }
}

pub type Score = Result<f64, Undefined>;

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Pd, Label::Pd) => self.tp += 1,
            (Label::Hc, Label::Hc) => self.tn += 1,
            (Label::Hc, Label::Pd) => self.fp += 1,
            (Label::Pd, Label::Hc) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Confusion matrix of the inverted predictor.
    pub fn with_predictions_swapped(&self) -> Self {
        Self {
            tp: self.fn_,
            tn: self.fp,
            fp: self.tn,
            fn_: self.tp,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Score {
    let total = cm.total();
    if total == 0 {
        return Err(Undefined {
            metric: "accuracy",
            zero: "tp+tn+fp+fn",
        });
    }
    Ok((cm.tp + cm.tn) as f64 / total as f64)
}

pub fn recall(cm: &ConfusionMatrix) -> Score {
    let pos = cm.tp + cm.fn_;
    if pos == 0 {
        return Err(Undefined {
            metric: "recall",
            zero: "tp+fn",
        });
    }
    Ok(cm.tp as f64 / pos as f64)
}

pub fn precision(cm: &ConfusionMatrix) -> Score {
    let pred_pos = cm.tp + cm.fp;
    if pred_pos == 0 {
        return Err(Undefined {
            metric: "precision",
            zero: "tp+fp",
        });
    }
    Ok(cm.tp as f64 / pred_pos as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(cm: &ConfusionMatrix) -> Score {
    let tag = |u: Undefined| Undefined { metric: "f1", ..u };
    let r = recall(cm).map_err(tag)?;
    let p = precision(cm).map_err(tag)?;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r))
}

pub fn mcc(cm: &ConfusionMatrix) -> Score {
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let marginals = [
        ("tp+fp", tp + fp),
        ("tp+fn", tp + fn_),
        ("tn+fp", tn + fp),
        ("tn+fn", tn + fn_),
    ];
    if let Some((zero, _)) = marginals.iter().find(|(_, v)| *v == 0.0) {
        return Err(Undefined { metric: "mcc", zero });
    }
    let denom = marginals.iter().map(|(_, v)| v).product::<f64>().sqrt();
    Ok((tp * tn - fp * fn_) / denom)
}

/// Serialized metric values: `null` marks an undefined metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub confusion: ConfusionMatrix,
    #[serde(serialize_with = "score_ser")]
    pub accuracy: Option<f64>,
    #[serde(serialize_with = "score_ser")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "score_ser")]
    pub f1: Option<f64>,
    #[serde(serialize_with = "score_ser")]
    pub mcc: Option<f64>,
}

fn score_ser<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

impl MetricBlock {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        Self {
            confusion: *cm,
            accuracy: accuracy(cm).ok(),
            recall: recall(cm).ok(),
            f1: f1(cm).ok(),
            mcc: mcc(cm).ok(),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl fmt::Display for MetricBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mcc = self
            .mcc
            .map_or_else(|| "undefined".to_string(), |x| format!("{x:.2}"));
        write!(
            f,
            "recall {}%  accuracy {}%  f1 {}%  mcc {}  (tp {} tn {} fp {} fn {})",
            pct(self.recall),
            pct(self.accuracy),
            pct(self.f1),
            mcc,
            self.confusion.tp,
            self.confusion.tn,
            self.confusion.fp,
            self.confusion.fn_
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let cm = ConfusionMatrix::new(10, 10, 0, 0);
        assert_eq!(
            (accuracy(&cm), recall(&cm), f1(&cm), mcc(&cm)),
            (Ok(1.0), Ok(1.0), Ok(1.0), Ok(1.0))
        );
    }

    #[test]
    fn inverted() {
        let cm = ConfusionMatrix::new(10, 10, 0, 0).with_predictions_swapped();
        assert_eq!(mcc(&cm), Ok(-1.0));
        assert_eq!(accuracy(&cm), Ok(0.0));
    }

    #[test]
    fn worked_mcc() {
        let cm = ConfusionMatrix::new(45, 25, 4, 6);
        let expect = 1101.0 / (49.0f64 * 51.0 * 29.0 * 31.0).sqrt();
        assert!((mcc(&cm).unwrap() - expect).abs() < 1e-15);
        assert!((mcc(&cm).unwrap() - 0.7346).abs() < 5e-5);
    }

    #[test]
    fn undefined_names_marginal() {
        let cm = ConfusionMatrix::new(0, 5, 0, 0);
        assert_eq!(
            recall(&cm),
            Err(Undefined {
                metric: "recall",
                zero: "tp+fn"
            })
        );
        assert_eq!(mcc(&cm).unwrap_err().zero, "tp+fp");
        assert_eq!(f1(&cm).unwrap_err().metric, "f1");
        assert!(accuracy(&ConfusionMatrix::default()).is_err());
        let block = MetricBlock::from_confusion(&cm);
        let json = serde_json::to_string(&block).unwrap();
        assert!(json.contains("\"mcc\":null"), "{json}");
        assert!(block.to_string().contains("mcc undefined"));
    }

    #[test]
    fn f1_zero_when_no_hits() {
        let cm = ConfusionMatrix::new(0, 3, 2, 4);
        assert_eq!(f1(&cm), Ok(0.0));
    }

    #[test]
    fn record_and_display() {
        let cm = ConfusionMatrix::from_pairs([
            (Label::Pd, Label::Pd),
            (Label::Pd, Label::Hc),
            (Label::Hc, Label::Hc),
            (Label::Hc, Label::Pd),
        ]);
        assert_eq!(cm, ConfusionMatrix::new(1, 1, 1, 1));
        let s = MetricBlock::from_confusion(&ConfusionMatrix::new(45, 25, 4, 6)).to_string();
        assert!(s.contains("accuracy 87.5%") && s.contains("mcc 0.73"), "{s}");
    }
}
