//! Classifier quality metrics and attack/defense effect metrics.
//!
//! Classifier quality is summarized by a confusion matrix relative to a
//! designated positive label and the standard ratios derived from it.
//! Attack strength is the drop in positive-class recall (in percentage
//! points); defense quality combines the attack-strength reduction with the
//! clean-accuracy cost it incurs.
//!
//! Ratios with zero denominators are represented as `None` rather than NaN
//! so that serialized reports show explicit `null`s.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Label;

/// Default trade-off weight between attack mitigation and accuracy cost.
pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Default maximum tolerated clean-accuracy drop, in percentage points.
pub const DEFAULT_AD_THRESHOLD: f64 = 5.0;

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Binary confusion-matrix cell counts relative to a designated positive
/// label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
}

impl ConfusionCounts {
    /// Tally predictions against reference labels.
    pub fn from_pairs(
        predictions: &[Label],
        labels: &[Label],
        positive: &Label,
    ) -> Result<Self, MetricsError> {
        if predictions.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                labels: labels.len(),
            });
        }
        if predictions.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut c = Self::default();
        for (p, l) in predictions.iter().zip(labels) {
            match (l == positive, p == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.r#fn += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.r#fn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Positive-class recall (true-positive rate).
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.r#fn)
    }

    pub fn f1(&self) -> Option<f64> {
        let p = self.precision()?;
        let r = self.recall()?;
        if p + r == 0.0 {
            None
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }

    /// Share of actual negatives predicted positive.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Summary ratios derived from a confusion matrix. Ratios whose denominator
/// is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
}

/// Compute the full quality summary from prediction/reference sequences.
pub fn classification_report(
    predictions: &[Label],
    labels: &[Label],
    positive: &Label,
) -> Result<ClassificationReport, MetricsError> {
    let counts = ConfusionCounts::from_pairs(predictions, labels, positive)?;
    Ok(report_from_counts(counts))
}

/// Derive the summary ratios from already-tallied counts.
pub fn report_from_counts(counts: ConfusionCounts) -> ClassificationReport {
    ClassificationReport {
        counts,
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        fpr: counts.fpr(),
    }
}

// ---------------------------------------------------------------------------
// Attack strength
// ---------------------------------------------------------------------------

/// Attack strength as the recall drop it causes.
///
/// `asr` is in signed percentage points: `100 × (recall_clean − recall_adv)`.
/// A negative value means the transformation helped the classifier. `rasr`
/// rescales by clean recall (`asr / (100 × recall_clean)`) and is `None`
/// when clean recall is zero; it never exceeds 1 and equals 1 exactly when
/// the attacked recall is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub recall_clean: f64,
    pub recall_adv: f64,
    pub asr: f64,
    pub rasr: Option<f64>,
}

/// Compare clean and attacked positive-class recall (both fractions in
/// [0, 1]).
pub fn attack_report(recall_clean: f64, recall_adv: f64) -> AttackReport {
    debug_assert!((0.0..=1.0).contains(&recall_clean));
    debug_assert!((0.0..=1.0).contains(&recall_adv));
    let asr = 100.0 * (recall_clean - recall_adv);
    let rasr = if recall_clean == 0.0 {
        None
    } else {
        Some(asr / (100.0 * recall_clean))
    };
    AttackReport {
        recall_clean,
        recall_adv,
        asr,
        rasr,
    }
}

// ---------------------------------------------------------------------------
// Defense quality
// ---------------------------------------------------------------------------

/// Defense quality: how much attack strength it removes versus how much
/// clean accuracy it costs.
///
/// - `asrr_abs` = `asr_baseline − asr_defended`, in points; `asrr_rel`
///   rescales by the baseline and is `None` when the baseline is zero.
/// - `ad` = `100 × (accuracy_clean_baseline − accuracy_clean_defended)`,
///   in points.
/// - `de` = `asrr_abs − λ·ad` — the net score, higher is better.
/// - `admissible` flags whether the accuracy cost stays within the
///   configured threshold (`ad ≤ ad_threshold`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub asr_baseline: f64,
    pub asr_defended: f64,
    pub asrr_abs: f64,
    pub asrr_rel: Option<f64>,
    pub accuracy_clean_baseline: f64,
    pub accuracy_clean_defended: f64,
    pub ad: f64,
    pub de: f64,
    pub admissible: bool,
}

/// Score a defense from baseline/defended attack strength (points) and
/// clean accuracy (fractions).
pub fn defense_report(
    asr_baseline: f64,
    asr_defended: f64,
    accuracy_clean_baseline: f64,
    accuracy_clean_defended: f64,
    lambda: f64,
    ad_threshold: f64,
) -> DefenseReport {
    let asrr_abs = asr_baseline - asr_defended;
    let asrr_rel = if asr_baseline == 0.0 {
        None
    } else {
        Some(asrr_abs / asr_baseline)
    };
    let ad = 100.0 * (accuracy_clean_baseline - accuracy_clean_defended);
    let de = asrr_abs - lambda * ad;
    DefenseReport {
        asr_baseline,
        asr_defended,
        asrr_abs,
        asrr_rel,
        accuracy_clean_baseline,
        accuracy_clean_defended,
        ad,
        de,
        admissible: ad <= ad_threshold,
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of metric computation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction/label length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("cannot compute metrics over an empty sample set")]
    EmptyInput,
}
