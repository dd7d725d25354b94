//! Run reports: per-sample rows, aggregate metrics, and their JSON/CSV
//! serializations.
//!
//! A report is a pure value. Serialization is pretty-printed JSON with a
//! trailing newline, and every number in it comes from deterministic
//! arithmetic over the rows, so two runs that produce equal rows produce
//! byte-identical report files — regardless of parallelism.
//!
//! The aggregates are recomputable from the rows alone:
//! [`compute_aggregates`] is the single source of truth, used both when a
//! run finishes and when an existing report is audited.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackConfig;
use crate::backend::{BackendError, BackendKind, ClassificationResult};
use crate::metrics::{
    attack_report, defense_report, report_from_counts, AttackReport, ClassificationReport,
    ConfusionCounts, DefenseReport, DEFAULT_AD_THRESHOLD, DEFAULT_LAMBDA,
};
use crate::recipe::DefenseRecipe;

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

/// One backend verdict (or the error that replaced it) for one prompt
/// variant of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredCell {
    pub prediction: Option<String>,
    pub confidence: Option<f64>,
    pub forced_incorrect: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredCell {
    pub fn from_result(result: Result<ClassificationResult, BackendError>) -> Self {
        match result {
            Ok(r) => Self {
                prediction: Some(r.predicted.name().to_string()),
                confidence: Some(r.confidence),
                forced_incorrect: Some(r.forced_incorrect),
                error: None,
            },
            Err(e) => Self {
                prediction: None,
                confidence: None,
                forced_incorrect: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.prediction.is_some()
    }
}

/// Verdicts for one evaluation sample across the prompt variants a run
/// exercises. Cells that a run mode does not produce stay `None` (e.g.
/// negative-class samples have no adversarial cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: u64,
    pub true_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<PredCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv: Option<PredCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_hardened: Option<PredCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_hardened: Option<PredCell>,
}

impl SampleRow {
    pub fn new(sample_id: u64, true_label: impl Into<String>) -> Self {
        Self {
            sample_id,
            true_label: true_label.into(),
            clean: None,
            adv: None,
            clean_hardened: None,
            adv_hardened: None,
        }
    }

    fn has_error(&self) -> bool {
        [&self.clean, &self.adv, &self.clean_hardened, &self.adv_hardened]
            .into_iter()
            .flatten()
            .any(|c| c.error.is_some())
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// What kind of evaluation produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Clean,
    Attack,
    Defense,
}

/// The replayable portion of the experiment configuration. Paths,
/// parallelism, and anything else that cannot change the numbers are
/// deliberately absent, so equal results serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub task: String,
    pub n_shots: u32,
    pub master_seed: u64,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub train_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<DefenseRecipe>,
}

/// Trade-off parameters that turn the four defense passes into a single
/// score; stored next to the aggregates so the report is self-auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseParams {
    pub lambda: f64,
    pub ad_threshold: f64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            ad_threshold: DEFAULT_AD_THRESHOLD,
        }
    }
}

/// Aggregate metrics for a run. Sections not applicable to the run mode are
/// `None`. Every row with at least one errored cell is excluded from every
/// aggregate (and counted in `n_error_rows`), keeping paired comparisons
/// paired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_rows: usize,
    pub n_error_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<ClassificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_hardened: Option<ClassificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_hardened: Option<AttackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense_params: Option<DefenseParams>,
}

/// A complete evaluation run: what was configured, what every sample did,
/// and what it adds up to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub config: ConfigEcho,
    pub aggregates: Aggregates,
    pub rows: Vec<SampleRow>,
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn tally(
    rows: &[&SampleRow],
    positive: &str,
    cell: impl Fn(&SampleRow) -> &Option<PredCell>,
) -> Option<ClassificationReport> {
    let mut counts = ConfusionCounts::default();
    let mut any = false;
    for row in rows {
        let Some(c) = cell(row) else { continue };
        let Some(pred) = c.prediction.as_deref() else { continue };
        any = true;
        match (row.true_label == positive, pred == positive) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.r#fn += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
        }
    }
    any.then(|| report_from_counts(counts))
}

/// Recall over rows that carry both cells of a clean/adversarial pair.
fn paired_attack(
    rows: &[&SampleRow],
    positive: &str,
    clean_cell: impl Fn(&SampleRow) -> &Option<PredCell>,
    adv_cell: impl Fn(&SampleRow) -> &Option<PredCell>,
) -> Option<AttackReport> {
    let mut n = 0u64;
    let mut clean_hits = 0u64;
    let mut adv_hits = 0u64;
    for row in rows {
        let (Some(c), Some(a)) = (clean_cell(row), adv_cell(row)) else {
            continue;
        };
        let (Some(cp), Some(ap)) = (c.prediction.as_deref(), a.prediction.as_deref()) else {
            continue;
        };
        if row.true_label != positive {
            continue;
        }
        n += 1;
        clean_hits += u64::from(cp == positive);
        adv_hits += u64::from(ap == positive);
    }
    (n > 0).then(|| attack_report(clean_hits as f64 / n as f64, adv_hits as f64 / n as f64))
}

/// Recompute the aggregate metrics from per-sample rows.
///
/// This is the only aggregation path in the crate: runs call it to build
/// reports and audits call it to check them, so a report's aggregates are
/// reproducible from its rows by construction. Rows containing any errored
/// cell are dropped first.
pub fn compute_aggregates(
    mode: RunMode,
    rows: &[SampleRow],
    positive_label: &str,
    params: DefenseParams,
) -> Result<Aggregates, ReportError> {
    let usable: Vec<&SampleRow> = rows.iter().filter(|r| !r.has_error()).collect();
    let n_error_rows = rows.len() - usable.len();

    let clean = tally(&usable, positive_label, |r| &r.clean);
    let mut agg = Aggregates {
        n_rows: rows.len(),
        n_error_rows,
        clean,
        clean_hardened: None,
        attack: None,
        attack_hardened: None,
        defense: None,
        defense_params: None,
    };

    match mode {
        RunMode::Clean => {
            if agg.clean.is_none() {
                return Err(ReportError::NoScoredRows { section: "clean" });
            }
        }
        RunMode::Attack => {
            agg.attack = paired_attack(&usable, positive_label, |r| &r.clean, |r| &r.adv);
            if agg.attack.is_none() {
                return Err(ReportError::NoScoredRows { section: "attack" });
            }
        }
        RunMode::Defense => {
            agg.clean_hardened = tally(&usable, positive_label, |r| &r.clean_hardened);
            agg.attack = paired_attack(&usable, positive_label, |r| &r.clean, |r| &r.adv);
            agg.attack_hardened =
                paired_attack(&usable, positive_label, |r| &r.clean_hardened, |r| {
                    &r.adv_hardened
                });
            let (Some(clean), Some(clean_hardened), Some(attack), Some(attack_hardened)) = (
                agg.clean.as_ref(),
                agg.clean_hardened.as_ref(),
                agg.attack.as_ref(),
                agg.attack_hardened.as_ref(),
            ) else {
                return Err(ReportError::NoScoredRows { section: "defense" });
            };
            let (Some(acc_base), Some(acc_def)) = (clean.accuracy, clean_hardened.accuracy) else {
                return Err(ReportError::NoScoredRows { section: "defense" });
            };
            agg.defense = Some(defense_report(
                attack.asr,
                attack_hardened.asr,
                acc_base,
                acc_def,
                params.lambda,
                params.ad_threshold,
            ));
            agg.defense_params = Some(params);
        }
    }
    Ok(agg)
}

/// Re-derive a report's aggregates from its rows and compare. Returns the
/// freshly computed aggregates; `Err(AuditMismatch)` if they differ from
/// what the report claims.
pub fn audit_report(report: &RunReport, positive_label: &str) -> Result<Aggregates, ReportError> {
    let params = report.aggregates.defense_params.unwrap_or_default();
    let recomputed = compute_aggregates(report.mode, &report.rows, positive_label, params)?;
    if recomputed != report.aggregates {
        return Err(ReportError::AuditMismatch);
    }
    Ok(recomputed)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Canonical report serialization: pretty JSON plus a trailing newline.
pub fn report_to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, report_to_json(report)).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_report_json(path: &Path) -> Result<RunReport, ReportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&raw)?)
}

/// Flat CSV of the per-sample rows: one line per sample, four cell-column
/// groups. Missing cells serialize as empty fields.
pub fn write_rows_csv(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(ReportError::Csv)?;
    let mut header = vec!["sample_id".to_string(), "true_label".to_string()];
    for cell in ["clean", "adv", "clean_hardened", "adv_hardened"] {
        for field in ["prediction", "confidence", "forced_incorrect", "error"] {
            header.push(format!("{cell}_{field}"));
        }
    }
    w.write_record(&header).map_err(ReportError::Csv)?;
    for row in &report.rows {
        let mut record = vec![row.sample_id.to_string(), row.true_label.clone()];
        for cell in [&row.clean, &row.adv, &row.clean_hardened, &row.adv_hardened] {
            match cell {
                Some(c) => {
                    record.push(c.prediction.clone().unwrap_or_default());
                    record.push(c.confidence.map(|v| v.to_string()).unwrap_or_default());
                    record.push(
                        c.forced_incorrect
                            .map(|v| v.to_string())
                            .unwrap_or_default(),
                    );
                    record.push(c.error.clone().unwrap_or_default());
                }
                None => {
                    for _ in 0..4 {
                        record.push(String::new());
                    }
                }
            }
        }
        w.write_record(&record).map_err(ReportError::Csv)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of report aggregation or (de)serialization.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report CSV: {0}")]
    Csv(csv::Error),
    #[error("no error-free rows to aggregate for section `{section}`")]
    NoScoredRows { section: &'static str },
    #[error("stored aggregates do not match recomputation from rows")]
    AuditMismatch,
}
