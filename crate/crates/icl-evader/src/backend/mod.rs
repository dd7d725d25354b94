//! Pluggable classification backends.
//!
//! A backend turns a rendered prompt into per-label log-probabilities
//! ([`LabelScores`]); [`classify`] then normalizes those into confidences
//! and picks the winner. Two backends ship:
//!
//! - [`mock`] — a deterministic keyword model whose decision procedure is
//!   fully documented and hand-computable, used for offline experiments and
//!   as the test oracle.
//! - [`http`] — a client for OpenAI-compatible chat-completion endpoints
//!   that recovers label probabilities from first-token logprob
//!   alternatives.
//!
//! When a backend cannot recover any label from the model output
//! (`found_any = false`), the sample is scored as a forced error: the last
//! label in the caller's label order is returned with confidence 1.0, so
//! the failure mode is deterministic and visible in reports.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Label, PromptTemplate};

pub use http::HttpBackend;
pub use mock::MockConfig;

// ---------------------------------------------------------------------------
// Score and result types
// ---------------------------------------------------------------------------

/// Per-label log-probabilities in the caller's label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub scores: Vec<(Label, f64)>,
    /// Whether any label was actually recoverable from the model output;
    /// when false the scores are placeholders and [`classify`] forces an
    /// incorrect prediction.
    pub found_any: bool,
}

/// Final decision for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub predicted: Label,
    /// Normalized confidence in (0, 1].
    pub confidence: f64,
    /// True when no label was recoverable and the prediction was forced.
    pub forced_incorrect: bool,
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

/// Which backend implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

/// Backend selection plus HTTP plumbing. The API key itself is never part
/// of the config — only the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Endpoint base, e.g. `https://api.openai.com/v1` (required for Http).
    pub base_url: Option<String>,
    /// Model identifier sent in requests (required for Http).
    pub model_name: Option<String>,
    /// Environment variable read for the bearer token.
    pub api_key_env: String,
    /// Sampling temperature sent on requests; kept at 0.0.
    pub temperature: f64,
    /// Number of top token alternatives requested per position.
    pub top_candidates: u32,
    pub request_timeout_secs: u64,
    /// Upper bound on concurrent in-flight HTTP requests.
    pub max_parallel_requests: usize,
}

/// Default environment variable holding the API key.
pub const DEFAULT_API_KEY_ENV: &str = "ICL_EVADER_API_KEY";

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: 0.0,
            top_candidates: 20,
            request_timeout_secs: 60,
            max_parallel_requests: 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

/// A constructed backend, ready to score prompts from any thread.
#[derive(Debug)]
pub enum Backend {
    Mock(MockConfig),
    Http(HttpBackend),
}

impl Backend {
    /// Build a backend. The mock derives its recognized prefixes from
    /// `template`; the HTTP backend validates its required fields and reads
    /// the API key from the configured environment variable (absent key →
    /// requests go out unauthenticated, for local endpoints).
    pub fn from_config(cfg: &BackendConfig, template: &PromptTemplate) -> Result<Self, BackendError> {
        match cfg.kind {
            BackendKind::Mock => Ok(Self::Mock(MockConfig::from_template(template))),
            BackendKind::Http => Ok(Self::Http(HttpBackend::new(cfg)?)),
        }
    }

    /// Rebind the mock to a different prompt template (a hardened prompt
    /// may have replaced prefixes; the defender's own model knows its
    /// template). The HTTP backend is template-independent and is returned
    /// unchanged.
    pub fn with_template(&self, template: &PromptTemplate) -> Self {
        match self {
            Self::Mock(_) => Self::Mock(MockConfig::from_template(template)),
            Self::Http(h) => Self::Http(h.clone()),
        }
    }

    /// Per-label log-probabilities for one rendered prompt.
    pub fn score(&self, prompt_text: &str, labels: &[Label]) -> Result<LabelScores, BackendError> {
        if labels.is_empty() {
            return Err(BackendError::EmptyLabelSet);
        }
        match self {
            Self::Mock(cfg) => Ok(mock::mock_score(prompt_text, labels, cfg)),
            Self::Http(h) => h.http_score(prompt_text, labels),
        }
    }
}

/// Score a prompt and pick the predicted label.
///
/// Log-probabilities are exponentiated and normalized into confidences
/// summing to 1; the argmax wins, with exact ties broken toward the
/// lexicographically smaller label name. When the backend recovered no
/// label at all, the last label in `labels` is returned with confidence
/// 1.0 and `forced_incorrect = true`.
pub fn classify(
    backend: &Backend,
    prompt_text: &str,
    labels: &[Label],
) -> Result<ClassificationResult, BackendError> {
    let scores = backend.score(prompt_text, labels)?;
    Ok(pick_from_scores(&scores, labels))
}

/// The normalization + argmax step of [`classify`], separated so score
/// post-processing can be exercised directly.
pub fn pick_from_scores(scores: &LabelScores, labels: &[Label]) -> ClassificationResult {
    if !scores.found_any || scores.scores.is_empty() {
        let predicted = labels.last().expect("non-empty label set").clone();
        return ClassificationResult {
            predicted,
            confidence: 1.0,
            forced_incorrect: true,
        };
    }
    // Shift by the max before exponentiating: numerically stable and makes
    // the result invariant under adding a constant to every score.
    let max = scores
        .scores
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = scores.scores.iter().map(|(_, s)| (s - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut best: Option<(&Label, f64)> = None;
    for ((label, _), p) in scores.scores.iter().zip(&probs) {
        let conf = p / total;
        let replace = match best {
            None => true,
            Some((b_label, b_conf)) => {
                conf > b_conf || (conf == b_conf && label.name() < b_label.name())
            }
        };
        if replace {
            best = Some((label, conf));
        }
    }
    let (label, confidence) = best.expect("non-empty scores");
    ClassificationResult {
        predicted: label.clone(),
        confidence,
        forced_incorrect: false,
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of backend construction or scoring.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("http backend requires {0}")]
    MissingHttpConfig(&'static str),
    #[error("http transport failure: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("response carries no logprobs; endpoint incompatible with logprob-based label scoring")]
    MissingLogprobs,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}
