//! OpenAI-compatible chat-completion backend.
//!
//! Label probabilities are recovered from first-token logprob alternatives:
//! the request pins `temperature` to the configured value (0.0 in practice),
//! enables `logprobs` with `top_logprobs` alternatives, and caps the output
//! at 8 tokens; each label then takes the best log-probability among
//! alternatives whose trimmed, lowercased token text is a non-empty prefix
//! of the label name. Labels matched by no alternative receive a floor
//! log-probability, and when no label matches at all the result is flagged
//! so the caller records a forced error.
//!
//! A response without logprob data is an error, never a silent degradation:
//! it means the endpoint cannot support logprob-based label scoring.
//!
//! The API key is read from the environment variable named in the config
//! (never from the config itself); when the variable is unset, requests are
//! sent unauthenticated, which suits local endpoints.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompt::Label;

use super::{BackendConfig, BackendError, LabelScores};

/// Log-probability assigned to labels absent from the returned
/// alternatives.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Output-token cap for classification requests; the answer is one label
/// name.
const MAX_COMPLETION_TOKENS: u32 = 8;

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    logprobs: bool,
    top_logprobs: u32,
    max_tokens: u32,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    #[serde(default)]
    top_logprobs: Vec<TokenAlternative>,
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct TokenAlternative {
    pub(crate) token: String,
    pub(crate) logprob: f64,
}

// ---------------------------------------------------------------------------
// Request slot pool
// ---------------------------------------------------------------------------

/// Counting semaphore bounding concurrent in-flight requests.
#[derive(Debug)]
struct SlotPool {
    available: Mutex<usize>,
    freed: Condvar,
}

impl SlotPool {
    fn new(slots: usize) -> Self {
        Self {
            available: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut available = self.available.lock().expect("slot pool lock");
        while *available == 0 {
            available = self.freed.wait(available).expect("slot pool wait");
        }
        *available -= 1;
        SlotGuard { pool: self }
    }
}

struct SlotGuard<'a> {
    pool: &'a SlotPool,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.pool.available.lock().expect("slot pool lock");
        *available += 1;
        self.pool.freed.notify_one();
    }
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

/// Client for one OpenAI-compatible endpoint. Cloning shares the underlying
/// connection pool and request slots.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    completions_url: String,
    model_name: String,
    api_key: Option<String>,
    temperature: f64,
    top_candidates: u32,
    slots: Arc<SlotPool>,
}

impl HttpBackend {
    /// Validate the config, read the API key from the configured
    /// environment variable, and build the client.
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let base_url = cfg
            .base_url
            .as_deref()
            .ok_or(BackendError::MissingHttpConfig("base_url"))?;
        let model_name = cfg
            .model_name
            .clone()
            .ok_or(BackendError::MissingHttpConfig("model_name"))?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs))
            .build()?;
        Ok(Self {
            client,
            completions_url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model_name,
            api_key,
            temperature: cfg.temperature,
            top_candidates: cfg.top_candidates,
            slots: Arc::new(SlotPool::new(cfg.max_parallel_requests)),
        })
    }

    /// Issue one classification request and recover per-label
    /// log-probabilities from the first completed token's alternatives.
    pub fn http_score(
        &self,
        prompt_text: &str,
        labels: &[Label],
    ) -> Result<LabelScores, BackendError> {
        let _slot = self.slots.acquire();
        let request = ChatRequest {
            model: &self.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt_text,
            }],
            temperature: self.temperature,
            logprobs: true,
            top_logprobs: self.top_candidates,
            max_tokens: MAX_COMPLETION_TOKENS,
        };
        let mut builder = self.client.post(&self.completions_url).json(&request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send()?;
        let status = response.status();
        let body = response.text()?;
        if status.as_u16() >= 400 {
            return Err(BackendError::HttpStatus {
                status: status.as_u16(),
                body: truncate_for_error(&body),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".to_string()))?;
        let logprobs = choice.logprobs.ok_or(BackendError::MissingLogprobs)?;
        let first_token = logprobs
            .content
            .into_iter()
            .next()
            .ok_or(BackendError::MissingLogprobs)?;
        Ok(match_alternatives(&first_token.top_logprobs, labels))
    }
}

/// Map token alternatives to label log-probabilities: each label takes the
/// best log-probability among alternatives whose trimmed, lowercased text
/// is a non-empty prefix of the label's lowercased name; unmatched labels
/// get [`LOG_PROB_FLOOR`].
pub(crate) fn match_alternatives(
    alternatives: &[TokenAlternative],
    labels: &[Label],
) -> LabelScores {
    let mut scores = Vec::with_capacity(labels.len());
    let mut found_any = false;
    for label in labels {
        let target = label.name().to_lowercase();
        let mut best: Option<f64> = None;
        for alt in alternatives {
            let token = alt.token.trim().to_lowercase();
            if !token.is_empty() && target.starts_with(&token) {
                best = Some(best.map_or(alt.logprob, |b: f64| b.max(alt.logprob)));
            }
        }
        match best {
            Some(lp) => {
                found_any = true;
                scores.push((label.clone(), lp));
            }
            None => scores.push((label.clone(), LOG_PROB_FLOOR)),
        }
    }
    LabelScores { scores, found_any }
}

fn truncate_for_error(body: &str) -> String {
    const LIMIT: usize = 500;
    if body.len() <= LIMIT {
        return body.to_string();
    }
    let mut end = LIMIT;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}… ({} bytes total)", &body[..end], body.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::pick_from_scores;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    fn lb(s: &str) -> Label {
        Label::new(s).unwrap()
    }

    fn alt(token: &str, logprob: f64) -> TokenAlternative {
        TokenAlternative {
            token: token.to_string(),
            logprob,
        }
    }

    #[test]
    fn prefix_matching_rule() {
        let labels = [lb("benign"), lb("toxic")];
        let alternatives = [
            alt(" tox", -0.1),
            alt("ben", -2.5),
            alt("unrelated", -1.0),
            alt("   ", -0.01),
        ];
        let s = match_alternatives(&alternatives, &labels);
        assert!(s.found_any);
        assert_eq!(s.scores[0], (lb("benign"), -2.5));
        assert_eq!(s.scores[1], (lb("toxic"), -0.1));
    }

    #[test]
    fn best_of_multiple_matches_wins() {
        let labels = [lb("toxic")];
        let s = match_alternatives(&[alt("t", -5.0), alt("toxic", -0.2), alt("tox", -1.0)], &labels);
        assert_eq!(s.scores[0].1, -0.2);
    }

    #[test]
    fn unmatched_labels_take_the_floor() {
        let labels = [lb("benign"), lb("toxic")];
        let s = match_alternatives(&[alt("tox", -0.3)], &labels);
        assert_eq!(s.scores[0].1, LOG_PROB_FLOOR);
        assert!(s.found_any);

        let none = match_alternatives(&[alt("yes", -0.1)], &labels);
        assert!(!none.found_any);
        let forced = pick_from_scores(&none, &labels);
        assert!(forced.forced_incorrect);
        assert_eq!(forced.predicted.name(), "toxic");
    }

    // --- loopback-server tests -------------------------------------------

    /// Serve one canned HTTP response on a loopback port, sending the raw
    /// request bytes back through the channel.
    fn serve_once(response_body: &str, status_line: &str) -> (String, mpsc::Receiver<Vec<u8>>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        let status_line = status_line.to_string();
        let response_body = response_body.to_string();
        thread::spawn(move || {
            let (mut stream, _) = listener.accept().expect("accept");
            let request = read_http_request(&mut stream);
            tx.send(request).ok();
            let response = format!(
                "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
                response_body.len()
            );
            stream.write_all(response.as_bytes()).expect("write response");
        });
        (format!("http://{addr}"), rx)
    }

    fn read_http_request(stream: &mut std::net::TcpStream) -> Vec<u8> {
        let mut data = Vec::new();
        let mut buf = [0u8; 4096];
        loop {
            let n = stream.read(&mut buf).expect("read request");
            data.extend_from_slice(&buf[..n]);
            if let Some(pos) = data.windows(4).position(|w| w == b"\r\n\r\n") {
                let headers = String::from_utf8_lossy(&data[..pos]).to_string();
                let content_length = headers
                    .lines()
                    .find_map(|l| {
                        let (k, v) = l.split_once(':')?;
                        if k.eq_ignore_ascii_case("content-length") {
                            v.trim().parse::<usize>().ok()
                        } else {
                            None
                        }
                    })
                    .unwrap_or(0);
                if data.len() - (pos + 4) >= content_length {
                    return data;
                }
            }
            if n == 0 {
                return data;
            }
        }
    }

    fn backend_for(base_url: &str) -> HttpBackend {
        let cfg = BackendConfig {
            kind: crate::backend::BackendKind::Http,
            base_url: Some(base_url.to_string()),
            model_name: Some("test-model".to_string()),
            // Point at a variable that is never set: these tests must not
            // depend on ambient credentials.
            api_key_env: "ICL_EVADER_TEST_NO_SUCH_KEY".to_string(),
            ..BackendConfig::default()
        };
        HttpBackend::new(&cfg).unwrap()
    }

    #[test]
    fn end_to_end_request_and_score() {
        let body = r#"{"choices":[{"logprobs":{"content":[{"top_logprobs":[
            {"token":" tox","logprob":-0.1},
            {"token":"ben","logprob":-2.5},
            {"token":"other","logprob":-1.0}
        ]}]}}]}"#;
        let (base, rx) = serve_once(body, "HTTP/1.1 200 OK");
        let backend = backend_for(&base);
        let labels = [lb("benign"), lb("toxic")];
        let scores = backend.http_score("the rendered prompt", &labels).unwrap();
        assert!(scores.found_any);
        assert_eq!(scores.scores[0], (lb("benign"), -2.5));
        assert_eq!(scores.scores[1], (lb("toxic"), -0.1));

        // Inspect what went over the wire.
        let raw = rx.recv().unwrap();
        let text = String::from_utf8_lossy(&raw);
        assert!(text.starts_with("POST /chat/completions HTTP/1.1\r\n"));
        assert!(
            !text.to_lowercase().contains("authorization:"),
            "no key in the environment must mean no auth header"
        );
        let json_start = text.find("\r\n\r\n").unwrap() + 4;
        let sent: serde_json::Value = serde_json::from_str(&text[json_start..]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["logprobs"], true);
        assert_eq!(sent["top_logprobs"], 20);
        assert_eq!(sent["max_tokens"], 8);
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "the rendered prompt");
    }

    #[test]
    fn http_error_status_is_surfaced() {
        let (base, _rx) = serve_once(r#"{"error":"boom"}"#, "HTTP/1.1 500 Internal Server Error");
        let backend = backend_for(&base);
        let err = backend
            .http_score("prompt", &[lb("benign"), lb("toxic")])
            .unwrap_err();
        match err {
            BackendError::HttpStatus { status, body } => {
                assert_eq!(status, 500);
                assert!(body.contains("boom"));
            }
            other => panic!("expected HttpStatus, got {other:?}"),
        }
    }

    #[test]
    fn missing_logprobs_is_an_error_not_a_degradation() {
        let (base, _rx) = serve_once(r#"{"choices":[{"message":{"content":"toxic"}}]}"#, "HTTP/1.1 200 OK");
        let backend = backend_for(&base);
        let err = backend
            .http_score("prompt", &[lb("benign"), lb("toxic")])
            .unwrap_err();
        assert!(matches!(err, BackendError::MissingLogprobs));
    }

    #[test]
    fn no_matching_alternative_forces_incorrect() {
        let body = r#"{"choices":[{"logprobs":{"content":[{"top_logprobs":[
            {"token":"I","logprob":-0.1},
            {"token":"The","logprob":-1.5}
        ]}]}}]}"#;
        let (base, _rx) = serve_once(body, "HTTP/1.1 200 OK");
        let backend = backend_for(&base);
        let labels = [lb("benign"), lb("toxic")];
        let scores = backend.http_score("prompt", &labels).unwrap();
        assert!(!scores.found_any);
        assert!(scores.scores.iter().all(|(_, s)| *s == LOG_PROB_FLOOR));
        assert!(pick_from_scores(&scores, &labels).forced_incorrect);
    }
}
