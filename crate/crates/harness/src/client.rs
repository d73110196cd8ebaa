//! Chat-completions client that asks a multimodal model for an evidence chain.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use coe_core::augment::OUTPUT_SCHEMA;
use coe_core::chain::{emit_chain, parse_chain, parse_chain_value};
use coe_core::{CandidateSet, ImageLabel, ModelOutput};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub version: String,
    /// May use `{schema}`.
    pub system: String,
    /// May use `{question}`, `{k}`, `{labels}` and `{schema}`.
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            version: "chain-prompt/1".into(),
            system: "You answer multi-hop questions over document screenshots. \
                     Cite every piece of evidence you use as pixel boxes on the screenshot it comes from. \
                     Respond with a single JSON object of the form {schema}"
                .into(),
            user: "You are given {k} candidate document screenshots labeled {labels}, attached below in that order.\n\
                   Question: {question}\n\
                   List the evidence chain in the order you reason through it, then give the answer. \
                   Boxes are [x1, y1, x2, y2] in the pixel coordinates of the named screenshot."
                .into(),
        }
    }
}

impl PromptTemplate {
    fn fill(text: &str, question: &str, labels: &[ImageLabel]) -> String {
        let listed = labels.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        text.replace("{schema}", OUTPUT_SCHEMA)
            .replace("{k}", &labels.len().to_string())
            .replace("{labels}", &listed)
            .replace("{question}", question)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub auth_token_env: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_base: f64,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Upper bound on simultaneous requests from one client.
    pub max_in_flight: usize,
    /// Request and response bodies, with images elided, appended here when set.
    pub audit_log: Option<PathBuf>,
    pub prompt: PromptTemplate,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            auth_token_env: "COE_API_TOKEN".into(),
            model: "default".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            retry_backoff_base: 1.0,
            max_output_tokens: 1024,
            temperature: 0.0,
            max_in_flight: 4,
            audit_log: None,
            prompt: PromptTemplate::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::ConfigInvalid(format!("endpoint: {m}")));
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        if !(self.retry_backoff_base.is_finite() && self.retry_backoff_base >= 0.0) {
            return bad("retry_backoff_base must be non-negative");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive");
        }
        if self.base_url.is_empty() {
            return bad("base_url is empty");
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

fn mime_for(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8]) {
        "image/jpeg"
    } else {
        "application/octet-stream"
    }
}

/// Chat payload: system schema instruction, then the question and each
/// candidate image preceded by its label, in candidate order.
pub fn build_request(
    question: &str,
    candset: &CandidateSet,
    images: &BTreeMap<String, Vec<u8>>,
    template: &PromptTemplate,
    cfg: &EndpointConfig,
) -> Result<Value> {
    let labels: Vec<ImageLabel> = candset.ordered().map(|(l, _)| l).collect();
    let mut parts = vec![json!({"type": "text", "text": PromptTemplate::fill(&template.user, question, &labels)})];
    for (label, doc_id) in candset.ordered() {
        let bytes = images
            .get(doc_id)
            .ok_or_else(|| HarnessError::MissingImage(doc_id.to_owned()))?;
        parts.push(json!({"type": "text", "text": label.to_string()}));
        parts.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{}", mime_for(bytes), B64.encode(bytes))},
        }));
    }
    Ok(json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
        "messages": [
            {"role": "system", "content": PromptTemplate::fill(&template.system, question, &labels)},
            {"role": "user", "content": parts},
        ],
    }))
}

/// Text of the first choice in a chat-completions response body.
pub fn response_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts.iter().filter_map(|p| p.get("text")?.as_str()).collect();
            (!texts.is_empty()).then(|| texts.concat())
        }
        _ => None,
    }
}

fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string (e.g. "json") up to the end of the line.
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        out.push(body[..close].trim());
        rest = &body[close + 3..];
    }
    out
}

/// Every balanced `{...}` span, honoring JSON string quoting.
fn brace_spans(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let mut spans = Vec::new();
    for start in (0..bytes.len()).filter(|&i| bytes[i] == b'{') {
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &c) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match c {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        spans.push(&raw[start..=i]);
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    spans
}

/// Locates a schema-valid chain document in free-form model text.
///
/// Tries fenced code blocks, then the largest balanced-brace span that
/// parses, then the whole string.
pub fn extract_chain_text(raw: &str) -> Option<String> {
    let valid = |s: &str| parse_chain(s).is_ok();
    if let Some(block) = fenced_blocks(raw).into_iter().find(|b| b.starts_with('{') && valid(b)) {
        return Some(block.to_owned());
    }
    let mut spans = brace_spans(raw);
    spans.sort_by_key(|s| std::cmp::Reverse(s.len()));
    if let Some(span) = spans.into_iter().find(|s| valid(s)) {
        return Some(span.to_owned());
    }
    let whole = raw.trim();
    valid(whole).then(|| whole.to_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Parsed(ModelOutput),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub question_id: String,
    pub raw_text: String,
    pub outcome: Outcome,
    pub attempts: u32,
    pub latency_secs: f64,
}

/// Stored form of an inference result, one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub question_id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub latency_secs: f64,
}

impl PredictionLine {
    pub fn from_result(r: &InferenceResult) -> Result<Self> {
        let (status, output, reason) = match &r.outcome {
            Outcome::Parsed(out) => {
                let text = emit_chain(out)?;
                let value = serde_json::from_str(&text).map_err(|e| HarnessError::json("emitted chain", e))?;
                ("ok", Some(value), None)
            }
            Outcome::Failed { reason } => ("failed", None, Some(reason.clone())),
        };
        Ok(Self {
            question_id: r.question_id.clone(),
            status: status.into(),
            output,
            reason,
            raw_text: r.raw_text.clone(),
            attempts: r.attempts,
            latency_secs: r.latency_secs,
        })
    }

    /// The parsed prediction: the stored document if present, otherwise
    /// whatever can be recovered from the raw text.
    pub fn prediction(&self) -> Option<ModelOutput> {
        match &self.output {
            Some(v) => parse_chain_value(v).ok(),
            None => extract_chain_text(&self.raw_text).and_then(|t| parse_chain(&t).ok()),
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(String),
    /// Non-retryable client error; recorded as a failed prediction.
    Rejected(String),
    Retry(String),
}

/// Shareable client; one instance serves all evaluation workers.
pub struct ModelClient {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
    token: Option<String>,
    permits: Permits,
    audit: Option<Mutex<File>>,
}

impl ModelClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| HarnessError::ConfigInvalid(format!("http client: {e}")))?;
        let token = std::env::var(&cfg.auth_token_env).ok().filter(|t| !t.is_empty());
        let audit = match &cfg.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| HarnessError::io(path, e))?,
            )),
            None => None,
        };
        Ok(Self {
            permits: Permits::new(cfg.max_in_flight),
            cfg,
            http,
            token,
            audit,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn log(&self, question_id: &str, payload: &Value, response: &str) {
        let Some(audit) = &self.audit else { return };
        let mut request = payload.clone();
        if let Some(parts) = request.pointer_mut("/messages/1/content").and_then(Value::as_array_mut) {
            for part in parts {
                if let Some(url) = part.pointer_mut("/image_url/url") {
                    let len = url.as_str().map_or(0, str::len);
                    *url = Value::String(format!("<elided {len} chars>"));
                }
            }
        }
        let line = json!({"question_id": question_id, "request": request, "response": response});
        if let Ok(mut f) = audit.lock() {
            let _ = writeln!(f, "{line}");
        }
    }

    fn attempt(&self, body: &[u8]) -> Result<Attempt> {
        let _permit = self.permits.acquire();
        let mut req = self
            .http
            .post(self.cfg.completions_url())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(format!("transport: {e}"))),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {e}"))),
        };
        if status.is_success() {
            return Ok(Attempt::Done(text));
        }
        let code = status.as_u16();
        match code {
            401 | 403 => Err(HarnessError::AuthFailure(format!("status {code}: {text}"))),
            429 | 500..=599 | 408 => Ok(Attempt::Retry(format!("status {code}"))),
            _ => Ok(Attempt::Rejected(format!("status {code}: {text}"))),
        }
    }

    /// One request per question, retried on transport errors, timeouts,
    /// 429 and 5xx. Model output that cannot be parsed is a failed
    /// prediction, not an error.
    pub fn infer(
        &self,
        question_id: &str,
        question: &str,
        candset: &CandidateSet,
        images: &BTreeMap<String, Vec<u8>>,
    ) -> Result<InferenceResult> {
        let payload = build_request(question, candset, images, &self.cfg.prompt, &self.cfg)?;
        let body = serde_json::to_vec(&payload).map_err(|e| HarnessError::json("request", e))?;
        let start = Instant::now();
        let mut last_error = String::new();
        for attempt in 1..=self.cfg.max_retries + 1 {
            if attempt > 1 {
                let wait = self.cfg.retry_backoff_base * f64::from(1u32 << (attempt - 2).min(16));
                thread::sleep(Duration::from_secs_f64(wait));
            }
            let (raw_text, outcome) = match self.attempt(&body)? {
                Attempt::Retry(reason) => {
                    last_error = reason;
                    continue;
                }
                Attempt::Rejected(reason) => (String::new(), Outcome::Failed { reason }),
                Attempt::Done(text) => {
                    self.log(question_id, &payload, &text);
                    decode_response(&text)
                }
            };
            return Ok(InferenceResult {
                question_id: question_id.to_owned(),
                raw_text,
                outcome,
                attempts: attempt,
                latency_secs: start.elapsed().as_secs_f64(),
            });
        }
        Err(HarnessError::EndpointUnreachable(format!(
            "{} after {} attempts: {last_error}",
            self.cfg.completions_url(),
            self.cfg.max_retries + 1
        )))
    }
}

fn decode_response(body: &str) -> (String, Outcome) {
    let Some(text) = serde_json::from_str::<Value>(body).ok().as_ref().and_then(response_text) else {
        return (
            body.to_owned(),
            Outcome::Failed {
                reason: "response has no message content".into(),
            },
        );
    };
    let outcome = match extract_chain_text(&text) {
        Some(doc) => match parse_chain(&doc) {
            Ok(out) => Outcome::Parsed(out),
            Err(e) => Outcome::Failed { reason: e.to_string() },
        },
        None => Outcome::Failed {
            reason: "no valid chain document in response".into(),
        },
    };
    (text, outcome)
}
