//! Chat-completion client: an OpenAI-compatible HTTP backend, scripted mocks,
//! and a backend that answers from the geometry oracle.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::oracle::{answer_query_deterministic, OracleAnswer, OracleConfig, OracleError, SizeRelation};
use crate::prompt::PromptBundle;
use crate::query::{interpret_query, QueryCategory, StructuredQuery};
use crate::response::{render_response, ParsedResponse};
use crate::scalar::Scalar;
use crate::scene::{format_number, SceneGraph, Vec3};

pub const ENV_API_KEY: &str = "SCENEGPT_API_KEY";
pub const ENV_API_URL: &str = "SCENEGPT_API_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub retry_base_delay_ms: u64,
    /// Requests allowed in flight at once.
    pub concurrency: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4-16k".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout_secs: 60.0,
            max_retries: 2,
            retry_base_delay_ms: 500,
            concurrency: 4,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err("timeout_secs must be > 0".into());
        }
        if self.concurrency == 0 {
            return Err("concurrency must be >= 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be >= 0".into());
        }
        if self.base_url.trim().is_empty() {
            return Err("base_url must not be empty".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("no API key: set {ENV_API_KEY}")]
    AuthMissing,
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint rejected the prompt length: {0}")]
    ContextOverflow(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    InvalidResponse(String),
    #[error("the oracle cannot decide {0} queries")]
    UnsupportedCategory(QueryCategory),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("mock script: {0}")]
    Mock(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Network(_) | Self::Timeout => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns an assembled prompt into raw response text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Connect(String),
}

/// Sends one JSON POST. Split out so retry logic can be tested offline.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.free.lock().unwrap() += 1;
        self.limiter.cv.notify_one();
    }
}

/// Request body for one completion: the assembled prompt as the system
/// message, the bare question as the user message.
pub fn request_body(prompt: &PromptBundle, cfg: &LlmConfig) -> Value {
    json!({
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": prompt.system_text},
            {"role": "user", "content": prompt.user_query},
        ],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    })
}

fn is_context_overflow(body: &str) -> bool {
    let lower = body.to_lowercase();
    lower.contains("context_length_exceeded")
        || lower.contains("maximum context length")
        || lower.contains("context length")
}

fn classify(resp: HttpResponse) -> Result<String, LlmError> {
    match resp.status {
        200..=299 => {
            let v: Value = serde_json::from_str(&resp.body)
                .map_err(|e| LlmError::InvalidResponse(e.to_string()))?;
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| LlmError::InvalidResponse("missing choices[0].message.content".into()))
        }
        400 | 413 if resp.status == 413 || is_context_overflow(&resp.body) => {
            Err(LlmError::ContextOverflow(resp.body))
        }
        status => Err(LlmError::Http { status, body: resp.body }),
    }
}

/// OpenAI-compatible chat-completions client with retry.
pub struct LiveClient<Tr = ReqwestTransport> {
    cfg: LlmConfig,
    api_key: Option<String>,
    transport: Tr,
    limiter: Limiter,
}

impl LiveClient<ReqwestTransport> {
    /// Reads the key from `SCENEGPT_API_KEY`; an empty value counts as unset.
    pub fn from_env(cfg: LlmConfig) -> Self {
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.trim().is_empty());
        Self::with_transport(cfg, key, ReqwestTransport::default())
    }
}

impl<Tr: HttpTransport> LiveClient<Tr> {
    pub fn with_transport(cfg: LlmConfig, api_key: Option<String>, transport: Tr) -> Self {
        let limiter = Limiter::new(cfg.concurrency);
        Self {
            cfg,
            api_key,
            transport,
            limiter,
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }
}

impl<Tr: HttpTransport> ChatBackend for LiveClient<Tr> {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        let key = self.api_key.as_deref().ok_or(LlmError::AuthMissing)?;
        let body = request_body(prompt, &self.cfg);
        let url = self.cfg.completions_url();
        let _slot = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            let result = match self.transport.post_json(&url, key, &body, self.cfg.timeout()) {
                Ok(resp) => classify(resp),
                Err(TransportError::Timeout) => Err(LlmError::Timeout),
                Err(TransportError::Connect(e)) => Err(LlmError::Network(e)),
            };
            match result {
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.retry_base_delay_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("attempt {} failed ({e}), retrying in {delay} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Case-insensitive substring of the user question.
    pub contains: String,
    pub response: String,
}

/// Canned responses: either a list replayed in order (wrapping around), or
/// substring rules over the user question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockScript {
    Sequence(Vec<String>),
    Rules {
        rules: Vec<MockRule>,
        #[serde(default)]
        default: Option<String>,
    },
}

pub struct MockBackend {
    script: MockScript,
    cursor: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| LlmError::Mock(e.to_string()))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        match &self.script {
            MockScript::Sequence(items) => {
                if items.is_empty() {
                    return Err(LlmError::Mock("empty response list".into()));
                }
                let i = self.cursor.fetch_add(1, Ordering::SeqCst);
                Ok(items[i % items.len()].clone())
            }
            MockScript::Rules { rules, default } => {
                let q = prompt.user_query.to_lowercase();
                rules
                    .iter()
                    .find(|r| q.contains(&r.contains.to_lowercase()))
                    .map(|r| r.response.clone())
                    .or_else(|| default.clone())
                    .ok_or_else(|| LlmError::Mock(format!("no rule matches {:?}", prompt.user_query)))
            }
        }
    }
}

fn vec_text<T: Scalar>(v: Vec3<T>) -> String {
    let parts: Vec<String> = v.to_array().iter().map(|c| format_number(*c, None)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt3<T: Scalar>(v: T) -> String {
    format_number(v, Some(3))
}

fn label(tag: &str, id: impl std::fmt::Display) -> String {
    format!("the {tag} (id: {id})")
}

/// Structured five-step answer for an oracle result.
pub fn oracle_response<T: Scalar>(answer: &OracleAnswer<T>) -> Result<ParsedResponse, LlmError> {
    let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
    let resp = match answer {
        OracleAnswer::OnTopOf {
            subject,
            object,
            holds,
            gap,
            footprints_overlap,
        } => {
            let (s, o) = (label(&subject.object_tag, subject.id), label(&object.object_tag, object.id));
            ParsedResponse {
                inferred_query: format!("Decide whether {s} is located on top of {o}."),
                relevant_object_ids: vec![subject.id, object.id],
                relevance_reason: "Both objects are named in the question; their bbox_center and bbox_extent fields fix where each box sits."
                    .to_string(),
                final_text: if *holds {
                    format!("Yes, {s} is on top of {o}.")
                } else {
                    format!("No, {s} is not on top of {o}.")
                },
                final_object_tag: Some(subject.object_tag.clone()),
                final_object_id: Some(subject.id),
                final_answer: Some(yes_no(*holds)),
                explanation: format!(
                    "The bbox_center of {s} is {} and of {o} is {}. The third entry is the height in z: {} against {}. \
                     The footprints in x and y {}. The bottom of {s} is {} from the top of {o}.",
                    vec_text(subject.bbox_center),
                    vec_text(object.bbox_center),
                    format_number(subject.bbox_center.z, None),
                    format_number(object.bbox_center.z, None),
                    if *footprints_overlap { "overlap" } else { "do not overlap" },
                    fmt3(*gap),
                ),
                ..ParsedResponse::default()
            }
        }
        OracleAnswer::SizeCompare {
            a,
            b,
            ordering,
            question,
            answer,
        } => {
            let (la, lb) = (label(&a.object_tag, a.id), label(&b.object_tag, b.id));
            let adjective = match question {
                crate::query::SizeQuestion::Bigger => "bigger",
                crate::query::SizeQuestion::Smaller => "smaller",
            };
            let chosen = match answer {
                Some(id) if *id == b.id => b,
                _ => a,
            };
            let lc = label(&chosen.object_tag, chosen.id);
            ParsedResponse {
                inferred_query: format!("Decide which of {la} and {lb} is {adjective}."),
                relevant_object_ids: vec![a.id, b.id],
                relevance_reason: "The bbox_extent field gives the size of each bounding box in x, y and z.".into(),
                final_text: if ordering.relation == SizeRelation::Similar {
                    format!("{la} and {lb} are similar in size.")
                } else {
                    format!("{lc} is {adjective}.")
                },
                final_object_tag: Some(chosen.object_tag.clone()),
                final_object_id: Some(chosen.id),
                final_answer: (ordering.relation == SizeRelation::Similar).then(|| "similar".to_string()),
                explanation: format!(
                    "The bbox_extent of {la} is {} with volume {} and of {lb} is {} with volume {}; the volume ratio is {}.",
                    vec_text(a.bbox_extent),
                    fmt3(a.bbox_extent.product()),
                    vec_text(b.bbox_extent),
                    fmt3(b.bbox_extent.product()),
                    fmt3(ordering.ratio),
                ),
                ..ParsedResponse::default()
            }
        }
        OracleAnswer::Containment { outer, inner, holds } => {
            let (lo, li) = (label(&outer.object_tag, outer.id), label(&inner.object_tag, inner.id));
            let sorted = |v: Vec3<T>| {
                let s = v.sorted();
                vec_text(Vec3::from_array(s))
            };
            ParsedResponse {
                inferred_query: format!("Decide whether {lo} can contain {li}."),
                relevant_object_ids: vec![outer.id, inner.id],
                relevance_reason: "Containment depends on the bbox_extent of both objects.".into(),
                final_text: if *holds {
                    format!("Yes, {lo} can contain {li}.")
                } else {
                    format!("No, {lo} cannot contain {li}.")
                },
                final_object_tag: Some(outer.object_tag.clone()),
                final_object_id: Some(outer.id),
                final_answer: Some(yes_no(*holds)),
                explanation: format!(
                    "Sorted extents are {} for {lo} and {} for {li}; every side of the inner box must be strictly smaller.",
                    sorted(outer.bbox_extent),
                    sorted(inner.bbox_extent),
                ),
                ..ParsedResponse::default()
            }
        }
        OracleAnswer::RelativePosition { a, b, position } => {
            let (la, lb) = (label(&a.object_tag, a.id), label(&b.object_tag, b.id));
            let names: Vec<&str> = position.relations.iter().map(|r| r.name()).collect();
            ParsedResponse {
                inferred_query: format!("Describe where {la} is with respect to {lb}."),
                relevant_object_ids: vec![a.id, b.id],
                relevance_reason: "The bbox_center field gives the location of each object.".into(),
                final_text: format!("Relative to {lb}, {la} is: {}.", names.join(", ")),
                final_object_tag: Some(a.object_tag.clone()),
                final_object_id: Some(a.id),
                final_answer: Some(names.join(", ")),
                explanation: format!(
                    "The bbox_center of {la} is {} and of {lb} is {}. Offsets are x {}, y {}, z {} (z is height), distance {}.",
                    vec_text(a.bbox_center),
                    vec_text(b.bbox_center),
                    fmt3(position.delta.x),
                    fmt3(position.delta.y),
                    fmt3(position.delta.z),
                    fmt3(position.distance),
                ),
                ..ParsedResponse::default()
            }
        }
        OracleAnswer::RequiresWorldKnowledge { category } => {
            return Err(LlmError::UnsupportedCategory(*category));
        }
    };
    Ok(resp)
}

/// Five-step answer declining to name an object.
pub fn decline_response(question: &str, reason: &str) -> ParsedResponse {
    ParsedResponse {
        inferred_query: question.trim().replace('\n', " "),
        relevant_object_ids: Vec::new(),
        relevance_reason: "No object in the scene can be grounded for this question.".into(),
        final_text: "I cannot identify an object that answers this question.".into(),
        explanation: reason.replace('\n', " "),
        ..ParsedResponse::default()
    }
}

/// Renders the oracle's answer to `query` in the five-step format.
pub fn oracle_backed_mock<T: Scalar>(
    scene: &SceneGraph<T>,
    query: &StructuredQuery,
    cfg: &OracleConfig<T>,
) -> Result<String, LlmError> {
    if scene.is_empty() {
        let text = match query {
            StructuredQuery::Affordance { text }
            | StructuredQuery::Negation { text }
            | StructuredQuery::Freeform { text } => text.clone(),
            other => format!("{} query", other.category()),
        };
        return Ok(render_response(&decline_response(&text, "The scene contains no objects.")));
    }
    let answer = answer_query_deterministic(scene, query, cfg)?;
    Ok(render_response(&oracle_response(&answer)?))
}

/// Backend that interprets the user question and answers from geometry.
/// Questions the oracle cannot decide get a five-step decline.
pub struct OracleBackend<T> {
    scene: SceneGraph<T>,
    cfg: OracleConfig<T>,
}

impl<T: Scalar> OracleBackend<T> {
    pub fn new(scene: SceneGraph<T>, cfg: OracleConfig<T>) -> Self {
        Self { scene, cfg }
    }
}

impl<T: Scalar> ChatBackend for OracleBackend<T> {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        let question = &prompt.user_query;
        let q = interpret_query(&self.scene, question);
        match oracle_backed_mock(&self.scene, &q, &self.cfg) {
            Ok(text) => Ok(text),
            Err(LlmError::UnsupportedCategory(c)) => Ok(render_response(&decline_response(
                question,
                &format!("{c} questions need world knowledge that box geometry does not provide."),
            ))),
            Err(LlmError::Oracle(e)) => Ok(render_response(&decline_response(question, &e.to_string()))),
            Err(e) => Err(e),
        }
    }
}
