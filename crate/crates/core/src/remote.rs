//! JSON-over-HTTP clients for external model backends.
//!
//! One POST endpoint per role, all bodies carry `proto_version`:
//!
//! | path          | request                                   | response            |
//! |---------------|-------------------------------------------|---------------------|
//! | `/score`      | `{query, doc_id}`                         | `{score}`           |
//! | `/embed`      | `{tokens}`                                | `{vectors}`         |
//! | `/predict`    | `{masked_query, doc, position, top}`      | `{tokens, probs}`   |
//! | `/perplexity` | `{tokens}`                                | `{ppl}`             |
//!
//! Queries and documents travel as rendered token strings (specials as
//! `[PAD]`, `[MASK]`, `[UNK]`). Responses are validated field by field and
//! numbers are passed through unchanged, except that embedding rows whose
//! norm is off by more than 1e-9 are rescaled to unit length and
//! predictions are re-sorted by descending probability then token id.
//!
//! [`respond`] implements the server side on top of in-process backends and
//! is what the test stubs serve.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{Embedder, PerplexityScorer, Predictor, SearchModel};
use crate::corpus::{Document, SearchIndex};
use crate::lm::PredictionDistribution;
use crate::text::{TokenId, Vocabulary};
use crate::{Error, Result};

pub const PROTO_VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Search,
    Embed,
    Predict,
    Perplexity,
}

impl BackendRole {
    pub fn name(self) -> &'static str {
        match self {
            BackendRole::Search => "search",
            BackendRole::Embed => "embed",
            BackendRole::Predict => "predict",
            BackendRole::Perplexity => "perplexity",
        }
    }

    pub fn path(self) -> &'static str {
        match self {
            BackendRole::Search => "/score",
            BackendRole::Embed => "/embed",
            BackendRole::Predict => "/predict",
            BackendRole::Perplexity => "/perplexity",
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEndpoint {
    /// Base URL; the role path is appended.
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first one.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Sent as `Authorization: Bearer <token>` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        BackendEndpoint {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.url.starts_with("http://") {
            return Err(Error::invalid(
                "url",
                format!("`{}` is not an http:// URL (TLS is not built in)", self.url),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(Error::invalid("timeout_ms", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub proto_version: u32,
    pub query: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub proto_version: u32,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub proto_version: u32,
    pub masked_query: Vec<String>,
    pub doc: String,
    pub position: usize,
    pub top: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRequest {
    pub proto_version: u32,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResponse {
    pub ppl: f64,
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

/// Blocking client for one role's endpoint.
#[derive(Debug, Clone)]
pub struct Client {
    endpoint: BackendEndpoint,
    role: BackendRole,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(endpoint: BackendEndpoint, role: BackendRole) -> Result<Self> {
        endpoint.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Client {
            endpoint,
            role,
            agent,
        })
    }

    pub fn role(&self) -> BackendRole {
        self.role
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn attempt(&self, url: &str, body: &str) -> std::result::Result<Value, Failure> {
        let mut req = self
            .agent
            .post(url)
            .header("content-type", "application/json");
        if let Some(token) = &self.endpoint.token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(Error::protocol(
                "status",
                format!("HTTP {status}: {text}"),
            )));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(Error::protocol("body", e.to_string())))?;
        if !value.is_object() {
            return Err(Failure::Fatal(Error::protocol(
                "body",
                "expected a JSON object",
            )));
        }
        if let Some(v) = value.get("proto_version") {
            if v.as_u64() != Some(PROTO_VERSION as u64) {
                return Err(Failure::Fatal(Error::protocol(
                    "proto_version",
                    format!("expected {PROTO_VERSION}, found {v}"),
                )));
            }
        }
        Ok(value)
    }

    /// Posts `request` with retries and returns the parsed response object.
    pub fn call<R: Serialize>(&self, request: &R) -> Result<Value> {
        let body = serde_json::to_string(request)?;
        let url = format!(
            "{}{}",
            self.endpoint.url.trim_end_matches('/'),
            self.role.path()
        );
        let attempts = self.endpoint.retries as usize + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::debug!(
                        "{} backend attempt {} failed: {msg}",
                        self.role,
                        attempt + 1
                    );
                    last = msg;
                    if attempt + 1 < attempts {
                        let delay = self
                            .endpoint
                            .backoff_ms
                            .saturating_mul(1 << attempt.min(16));
                        thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(Error::BackendUnavailable {
            role: self.role.name(),
            attempts,
            last,
        })
    }
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::protocol(name, "missing"))
}

fn finite(v: &Value, name: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::protocol(name, format!("expected a finite number, found {v}")))
}

fn array<'a>(v: &'a Value, name: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::protocol(name, "expected an array"))
}

fn surfaces(vocab: &Vocabulary, ids: &[TokenId]) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.surface(id).to_string())
        .collect()
}

pub fn parse_score(resp: &Value) -> Result<f64> {
    finite(field(resp, "score")?, "score")
}

/// Validates shape and finiteness; rows off unit norm are rescaled.
pub fn parse_vectors(resp: &Value, expected_rows: usize) -> Result<Vec<Vec<f64>>> {
    let rows = array(field(resp, "vectors")?, "vectors")?;
    if rows.len() != expected_rows {
        return Err(Error::protocol(
            "vectors",
            format!("expected {expected_rows} rows, found {}", rows.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let name = format!("vectors[{i}]");
        let row = array(row, &name)?;
        if row.is_empty() {
            return Err(Error::protocol(name, "empty vector"));
        }
        if let Some(first) = out.first().map(Vec::len) {
            if row.len() != first {
                return Err(Error::protocol(
                    name,
                    format!("dimension {} differs from {first}", row.len()),
                ));
            }
        }
        let mut v = row
            .iter()
            .enumerate()
            .map(|(j, x)| finite(x, &format!("vectors[{i}][{j}]")))
            .collect::<Result<Vec<f64>>>()?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::protocol(name, "zero vector"));
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            for x in &mut v {
                *x /= norm;
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Validates tokens against the vocabulary and probabilities against [0, 1],
/// then orders by descending probability with ties by token id.
pub fn parse_prediction(
    resp: &Value,
    vocab: &Vocabulary,
    position: usize,
    top: usize,
) -> Result<PredictionDistribution> {
    let tokens = array(field(resp, "tokens")?, "tokens")?;
    let probs = array(field(resp, "probs")?, "probs")?;
    if tokens.len() != probs.len() {
        return Err(Error::protocol(
            "probs",
            format!("{} probabilities for {} tokens", probs.len(), tokens.len()),
        ));
    }
    if tokens.len() > top {
        return Err(Error::protocol(
            "tokens",
            format!("{} entries exceed top={top}", tokens.len()),
        ));
    }
    let mut entries: Vec<(TokenId, f64)> = Vec::with_capacity(tokens.len());
    for (i, (t, p)) in tokens.iter().zip(probs).enumerate() {
        let name = format!("tokens[{i}]");
        let surface = t
            .as_str()
            .ok_or_else(|| Error::protocol(name.clone(), "expected a string"))?;
        let id = vocab.parse_surface(surface);
        if id.is_special() {
            return Err(Error::protocol(
                name,
                format!("`{surface}` is not a predictable vocabulary token"),
            ));
        }
        if entries.iter().any(|&(e, _)| e == id) {
            return Err(Error::protocol(
                name,
                format!("duplicate token `{surface}`"),
            ));
        }
        let prob = finite(p, &format!("probs[{i}]"))?;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::protocol(
                format!("probs[{i}]"),
                format!("{prob} outside [0, 1]"),
            ));
        }
        entries.push((id, prob));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PredictionDistribution { position, entries })
}

pub fn parse_perplexity(resp: &Value) -> Result<f64> {
    let ppl = finite(field(resp, "ppl")?, "ppl")?;
    if ppl <= 0.0 {
        return Err(Error::protocol("ppl", format!("{ppl} is not positive")));
    }
    Ok(ppl)
}

/// Remote search model; documents are referenced by id.
#[derive(Debug, Clone)]
pub struct RemoteSearch {
    client: Client,
    vocab: Vocabulary,
}

impl RemoteSearch {
    pub fn new(endpoint: BackendEndpoint, vocab: Vocabulary) -> Result<Self> {
        Ok(RemoteSearch {
            client: Client::new(endpoint, BackendRole::Search)?,
            vocab,
        })
    }
}

impl SearchModel for RemoteSearch {
    fn rel(&self, query: &[TokenId], doc: &Document) -> Result<f64> {
        let resp = self.client.call(&ScoreRequest {
            proto_version: PROTO_VERSION,
            query: self.vocab.render(query),
            doc_id: doc.id.clone(),
        })?;
        parse_score(&resp)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: Client,
    vocab: Vocabulary,
}

impl RemoteEmbedder {
    pub fn new(endpoint: BackendEndpoint, vocab: Vocabulary) -> Result<Self> {
        Ok(RemoteEmbedder {
            client: Client::new(endpoint, BackendRole::Embed)?,
            vocab,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        let resp = self.client.call(&EmbedRequest {
            proto_version: PROTO_VERSION,
            tokens: surfaces(&self.vocab, tokens),
        })?;
        parse_vectors(&resp, tokens.len())
    }
}

#[derive(Debug, Clone)]
pub struct RemotePredictor {
    client: Client,
    vocab: Vocabulary,
}

impl RemotePredictor {
    pub fn new(endpoint: BackendEndpoint, vocab: Vocabulary) -> Result<Self> {
        Ok(RemotePredictor {
            client: Client::new(endpoint, BackendRole::Predict)?,
            vocab,
        })
    }
}

impl Predictor for RemotePredictor {
    fn predict(
        &self,
        masked_query: &[TokenId],
        counter_doc: &Document,
        position: usize,
        top: usize,
    ) -> Result<PredictionDistribution> {
        let resp = self.client.call(&PredictRequest {
            proto_version: PROTO_VERSION,
            masked_query: surfaces(&self.vocab, masked_query),
            doc: self.vocab.render(&counter_doc.tokens),
            position,
            top,
        })?;
        parse_prediction(&resp, &self.vocab, position, top)
    }
}

#[derive(Debug, Clone)]
pub struct RemotePerplexity {
    client: Client,
    vocab: Vocabulary,
}

impl RemotePerplexity {
    pub fn new(endpoint: BackendEndpoint, vocab: Vocabulary) -> Result<Self> {
        Ok(RemotePerplexity {
            client: Client::new(endpoint, BackendRole::Perplexity)?,
            vocab,
        })
    }
}

impl PerplexityScorer for RemotePerplexity {
    fn perplexity(&self, tokens: &[TokenId]) -> Result<f64> {
        let resp = self.client.call(&PerplexityRequest {
            proto_version: PROTO_VERSION,
            tokens: surfaces(&self.vocab, tokens),
        })?;
        parse_perplexity(&resp)
    }
}

/// In-process backends exposed by [`respond`].
#[derive(Clone, Copy)]
pub struct LocalBackends<'a> {
    pub index: &'a SearchIndex,
    pub search: &'a dyn SearchModel,
    pub embedder: &'a dyn Embedder,
    pub predictor: &'a dyn Predictor,
    pub perplexity: &'a dyn PerplexityScorer,
}

fn serve(path: &str, body: &str, b: &LocalBackends<'_>) -> Result<String> {
    let vocab = b.index.vocab();
    let parse_ids = |tokens: &[String]| -> Vec<TokenId> {
        tokens.iter().map(|s| vocab.parse_surface(s)).collect()
    };
    let out = match path {
        "/score" => {
            let req: ScoreRequest = serde_json::from_str(body)?;
            let doc = b.index.corpus().doc(&req.doc_id)?;
            serde_json::to_string(&ScoreResponse {
                score: b.search.rel(&vocab.parse_rendered(&req.query), doc)?,
            })?
        }
        "/embed" => {
            let req: EmbedRequest = serde_json::from_str(body)?;
            serde_json::to_string(&EmbedResponse {
                vectors: b.embedder.embed(&parse_ids(&req.tokens))?,
            })?
        }
        "/predict" => {
            let req: PredictRequest = serde_json::from_str(body)?;
            let doc = Document {
                id: String::new(),
                text: req.doc.clone(),
                tokens: vocab.parse_rendered(&req.doc),
            };
            let dist =
                b.predictor
                    .predict(&parse_ids(&req.masked_query), &doc, req.position, req.top)?;
            serde_json::to_string(&PredictResponse {
                tokens: dist
                    .entries
                    .iter()
                    .map(|&(t, _)| vocab.surface(t).to_string())
                    .collect(),
                probs: dist.entries.iter().map(|&(_, p)| p).collect(),
            })?
        }
        "/perplexity" => {
            let req: PerplexityRequest = serde_json::from_str(body)?;
            serde_json::to_string(&PerplexityResponse {
                ppl: b.perplexity.perplexity(&parse_ids(&req.tokens))?,
            })?
        }
        other => return Err(Error::protocol("path", format!("no endpoint {other}"))),
    };
    Ok(out)
}

/// Server-side handler: returns an HTTP status and a JSON body.
pub fn respond(path: &str, body: &str, backends: &LocalBackends<'_>) -> (u16, String) {
    match serve(path, body, backends) {
        Ok(s) => (200, s),
        Err(e) => (
            400,
            serde_json::json!({ "error": e.to_string() }).to_string(),
        ),
    }
}
