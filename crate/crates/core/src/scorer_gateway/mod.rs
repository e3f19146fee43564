//! Boundary to model backends.
//!
//! Backends own tokenization and image loading; this side only sees prompt
//! text, image ids, and per-token log-probabilities. [`Gateway`] validates
//! every request and response against the protocol contract, whichever
//! backend sits behind it.

mod client;
pub mod conformance;
pub mod server;
mod synthetic;
pub mod wire;

use std::collections::HashSet;
use std::io::Write;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use client::{ClientOptions, LineJsonClient};
pub use synthetic::{SyntheticBackend, SyntheticConfig, NO_DESCRIPTION};

use crate::embedding_store::RecordKind;
use crate::error::{Error, Result};
use crate::prompt_builder::marker_positions;

pub const DEFAULT_MAX_NEW_TOKENS: usize = 20;
pub const DEFAULT_LENGTH_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub images: Vec<String>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<CandidateScore>,
}

impl ScoreResponse {
    pub fn get(&self, candidate: &str) -> Option<&CandidateScore> {
        self.results.iter().find(|r| r.candidate == candidate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub images: Vec<String>,
    pub max_new_tokens: usize,
    pub length_penalty: f64,
}

impl GenerateRequest {
    pub fn new(prompt: String, images: Vec<String>, max_new_tokens: usize) -> Self {
        Self {
            prompt,
            images,
            max_new_tokens,
            length_penalty: DEFAULT_LENGTH_PENALTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// One item of an ingestion-time `embed` call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedItem {
    pub id: String,
    pub kind: RecordKind,
    /// Image path or label text.
    pub value: String,
}

impl EmbedItem {
    pub fn image(id: &str, path: &str) -> Self {
        Self {
            id: id.into(),
            kind: RecordKind::Image,
            value: path.into(),
        }
    }

    pub fn label(id: &str, text: &str) -> Self {
        Self {
            id: id.into(),
            kind: RecordKind::Label,
            value: text.into(),
        }
    }

    pub(crate) fn kind_str(&self) -> &'static str {
        match self.kind {
            RecordKind::Image => "image",
            RecordKind::Label => "label",
        }
    }
}

/// A model backend. Implementations must be pure with respect to requests:
/// identical requests yield identical responses.
pub trait Backend: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse>;
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse>;
    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>>;
    fn fingerprint(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        (**self).score(req)
    }
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        (**self).generate(req)
    }
    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(items)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

pub fn validate_score_request(req: &ScoreRequest, image_marker: &str) -> Result<()> {
    if req.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = req.candidates.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate candidate {dup:?}")));
    }
    check_image_count(&req.prompt, &req.images, image_marker)
}

fn check_image_count(prompt: &str, images: &[String], image_marker: &str) -> Result<()> {
    let markers = marker_positions(prompt, image_marker).len();
    if markers != images.len() {
        return Err(Error::InvalidArgument(format!(
            "prompt has {markers} image markers but {} image references",
            images.len()
        )));
    }
    Ok(())
}

/// Checks a score response against the request it answers.
pub fn validate_score_response(req: &ScoreRequest, resp: &ScoreResponse) -> Result<()> {
    let mut seen = HashSet::new();
    for r in &resp.results {
        if !req.candidates.contains(&r.candidate) {
            return Err(Error::ProtocolViolation(format!(
                "unrequested candidate {:?} in response",
                r.candidate
            )));
        }
        if !seen.insert(r.candidate.as_str()) {
            return Err(Error::ProtocolViolation(format!(
                "candidate {:?} appears twice",
                r.candidate
            )));
        }
        if r.tokens.len() != r.logprobs.len() {
            return Err(Error::ProtocolViolation(format!(
                "candidate {:?}: {} tokens but {} logprobs",
                r.candidate,
                r.tokens.len(),
                r.logprobs.len()
            )));
        }
        if r.tokens.is_empty() {
            return Err(Error::ProtocolViolation(format!(
                "candidate {:?} has no tokens",
                r.candidate
            )));
        }
        if let Some(lp) = r.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(Error::ProtocolViolation(format!(
                "candidate {:?} has invalid logprob {lp}",
                r.candidate
            )));
        }
    }
    if let Some(missing) = req.candidates.iter().find(|c| !seen.contains(c.as_str())) {
        return Err(Error::CandidateMissingFromResponse(missing.clone()));
    }
    Ok(())
}

/// Completions may not exceed the token budget. Whitespace words are a lower
/// bound on backend tokens, so this never rejects a compliant backend.
pub fn validate_generate_response(req: &GenerateRequest, resp: &GenerateResponse) -> Result<()> {
    let words = resp.text.split_whitespace().count();
    if words > req.max_new_tokens {
        return Err(Error::ProtocolViolation(format!(
            "completion has {words} words for a budget of {} tokens",
            req.max_new_tokens
        )));
    }
    Ok(())
}

/// Validating front door to a backend, with optional audit logging of every
/// request/response pair as JSON lines.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    image_marker: String,
    audit: Option<Mutex<Box<dyn Write + Send>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.fingerprint())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            image_marker: "<image>".into(),
            audit: None,
        }
    }

    pub fn synthetic(cfg: SyntheticConfig) -> Self {
        Self::new(SyntheticBackend::new(cfg))
    }

    /// `"synthetic"` selects the in-process backend; anything else is a TCP
    /// address (`host:port` or `tcp://host:port`).
    pub fn from_endpoint(endpoint: &str, synthetic: &SyntheticConfig, opts: ClientOptions) -> Self {
        match endpoint.trim() {
            "synthetic" => Self::synthetic(synthetic.clone()),
            addr => Self::new(LineJsonClient::new(addr, opts)),
        }
    }

    pub fn with_image_marker(mut self, marker: &str) -> Self {
        self.image_marker = marker.to_string();
        self
    }

    pub fn with_audit(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.audit = Some(Mutex::new(sink));
        self
    }

    pub fn fingerprint(&self) -> String {
        self.backend.fingerprint()
    }

    fn log<Q: Serialize, R: Serialize>(&self, op: &str, req: &Q, resp: &Result<R>) {
        let Some(sink) = &self.audit else { return };
        let entry = serde_json::json!({
            "op": op,
            "request": req,
            "response": resp.as_ref().ok(),
            "error": resp.as_ref().err().map(|e| e.to_string()),
        });
        let mut sink = sink.lock().unwrap_or_else(|e| e.into_inner());
        let _ = writeln!(sink, "{entry}");
    }

    pub fn score_candidates(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        validate_score_request(req, &self.image_marker)?;
        let resp = self
            .backend
            .score(req)
            .and_then(|resp| validate_score_response(req, &resp).map(|_| resp));
        self.log("score", req, &resp);
        resp
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        check_image_count(&req.prompt, &req.images, &self.image_marker)?;
        let resp = self
            .backend
            .generate(req)
            .and_then(|resp| validate_generate_response(req, &resp).map(|_| resp));
        self.log("generate", req, &resp);
        resp
    }

    pub fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        let resp = self.backend.embed(items).and_then(|v| {
            if v.len() != items.len() {
                return Err(Error::ProtocolViolation(format!(
                    "{} vectors for {} items",
                    v.len(),
                    items.len()
                )));
            }
            let dims = v.first().map_or(0, Vec::len);
            if dims == 0 || v.iter().any(|r| r.len() != dims) {
                return Err(Error::ProtocolViolation("ragged or empty embed vectors".into()));
            }
            Ok(v)
        });
        self.log("embed", &items, &resp);
        resp
    }
}
