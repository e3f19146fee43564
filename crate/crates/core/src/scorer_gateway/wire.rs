//! Line-delimited JSON messages exchanged with model backends.

use serde::{Deserialize, Serialize};

use super::{CandidateScore, EmbedItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum WireRequest {
    Score {
        id: String,
        prompt: String,
        images: Vec<String>,
        candidates: Vec<String>,
    },
    Generate {
        id: String,
        prompt: String,
        images: Vec<String>,
        max_new_tokens: usize,
        length_penalty: f64,
    },
    Embed {
        id: String,
        items: Vec<EmbedItem>,
    },
}

impl WireRequest {
    pub fn id(&self) -> &str {
        match self {
            WireRequest::Score { id, .. } | WireRequest::Generate { id, .. } | WireRequest::Embed { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

/// Any response line. Exactly one payload field is set on success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<CandidateScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl WireResponse {
    fn ok(id: &str) -> Self {
        Self {
            id: id.to_string(),
            ok: true,
            results: None,
            text: None,
            vectors: None,
            error: None,
        }
    }

    pub fn scores(id: &str, results: Vec<CandidateScore>) -> Self {
        Self {
            results: Some(results),
            ..Self::ok(id)
        }
    }

    pub fn text(id: &str, text: String) -> Self {
        Self {
            text: Some(text),
            ..Self::ok(id)
        }
    }

    pub fn vectors(id: &str, vectors: Vec<Vec<f32>>) -> Self {
        Self {
            vectors: Some(vectors),
            ..Self::ok(id)
        }
    }

    pub fn error(id: &str, code: &str, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(WireError {
                code: code.to_string(),
                message: message.into(),
            }),
            ..Self::ok(id)
        }
    }
}

pub const ERROR_CODES: [&str; 3] = ["bad_request", "model_error", "overloaded"];
