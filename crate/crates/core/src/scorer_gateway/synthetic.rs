//! Deterministic in-process backend.
//!
//! Every token of candidate `c` receives log-probability
//! `bias + mention_weight * m`, where `m` counts non-overlapping occurrences of
//! `c` in the prompt text. Tokenization is a whitespace split. Label-space
//! changes to the prompt therefore move scores by amounts that can be worked
//! out by hand. Embeddings are unit vectors seeded from the item.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Backend, CandidateScore, EmbedItem, GenerateRequest, GenerateResponse, ScoreRequest, ScoreResponse};
use crate::error::Result;
use crate::rng::{fnv1a64, SplitMix64};

pub const NO_DESCRIPTION: &str = "no distinctive features";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub bias: f64,
    pub mention_weight: f64,
    /// Completion returned for a description query about each label.
    pub descriptions: BTreeMap<String, String>,
    pub embed_dims: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            bias: -5.0,
            mention_weight: 0.5,
            descriptions: BTreeMap::new(),
            embed_dims: 16,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticBackend {
    cfg: SyntheticConfig,
}

impl SyntheticBackend {
    pub fn new(cfg: SyntheticConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    /// Per-token log-probability for `candidate` given prompt text. Capped at
    /// zero so heavily repeated classes stay valid log-probabilities.
    pub fn token_logprob(&self, prompt: &str, candidate: &str) -> f64 {
        let name = candidate.trim();
        let mentions = if name.is_empty() {
            0
        } else {
            prompt.matches(name).count()
        };
        (self.cfg.bias + self.cfg.mention_weight * mentions as f64).min(0.0)
    }

    fn description_for(&self, prompt: &str) -> &str {
        self.cfg
            .descriptions
            .iter()
            .filter(|(label, _)| prompt.contains(&format!("distinguishing a {label}")))
            .max_by_key(|(label, _)| label.len())
            .map_or(NO_DESCRIPTION, |(_, text)| text.as_str())
    }
}

impl Backend for SyntheticBackend {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let results = req
            .candidates
            .iter()
            .map(|c| {
                let tokens: Vec<String> = c.split_whitespace().map(str::to_string).collect();
                let lp = self.token_logprob(&req.prompt, c);
                CandidateScore {
                    candidate: c.clone(),
                    logprobs: vec![lp; tokens.len()],
                    tokens,
                }
            })
            .collect();
        Ok(ScoreResponse { results })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        let text = self.description_for(&req.prompt);
        let words: Vec<&str> = text.split_whitespace().collect();
        let text = if words.len() <= req.max_new_tokens {
            text.to_string()
        } else {
            words[..req.max_new_tokens].join(" ")
        };
        Ok(GenerateResponse { text })
    }

    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        Ok(items
            .iter()
            .map(|item| {
                let key = format!("{}:{}", item.kind_str(), item.value);
                let mut rng = SplitMix64::new(fnv1a64(key.as_bytes()));
                let raw: Vec<f64> = (0..self.cfg.embed_dims.max(1))
                    .map(|_| rng.next_f64() * 2.0 - 1.0)
                    .collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                raw.iter().map(|x| (x / norm) as f32).collect()
            })
            .collect())
    }

    fn fingerprint(&self) -> String {
        format!(
            "synthetic(bias={},mention_weight={},descriptions={})",
            self.cfg.bias,
            self.cfg.mention_weight,
            self.cfg.descriptions.len()
        )
    }
}
