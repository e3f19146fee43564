//! Length-normalized class scores, prediction, and strategy ensembling.
//!
//! A class score is the mean natural-log probability of the class's tokens as
//! a continuation of the prompt. Means keep multi-token class names from being
//! penalized for their length.

use serde::{Deserialize, Serialize};

use crate::embedding_store::LabelCatalog;
use crate::error::{Error, Result};
use crate::prompt_builder::PromptSequence;
use crate::scorer_gateway::{Gateway, ScoreRequest};

pub const DEFAULT_ENSEMBLE_ALPHA: f64 = 0.5;

/// Mean of the per-token log-probabilities.
pub fn class_score(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptyTokenList);
    }
    let mut sum = 0.0;
    for &lp in token_logprobs {
        if !lp.is_finite() {
            return Err(Error::NonFiniteLogProb);
        }
        if lp > 0.0 {
            return Err(Error::PositiveLogProb(lp));
        }
        sum += lp;
    }
    Ok(sum / token_logprobs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Catalog order; also the tie-break order.
    pub classes: Vec<String>,
    pub scores: Vec<f64>,
    pub token_lengths: Vec<usize>,
    pub predicted: String,
}

impl ClassScores {
    pub fn new(classes: Vec<String>, scores: Vec<f64>, token_lengths: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if classes.len() != scores.len() || classes.len() != token_lengths.len() {
            return Err(Error::InvalidArgument("class, score and length counts differ".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteLogProb);
        }
        let best = argmax_first(&scores);
        let predicted = classes[best].clone();
        Ok(Self {
            classes,
            scores,
            token_lengths,
            predicted,
        })
    }

    pub fn score_of(&self, class: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == class).map(|i| self.scores[i])
    }
}

/// Index of the first maximal element.
fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Options for turning a prompt into a score request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateRendering {
    pub image_marker: String,
    /// Prepended to each class name to form the continuation. Empty by default.
    pub prefix: String,
}

impl Default for CandidateRendering {
    fn default() -> Self {
        Self {
            image_marker: "<image>".into(),
            prefix: String::new(),
        }
    }
}

/// Scores every catalog class as a continuation of `prompt` in one backend
/// call.
pub fn classify(prompt: &PromptSequence, catalog: &LabelCatalog, gateway: &Gateway) -> Result<ClassScores> {
    classify_with(prompt, catalog, gateway, &CandidateRendering::default())
}

pub fn classify_with(
    prompt: &PromptSequence,
    catalog: &LabelCatalog,
    gateway: &Gateway,
    rendering: &CandidateRendering,
) -> Result<ClassScores> {
    classify_classes(prompt, catalog.classes(), gateway, rendering)
}

/// As [`classify_with`], over a bare list of class names.
pub fn classify_classes(
    prompt: &PromptSequence,
    classes: &[String],
    gateway: &Gateway,
    rendering: &CandidateRendering,
) -> Result<ClassScores> {
    if classes.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let serialized = prompt.serialize(&rendering.image_marker)?;
    let candidates: Vec<String> = classes.iter().map(|c| format!("{}{c}", rendering.prefix)).collect();
    let req = ScoreRequest {
        prompt: serialized.text,
        images: serialized.images,
        candidates,
    };
    let resp = gateway.score_candidates(&req)?;

    let mut scores = Vec::with_capacity(classes.len());
    let mut lengths = Vec::with_capacity(classes.len());
    for cand in &req.candidates {
        let r = resp
            .get(cand)
            .ok_or_else(|| Error::CandidateMissingFromResponse(cand.clone()))?;
        scores.push(class_score(&r.logprobs)?);
        lengths.push(r.logprobs.len());
    }
    ClassScores::new(classes.to_vec(), scores, lengths)
}

/// Per-class mean of two score vectors for the same test image.
pub fn ensemble(a: &ClassScores, b: &ClassScores) -> Result<ClassScores> {
    ensemble_weighted(a, b, DEFAULT_ENSEMBLE_ALPHA)
}

/// `alpha * a + (1 - alpha) * b` per class. `b` may list classes in another
/// order; the result follows `a`.
pub fn ensemble_weighted(a: &ClassScores, b: &ClassScores, alpha: f64) -> Result<ClassScores> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("ensemble alpha {alpha} outside [0, 1]")));
    }
    if a.classes.len() != b.classes.len() {
        return Err(Error::ClassSetMismatch(format!(
            "{} classes vs {}",
            a.classes.len(),
            b.classes.len()
        )));
    }
    let scores = a
        .classes
        .iter()
        .zip(&a.scores)
        .map(|(class, &sa)| {
            let sb = b
                .score_of(class)
                .ok_or_else(|| Error::ClassSetMismatch(format!("{class:?} missing from second set")))?;
            Ok(if alpha == 0.5 {
                (sa + sb) / 2.0
            } else {
                alpha * sa + (1.0 - alpha) * sb
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClassScores::new(a.classes.clone(), scores, a.token_lengths.clone())
}
