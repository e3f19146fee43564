//! Label distributions for in-context examples and their text renderings.
//!
//! The ground-truth class keeps weight 1. The next most similar classes get
//! weights from a temperature-scaled softmax over their similarities to the
//! image, computed over the kept classes only. The two parts are rendered
//! side by side and never renormalized together.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding_store::{sort_by_similarity, EmbeddingStore, LabelCatalog};
use crate::error::{Error, Result};
use crate::template::{fill, require};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_TOP_M: usize = 3;
pub const DEFAULT_PROBABILITY_DECIMALS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub anchor_label: String,
    /// Sorted by descending weight, ties by ascending label. Weights sum to 1.
    pub similar_entries: Vec<(String, f64)>,
    pub temperature: f64,
    /// Total label count including the anchor.
    pub top_m: usize,
}

impl LabelDistribution {
    /// The single-label space: anchor only.
    pub fn single(anchor: impl Into<String>) -> Self {
        Self {
            anchor_label: anchor.into(),
            similar_entries: Vec::new(),
            temperature: 1.0,
            top_m: 1,
        }
    }

    pub fn anchor_weight(&self) -> f64 {
        1.0
    }

    /// Weights over `classes` in the given order: 1 for the anchor, softmax
    /// weight for kept labels, 0 elsewhere.
    pub fn weights_over<S: AsRef<str>>(&self, classes: &[S]) -> Vec<f64> {
        classes
            .iter()
            .map(|c| {
                let c = c.as_ref();
                if c == self.anchor_label {
                    1.0
                } else {
                    self.similar_entries
                        .iter()
                        .find(|(l, _)| l == c)
                        .map_or(0.0, |(_, w)| *w)
                }
            })
            .collect()
    }
}

/// Softmax of `scores / temperature`, shifted by the maximum for stability.
pub fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().map(|s| s / temperature).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s / temperature - max).exp()).collect();
    // Summed in sorted order so the total does not depend on input order.
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_params(top_m: usize, temperature: f64) -> Result<()> {
    if top_m == 0 {
        return Err(Error::InvalidArgument("top_m must be at least 1".into()));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Builds a distribution from precomputed `(label, similarity)` pairs. The
/// anchor is dropped from `similarities` if present.
pub fn distribution_from_similarities(
    anchor: &str,
    similarities: &[(String, f64)],
    top_m: usize,
    temperature: f64,
) -> Result<LabelDistribution> {
    check_params(top_m, temperature)?;
    if let Some((l, s)) = similarities.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("similarity of {l:?} is {s}")));
    }
    let mut kept: Vec<(String, f64)> = similarities.iter().filter(|(l, _)| l != anchor).cloned().collect();
    sort_by_similarity(&mut kept);
    kept.truncate(top_m - 1);

    let sims: Vec<f64> = kept.iter().map(|(_, s)| *s).collect();
    let weights = softmax_with_temperature(&sims, temperature);
    let similar_entries = kept
        .into_iter()
        .zip(weights)
        .map(|((label, _), w)| (label, w))
        .collect();
    Ok(LabelDistribution {
        anchor_label: anchor.to_string(),
        similar_entries,
        temperature,
        top_m,
    })
}

/// Distribution for an image whose ground truth is `gt_label`. Similarities
/// are taken between `image_id` and every other catalog label.
pub fn compute_label_distribution(
    store: &EmbeddingStore,
    image_id: &str,
    gt_label: &str,
    catalog: &LabelCatalog,
    top_m: usize,
    temperature: f64,
) -> Result<LabelDistribution> {
    check_params(top_m, temperature)?;
    store.record(image_id)?;
    if !catalog.contains(gt_label) {
        return Err(Error::UnknownLabel(gt_label.to_string()));
    }
    let sims = catalog
        .iter()
        .filter(|(class, _)| *class != gt_label)
        .map(|(class, emb)| store.cosine_sim(image_id, emb).map(|s| (class.to_string(), s)))
        .collect::<Result<Vec<_>>>()?;
    distribution_from_similarities(gt_label, &sims, top_m, temperature)
}

/// Which image the similar labels of an example are measured against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionReference {
    #[default]
    IceImage,
    TestImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelStrategy {
    #[serde(rename = "SL")]
    Single,
    #[serde(rename = "EL")]
    Equidistributed,
    #[serde(rename = "DL")]
    Distribution,
    #[serde(rename = "DD")]
    Descriptive,
}

impl FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SL" => Ok(Self::Single),
            "EL" => Ok(Self::Equidistributed),
            "DL" => Ok(Self::Distribution),
            "DD" => Ok(Self::Descriptive),
            other => Err(Error::InvalidArgument(format!("unknown label strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelTemplates {
    pub sl: String,
    pub el: String,
    pub dl: String,
    pub dd: String,
    /// One `label (p)` clause of a rendered distribution.
    pub entry: String,
    pub entry_separator: String,
}

impl Default for LabelTemplates {
    fn default() -> Self {
        Self {
            sl: "{anchor}".into(),
            el: "{anchor} or {sim1}".into(),
            dl: "{distribution}".into(),
            dd: "{anchor}. This image most resembles: {distribution}".into(),
            entry: "{label} ({p})".into(),
            entry_separator: ", ".into(),
        }
    }
}

impl LabelTemplates {
    pub fn validate(&self) -> Result<()> {
        require(&self.sl, "{anchor}")?;
        require(&self.el, "{anchor}")?;
        require(&self.el, "{sim1}")?;
        require(&self.dl, "{distribution}")?;
        require(&self.dd, "{distribution}")?;
        require(&self.entry, "{label}")?;
        require(&self.entry, "{p}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTextConfig {
    pub strategy: LabelStrategy,
    pub templates: LabelTemplates,
    pub probability_decimals: usize,
}

impl LabelTextConfig {
    pub fn new(strategy: LabelStrategy) -> Self {
        Self {
            strategy,
            templates: LabelTemplates::default(),
            probability_decimals: DEFAULT_PROBABILITY_DECIMALS,
        }
    }
}

/// Renders the label text an example carries in the prompt. A distribution
/// without similar entries renders as the plain anchor under every strategy.
pub fn render_label_text(dist: &LabelDistribution, cfg: &LabelTextConfig) -> Result<String> {
    cfg.templates.validate()?;
    let t = &cfg.templates;
    let anchor = dist.anchor_label.as_str();
    if dist.similar_entries.is_empty() {
        return Ok(fill(&t.sl, &[("anchor", anchor)]));
    }
    Ok(match cfg.strategy {
        LabelStrategy::Single => fill(&t.sl, &[("anchor", anchor)]),
        LabelStrategy::Equidistributed => fill(
            &t.el,
            &[("anchor", anchor), ("sim1", dist.similar_entries[0].0.as_str())],
        ),
        LabelStrategy::Distribution | LabelStrategy::Descriptive => {
            let d = cfg.probability_decimals;
            let mut clauses = vec![fill(
                &t.entry,
                &[("label", anchor), ("p", &format_probability(dist.anchor_weight(), d))],
            )];
            clauses.extend(
                dist.similar_entries
                    .iter()
                    .map(|(l, w)| fill(&t.entry, &[("label", l), ("p", &format_probability(*w, d))])),
            );
            let distribution = clauses.join(&t.entry_separator);
            let tpl = if cfg.strategy == LabelStrategy::Distribution {
                &t.dl
            } else {
                &t.dd
            };
            fill(tpl, &[("anchor", anchor), ("distribution", &distribution)])
        }
    })
}

/// Fixed-point rendering with half-up rounding applied to the shortest
/// decimal representation of `value`, so `0.625` becomes `0.63` at two places.
pub fn format_probability(value: f64, decimals: usize) -> String {
    let negative = value.is_sign_negative() && value != 0.0;
    let repr = format!("{}", value.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(decimals))
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part.as_bytes().get(decimals).is_some_and(|&b| b >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::with_capacity(digits.len() + 2);
    if negative {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}
