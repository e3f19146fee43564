//! WebAssembly bindings behind the static playground in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string, or
//! an error message for the page to show.

use icc_core::description_cache::{DescriptionOrigin, VisualDescription};
use icc_core::ice_selection::IceExample;
use icc_core::label_space::{
    distribution_from_similarities, format_probability, render_label_text, LabelStrategy, LabelTextConfig,
};
use icc_core::prompt_builder::{assemble_sequence, build_ice_block, PromptSequence, Segment, SequenceTemplate};
use icc_core::scorer_gateway::{Gateway, SyntheticConfig};
use icc_core::scoring::{classify_classes, CandidateRendering};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MARKER: &str = "<image>";

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses `label: similarity` lines. The label may itself contain colons;
/// the number follows the last one.
fn parse_similarities(text: &str) -> Result<Vec<(String, f64)>, String> {
    non_empty_lines(text)
        .map(|(n, line)| {
            let (label, sim) = line
                .rsplit_once(':')
                .ok_or_else(|| format!("line {n}: expected `label: similarity`"))?;
            let sim: f64 = sim
                .trim()
                .parse()
                .map_err(|_| format!("line {n}: {:?} is not a number", sim.trim()))?;
            Ok((label.trim().to_string(), sim))
        })
        .collect()
}

/// Softmax-weighted neighbours of `anchor` and the label text each strategy
/// would put in a prompt.
#[wasm_bindgen(js_name = exploreDistribution)]
pub fn explore_distribution(
    anchor: &str,
    similarities: &str,
    top_m: usize,
    temperature: f64,
) -> Result<String, String> {
    let sims = parse_similarities(similarities)?;
    let dist = distribution_from_similarities(anchor.trim(), &sims, top_m, temperature).map_err(|e| e.to_string())?;
    let render = |s| render_label_text(&dist, &LabelTextConfig::new(s)).map_err(|e| e.to_string());
    let entries: Vec<_> = dist
        .similar_entries
        .iter()
        .map(|(label, w)| json!({ "label": label, "weight": w, "shown": format_probability(*w, 2) }))
        .collect();
    Ok(json!({
        "anchor": dist.anchor_label,
        "entries": entries,
        "texts": {
            "SL": render(LabelStrategy::Single)?,
            "LDE-EL": render(LabelStrategy::Equidistributed)?,
            "LDE-DL": render(LabelStrategy::Distribution)?,
            "LDE-DD": render(LabelStrategy::Descriptive)?,
        },
    })
    .to_string())
}

/// Assembles a prompt from `image id | label text [| description]` lines
/// followed by the query image.
#[wasm_bindgen(js_name = previewPrompt)]
pub fn preview_prompt(examples: &str, query_id: &str) -> Result<String, String> {
    let template = SequenceTemplate::default();
    let mut blocks = Vec::new();
    for (n, line) in non_empty_lines(examples) {
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        let (id, label, description) = match parts.as_slice() {
            [id, label] => (*id, *label, None),
            [id, label, d] => (*id, *label, Some(*d)),
            _ => return Err(format!("line {n}: expected `id | label` or `id | label | description`")),
        };
        let ice = IceExample {
            image_id: id.to_string(),
            gt_label: label.to_string(),
            similarity_to_query: None,
        };
        let desc = description.map(|d| VisualDescription {
            label: label.to_string(),
            text: d.to_string(),
            origin: DescriptionOrigin::Manual,
            reference_image_id: None,
        });
        blocks.push(build_ice_block(&ice, label, &template, desc.as_ref()).map_err(|e| format!("line {n}: {e}"))?);
    }
    let query = query_id.trim();
    if query.is_empty() {
        return Err("query image id is empty".into());
    }
    let seq = assemble_sequence(blocks, query, &template, "preview").map_err(|e| e.to_string())?;
    let s = seq.serialize(MARKER).map_err(|e| e.to_string())?;
    Ok(json!({ "text": s.text, "images": s.images, "shots": seq.shots }).to_string())
}

/// Splits prompt text at image markers, naming the images in order.
fn prompt_from_text(text: &str) -> PromptSequence {
    let mut segments = Vec::new();
    for (i, part) in text.split(MARKER).enumerate() {
        if i > 0 {
            segments.push(Segment::Image(format!("image{i}")));
        }
        if !part.is_empty() {
            segments.push(Segment::Text(part.to_string()));
        }
    }
    PromptSequence {
        segments,
        strategy: "playground".into(),
        shots: 0,
    }
}

/// Scores each class (one per line) after `prompt` with the synthetic model:
/// every token earns `bias` plus `mention_weight` per earlier mention of the
/// class, capped at zero.
#[wasm_bindgen(js_name = classifySynthetic)]
pub fn classify_synthetic(prompt: &str, classes: &str, bias: f64, mention_weight: f64) -> Result<String, String> {
    if !(bias.is_finite() && mention_weight.is_finite()) {
        return Err("bias and weight must be finite".into());
    }
    let classes: Vec<String> = non_empty_lines(classes).map(|(_, c)| c.to_string()).collect();
    let gateway = Gateway::synthetic(SyntheticConfig {
        bias,
        mention_weight,
        ..SyntheticConfig::default()
    });
    let scores = classify_classes(
        &prompt_from_text(prompt),
        &classes,
        &gateway,
        &CandidateRendering::default(),
    )
    .map_err(|e| e.to_string())?;
    let rows: Vec<_> = (0..scores.classes.len())
        .map(|i| {
            json!({
                "class": scores.classes[i],
                "score": scores.scores[i],
                "tokens": scores.token_lengths[i],
            })
        })
        .collect();
    Ok(json!({ "predicted": scores.predicted, "classes": rows }).to_string())
}
