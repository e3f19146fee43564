//! Interleaved image/text sequences and their wire serialization.
//!
//! Image positions are kept as [`Segment::Image`] entries; the image marker
//! string is only inserted by [`PromptSequence::serialize`]. Candidate class
//! text never appears in an assembled sequence: one prompt serves every
//! candidate.

use serde::{Deserialize, Serialize};

use crate::description_cache::VisualDescription;
use crate::error::{Error, Result};
use crate::ice_selection::IceExample;
use crate::template::{fill, require};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Image(String),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSequence {
    pub segments: Vec<Segment>,
    pub strategy: String,
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedPrompt {
    pub text: String,
    pub images: Vec<String>,
}

impl PromptSequence {
    pub fn image_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Image(_))).count()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Image(id) => Some(id.clone()),
                Segment::Text(_) => None,
            })
            .collect()
    }

    /// Flattens to prompt text with `image_marker` at each image position.
    pub fn serialize(&self, image_marker: &str) -> Result<SerializedPrompt> {
        let mut text = String::new();
        let mut images = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Image(id) => {
                    text.push_str(image_marker);
                    images.push(id.clone());
                }
                Segment::Text(t) => {
                    if !image_marker.is_empty() && t.contains(image_marker) {
                        return Err(Error::InvalidArgument(format!(
                            "text segment contains the image marker {image_marker:?}"
                        )));
                    }
                    text.push_str(t);
                }
            }
        }
        Ok(SerializedPrompt { text, images })
    }
}

/// Byte offsets of every image marker in serialized prompt text.
pub fn marker_positions(text: &str, image_marker: &str) -> Vec<usize> {
    if image_marker.is_empty() {
        return Vec::new();
    }
    text.match_indices(image_marker).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceTemplate {
    pub ice_block: String,
    pub description_block: String,
    pub query_block: String,
    pub block_separator: String,
    pub image_marker: String,
}

impl Default for SequenceTemplate {
    fn default() -> Self {
        Self {
            ice_block: "Output:{label_text}".into(),
            description_block: "Output:{label_text}, which has {description}".into(),
            query_block: "Output:".into(),
            block_separator: "<|endofchunk|>".into(),
            image_marker: "<image>".into(),
        }
    }
}

impl SequenceTemplate {
    pub fn validate(&self) -> Result<()> {
        require(&self.ice_block, "{label_text}")?;
        require(&self.description_block, "{label_text}")?;
        require(&self.description_block, "{description}")?;
        if self.image_marker.is_empty() {
            return Err(Error::InvalidArgument("image marker is empty".into()));
        }
        for block in [
            &self.ice_block,
            &self.description_block,
            &self.query_block,
            &self.block_separator,
        ] {
            if block.contains(&self.image_marker) {
                return Err(Error::InvalidArgument(format!(
                    "template block {block:?} contains the image marker"
                )));
            }
        }
        Ok(())
    }
}

/// `[Image(example), Text(block + separator)]` for one example.
pub fn build_ice_block(
    example: &IceExample,
    label_text: &str,
    template: &SequenceTemplate,
    description: Option<&VisualDescription>,
) -> Result<Vec<Segment>> {
    template.validate()?;
    if label_text.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty label text for example {}",
            example.image_id
        )));
    }
    let mut text = match description {
        Some(d) => fill(
            &template.description_block,
            &[("label_text", label_text), ("description", &d.text)],
        ),
        None => fill(&template.ice_block, &[("label_text", label_text)]),
    };
    if text.contains(&template.image_marker) {
        return Err(Error::InvalidArgument(format!(
            "label text for {} contains the image marker",
            example.image_id
        )));
    }
    text.push_str(&template.block_separator);
    Ok(vec![Segment::Image(example.image_id.clone()), Segment::Text(text)])
}

/// Example blocks in the given order, then the test image and answer cue.
pub fn assemble_sequence(
    blocks: Vec<Vec<Segment>>,
    test_image_id: &str,
    template: &SequenceTemplate,
    strategy: &str,
) -> Result<PromptSequence> {
    template.validate()?;
    let shots = blocks.len();
    let mut segments: Vec<Segment> = blocks.into_iter().flatten().collect();
    segments.push(Segment::Image(test_image_id.to_string()));
    segments.push(Segment::Text(template.query_block.clone()));
    Ok(PromptSequence {
        segments,
        strategy: strategy.to_string(),
        shots,
    })
}
