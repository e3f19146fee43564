//! Per-label visual descriptions: elicitation prompts, reference images, and a
//! human-editable cache.
//!
//! Descriptions are produced once per label, not per test image. The cache
//! file holds one JSON object per line. Entries marked `manual` always win
//! over generated ones, whatever their position in the file.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::embedding_store::{sort_by_similarity, EmbeddingStore, LabelCatalog};
use crate::error::{Error, Result};
use crate::ice_selection::SupportSet;
use crate::prompt_builder::{PromptSequence, Segment};
use crate::scorer_gateway::{Gateway, GenerateRequest, DEFAULT_LENGTH_PENALTY, DEFAULT_MAX_NEW_TOKENS};
use crate::template::{fill, require};

pub const DEFAULT_DESCRIPTION_QUERY: &str = "Q: What are the useful visual features for distinguishing a {label} in the image? A: There are several features to identify:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionOrigin {
    Generated,
    Cache,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualDescription {
    pub label: String,
    pub text: String,
    pub origin: DescriptionOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPromptConfig {
    pub dataset: String,
    pub description_query_template: String,
    /// Sample answers placed verbatim ahead of the question to steer format.
    pub exemplars: Vec<String>,
    pub max_generation_tokens: usize,
    pub reference_image_count: usize,
    pub image_marker: String,
}

impl Default for DatasetPromptConfig {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            description_query_template: DEFAULT_DESCRIPTION_QUERY.into(),
            exemplars: Vec::new(),
            max_generation_tokens: DEFAULT_MAX_NEW_TOKENS,
            reference_image_count: 1,
            image_marker: "<image>".into(),
        }
    }
}

/// Support image closest to the label's embedding; ties by ascending id.
pub fn select_reference_image(
    store: &EmbeddingStore,
    catalog: &LabelCatalog,
    label: &str,
    support: &SupportSet,
) -> Result<String> {
    Ok(select_reference_images(store, catalog, label, support, 1)?.remove(0))
}

pub fn select_reference_images(
    store: &EmbeddingStore,
    catalog: &LabelCatalog,
    label: &str,
    support: &SupportSet,
    count: usize,
) -> Result<Vec<String>> {
    let label_id = catalog.embedding_id(label)?;
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut scored = support
        .ids()
        .map(|id| store.cosine_sim(label_id, id).map(|s| (id.to_string(), s)))
        .collect::<Result<Vec<_>>>()?;
    sort_by_similarity(&mut scored);
    Ok(scored.into_iter().take(count.max(1)).map(|(id, _)| id).collect())
}

/// Reference image(s) followed by exemplars and the rendered question.
pub fn build_description_query(
    label: &str,
    cfg: &DatasetPromptConfig,
    reference_images: &[String],
) -> Result<PromptSequence> {
    require(&cfg.description_query_template, "{label}")?;
    let mut text = String::new();
    for ex in &cfg.exemplars {
        text.push_str(ex);
        text.push(' ');
    }
    text.push_str(&fill(&cfg.description_query_template, &[("label", label)]));
    let mut segments: Vec<Segment> = reference_images.iter().map(|id| Segment::Image(id.clone())).collect();
    segments.push(Segment::Text(text));
    Ok(PromptSequence {
        segments,
        strategy: "describe".into(),
        shots: 0,
    })
}

/// Cuts a raw completion at its first blank line and at `max_tokens`
/// whitespace-separated words, then flattens control characters to spaces.
pub fn clean_completion(raw: &str, max_tokens: usize) -> String {
    let raw = raw.trim_start();
    let mut kept = String::new();
    for line in raw.split('\n') {
        if line.trim().is_empty() {
            break;
        }
        if !kept.is_empty() {
            kept.push('\n');
        }
        kept.push_str(line);
    }
    let mut end = kept.len();
    let mut words = 0;
    let mut in_word = false;
    for (i, ch) in kept.char_indices() {
        if ch.is_whitespace() {
            if in_word && words == max_tokens {
                end = i;
                break;
            }
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
            if words > max_tokens {
                end = i;
                break;
            }
        }
    }
    let flat: String = kept[..end]
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    flat.trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub label: String,
    pub text: String,
    pub origin: DescriptionOrigin,
    #[serde(default)]
    pub backend_fingerprint: Option<String>,
}

/// What a cache miss needs to produce a description.
#[derive(Clone, Copy)]
pub struct DescriptionSource<'a> {
    pub store: &'a EmbeddingStore,
    pub catalog: &'a LabelCatalog,
    pub support: &'a SupportSet,
    pub gateway: &'a Gateway,
}

#[derive(Debug, Default)]
pub struct DescriptionCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheRecord>>,
    label_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    file_lock: Mutex<()>,
}

impl DescriptionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or prepares to create) a cache file. New descriptions are
    /// appended to it as they are generated.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries: HashMap<String, CacheRecord> = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(line).map_err(|e| Error::MalformedCache {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                if rec.text.trim().is_empty() {
                    return Err(Error::MalformedCache {
                        line: i + 1,
                        reason: format!("empty text for {:?}", rec.label),
                    });
                }
                let keep_existing = entries.get(&rec.label).is_some_and(|old| {
                    old.origin == DescriptionOrigin::Manual && rec.origin != DescriptionOrigin::Manual
                });
                if !keep_existing {
                    entries.insert(rec.label.clone(), rec);
                }
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            ..Self::default()
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, label: &str) -> Option<VisualDescription> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries.get(label).map(|rec| VisualDescription {
            label: rec.label.clone(),
            text: rec.text.clone(),
            origin: match rec.origin {
                DescriptionOrigin::Manual => DescriptionOrigin::Manual,
                _ => DescriptionOrigin::Cache,
            },
            reference_image_id: None,
        })
    }

    /// Records a description and appends it to the cache file, if any.
    pub fn insert(&self, rec: CacheRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let _guard = self.file_lock.lock().unwrap_or_else(|e| e.into_inner());
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&rec).expect("cache record serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let manual_present = entries
            .get(&rec.label)
            .is_some_and(|old| old.origin == DescriptionOrigin::Manual);
        if !manual_present || rec.origin == DescriptionOrigin::Manual {
            entries.insert(rec.label.clone(), rec);
        }
        Ok(())
    }

    fn label_lock(&self, label: &str) -> Arc<Mutex<()>> {
        let mut locks = self.label_locks.lock().unwrap_or_else(|e| e.into_inner());
        Arc::clone(locks.entry(label.to_string()).or_default())
    }

    /// Cached description if present, otherwise one generation call whose
    /// cleaned result is persisted. Concurrent callers for the same label
    /// share a single backend call.
    pub fn get_or_generate(
        &self,
        label: &str,
        source: DescriptionSource<'_>,
        cfg: &DatasetPromptConfig,
    ) -> Result<VisualDescription> {
        if let Some(hit) = self.lookup(label) {
            return Ok(hit);
        }
        let lock = self.label_lock(label);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = self.lookup(label) {
            return Ok(hit);
        }

        let refs = select_reference_images(
            source.store,
            source.catalog,
            label,
            source.support,
            cfg.reference_image_count,
        )?;
        let query = build_description_query(label, cfg, &refs)?;
        let serialized = query.serialize(&cfg.image_marker)?;
        let resp = source.gateway.generate(&GenerateRequest {
            prompt: serialized.text,
            images: serialized.images,
            max_new_tokens: cfg.max_generation_tokens,
            length_penalty: DEFAULT_LENGTH_PENALTY,
        })?;
        let text = clean_completion(&resp.text, cfg.max_generation_tokens);
        if text.is_empty() {
            return Err(Error::EmptyGeneration {
                label: label.to_string(),
            });
        }
        self.insert(CacheRecord {
            label: label.to_string(),
            text: text.clone(),
            origin: DescriptionOrigin::Generated,
            backend_fingerprint: Some(source.gateway.fingerprint()),
        })?;
        Ok(VisualDescription {
            label: label.to_string(),
            text,
            origin: DescriptionOrigin::Generated,
            reference_image_id: refs.into_iter().next(),
        })
    }
}
