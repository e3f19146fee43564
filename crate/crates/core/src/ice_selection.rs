//! Choosing the in-context examples shown before each test image.

use std::collections::HashSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingStore, LabelCatalog, RecordKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// One demonstration pair: an image and its ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceExample {
    pub image_id: String,
    pub gt_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_to_query: Option<f64>,
}

/// Labelled images of the training split that may serve as examples.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    entries: Vec<(String, String)>,
}

impl SupportSet {
    /// Resolves each id against the store. Every id must be a unique image
    /// record whose `label_text` is a catalog class.
    pub fn from_ids<S: AsRef<str>>(store: &EmbeddingStore, catalog: &LabelCatalog, ids: &[S]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let label = image_label(store, catalog, id)?;
            if !seen.insert(id) {
                return Err(Error::ConfigInvalid(format!("support lists {id:?} twice")));
            }
            entries.push((id.to_string(), label));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn label_of(&self, id: &str) -> Option<&str> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, l)| l.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.label_of(id).is_some()
    }

    fn entry(&self, i: usize) -> &(String, String) {
        &self.entries[i]
    }
}

/// Ground-truth class of an image record, checked against the catalog.
pub fn image_label(store: &EmbeddingStore, catalog: &LabelCatalog, id: &str) -> Result<String> {
    let rec = store.record(id)?;
    if rec.kind != RecordKind::Image {
        return Err(Error::ConfigInvalid(format!("{id:?} is not an image record")));
    }
    let label = rec
        .label_text
        .as_deref()
        .ok_or_else(|| Error::ConfigInvalid(format!("image {id:?} has no label_text")))?;
    if !catalog.contains(label) {
        return Err(Error::UnknownLabel(label.to_string()));
    }
    Ok(label.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    #[serde(rename = "RS")]
    Random,
    #[serde(rename = "RICES")]
    Rices,
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RS" => Ok(Selector::Random),
            "RICES" => Ok(Selector::Rices),
            other => Err(Error::ConfigInvalid(format!("unknown selector {other:?}"))),
        }
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Selector::Random => "RS",
            Selector::Rices => "RICES",
        })
    }
}

/// Prompt order of retrieved examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IceOrder {
    /// Most similar example last, adjacent to the query.
    #[default]
    Ascending,
    Descending,
}

impl IceOrder {
    /// Reorders a list produced by [`select_rices`] (which is ascending).
    pub fn apply(self, mut ices: Vec<IceExample>) -> Vec<IceExample> {
        if self == IceOrder::Descending {
            ices.reverse();
        }
        ices
    }
}

fn check_shots(n: usize, support: &SupportSet) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    if n > support.len() {
        return Err(Error::NotEnoughSupport {
            requested: n,
            available: support.len(),
        });
    }
    Ok(())
}

/// Draws `n` distinct examples uniformly without replacement. The generator
/// is seeded from `(global_seed, test_image_id)`, so each test image gets its
/// own reproducible draw. Draw order is kept.
pub fn select_random(support: &SupportSet, n: usize, global_seed: u64, test_image_id: &str) -> Result<Vec<IceExample>> {
    check_shots(n, support)?;
    let mut rng = SplitMix64::new(derive_seed(global_seed, test_image_id));
    let mut pool: Vec<usize> = (0..support.len()).collect();
    // Partial Fisher-Yates; slot i receives the i-th draw.
    for i in 0..n {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    Ok(pool[..n]
        .iter()
        .map(|&i| {
            let (id, label) = support.entry(i);
            IceExample {
                image_id: id.clone(),
                gt_label: label.clone(),
                similarity_to_query: None,
            }
        })
        .collect())
}

/// The `n` support images closest to the test image, returned in ascending
/// similarity so the strongest example ends up last.
pub fn select_rices(
    store: &EmbeddingStore,
    test_image_id: &str,
    support: &SupportSet,
    n: usize,
) -> Result<Vec<IceExample>> {
    check_shots(n, support)?;
    store.record(test_image_id)?;
    let candidates: Vec<&str> = support.ids().collect();
    let mut top = store.top_k_by_similarity(test_image_id, &candidates, n)?;
    top.reverse();
    Ok(top
        .into_iter()
        .map(|(id, sim)| {
            let gt_label = support.label_of(&id).unwrap_or_default().to_string();
            IceExample {
                image_id: id,
                gt_label,
                similarity_to_query: Some(sim),
            }
        })
        .collect())
}
