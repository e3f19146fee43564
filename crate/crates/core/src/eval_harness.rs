//! End-to-end evaluation runs and their reports.
//!
//! A run walks every test image: select examples, render their labels for
//! the strategy, fetch descriptions when needed, assemble the prompt, score
//! every class, and compare the prediction to the gold class. Reports are
//! deterministic for a given config and backend: records are merged in test-id
//! order and no timing data enters the JSON.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize};

use crate::description_cache::{DatasetPromptConfig, DescriptionCache, DescriptionSource, DEFAULT_DESCRIPTION_QUERY};
use crate::embedding_store::{
    load_store, read_name_list, write_manifest, write_matrix, EmbeddingRecord, EmbeddingStore, LabelCatalog, RecordKind,
};
use crate::error::{Error, Result};
use crate::ice_selection::{image_label, select_random, select_rices, IceExample, IceOrder, Selector, SupportSet};
use crate::label_space::{
    compute_label_distribution, render_label_text, DistributionReference, LabelStrategy, LabelTemplates,
    LabelTextConfig, DEFAULT_PROBABILITY_DECIMALS, DEFAULT_TEMPERATURE, DEFAULT_TOP_M,
};
use crate::prompt_builder::{assemble_sequence, build_ice_block, PromptSequence, SequenceTemplate};
use crate::scorer_gateway::{ClientOptions, EmbedItem, Gateway, SyntheticConfig, DEFAULT_MAX_NEW_TOKENS};
use crate::scoring::{classify_with, ensemble_weighted, CandidateRendering, ClassScores, DEFAULT_ENSEMBLE_ALPHA};
use crate::template::{fill, require};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "LDE-EL")]
    LdeEl,
    #[serde(rename = "LDE-DL")]
    LdeDl,
    #[serde(rename = "LDE-DD")]
    LdeDd,
    #[serde(rename = "VDE")]
    Vde,
    #[serde(rename = "ENS")]
    Ens,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Sl,
        Strategy::LdeEl,
        Strategy::LdeDl,
        Strategy::LdeDd,
        Strategy::Vde,
        Strategy::Ens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sl => "SL",
            Strategy::LdeEl => "LDE-EL",
            Strategy::LdeDl => "LDE-DL",
            Strategy::LdeDd => "LDE-DD",
            Strategy::Vde => "VDE",
            Strategy::Ens => "ENS",
        }
    }

    fn label_strategy(self) -> LabelStrategy {
        match self {
            Strategy::LdeEl => LabelStrategy::Equidistributed,
            Strategy::LdeDl => LabelStrategy::Distribution,
            Strategy::LdeDd => LabelStrategy::Descriptive,
            _ => LabelStrategy::Single,
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown strategy {s:?}")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(v) => v,
    })
}

/// Run configuration. Read from a flat TOML key/value file; relative paths
/// resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dataset: String,
    pub embeddings_manifest: PathBuf,
    pub embeddings_matrix: PathBuf,
    /// Class list, one per line. Defaults to every label record in the store.
    pub catalog: Option<PathBuf>,
    pub support: PathBuf,
    pub test: PathBuf,
    #[serde(deserialize_with = "one_or_many")]
    pub strategy: Vec<Strategy>,
    pub selector: Selector,
    #[serde(deserialize_with = "one_or_many")]
    pub shots: Vec<usize>,
    pub max_shots: usize,
    pub global_seed: u64,
    pub temperature: f64,
    pub top_m: usize,
    pub probability_decimals: usize,
    pub ice_order: IceOrder,
    pub distribution_reference: DistributionReference,
    pub ensemble_alpha: f64,
    pub backend: String,
    pub output: Option<PathBuf>,
    pub desc_cache: Option<PathBuf>,
    pub skip_errors: bool,
    pub workers: usize,
    pub timeout_secs: u64,
    /// Text template used when embedding labels at ingestion time.
    pub label_embedding_template: String,
    pub candidate_prefix: String,

    pub sl_template: String,
    pub el_template: String,
    pub dl_template: String,
    pub dd_template: String,
    pub entry_template: String,
    pub entry_separator: String,

    pub ice_block: String,
    pub description_block: String,
    pub query_block: String,
    pub block_separator: String,
    pub image_marker: String,

    pub description_query_template: String,
    pub description_exemplars: Vec<String>,
    pub reference_image_count: usize,
    pub max_new_tokens: usize,

    pub synthetic_bias: f64,
    pub synthetic_mention_weight: f64,
    pub synthetic_descriptions: BTreeMap<String, String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let lt = LabelTemplates::default();
        let st = SequenceTemplate::default();
        let sy = SyntheticConfig::default();
        Self {
            dataset: String::new(),
            embeddings_manifest: PathBuf::new(),
            embeddings_matrix: PathBuf::new(),
            catalog: None,
            support: PathBuf::new(),
            test: PathBuf::new(),
            strategy: vec![Strategy::Sl],
            selector: Selector::Rices,
            shots: vec![1],
            max_shots: 4,
            global_seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            top_m: DEFAULT_TOP_M,
            probability_decimals: DEFAULT_PROBABILITY_DECIMALS,
            ice_order: IceOrder::Ascending,
            distribution_reference: DistributionReference::IceImage,
            ensemble_alpha: DEFAULT_ENSEMBLE_ALPHA,
            backend: "synthetic".into(),
            output: None,
            desc_cache: None,
            skip_errors: false,
            workers: 4,
            timeout_secs: 60,
            label_embedding_template: "{label}".into(),
            candidate_prefix: String::new(),
            sl_template: lt.sl,
            el_template: lt.el,
            dl_template: lt.dl,
            dd_template: lt.dd,
            entry_template: lt.entry,
            entry_separator: lt.entry_separator,
            ice_block: st.ice_block,
            description_block: st.description_block,
            query_block: st.query_block,
            block_separator: st.block_separator,
            image_marker: st.image_marker,
            description_query_template: DEFAULT_DESCRIPTION_QUERY.into(),
            description_exemplars: Vec::new(),
            reference_image_count: 1,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            synthetic_bias: sy.bias,
            synthetic_mention_weight: sy.mention_weight,
            synthetic_descriptions: BTreeMap::new(),
        }
    }
}

impl EvalConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.embeddings_manifest);
        fix(&mut self.embeddings_matrix);
        fix(&mut self.support);
        fix(&mut self.test);
        for p in [&mut self.catalog, &mut self.output, &mut self.desc_cache]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy.is_empty() {
            return Err(Error::ConfigInvalid("no strategy given".into()));
        }
        if self.shots.is_empty() {
            return Err(Error::ConfigInvalid("no shot count given".into()));
        }
        if let Some(s) = self.shots.iter().find(|&&s| s > self.max_shots) {
            return Err(Error::ConfigInvalid(format!(
                "{s} shots exceeds max_shots = {}",
                self.max_shots
            )));
        }
        if self.top_m == 0 {
            return Err(Error::ConfigInvalid("top_m must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::ConfigInvalid("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ensemble_alpha) {
            return Err(Error::ConfigInvalid("ensemble_alpha must lie in [0, 1]".into()));
        }
        self.label_templates().validate()?;
        self.sequence_template().validate()?;
        require(&self.description_query_template, "{label}")?;
        require(&self.label_embedding_template, "{label}")?;
        Ok(())
    }

    pub fn label_templates(&self) -> LabelTemplates {
        LabelTemplates {
            sl: self.sl_template.clone(),
            el: self.el_template.clone(),
            dl: self.dl_template.clone(),
            dd: self.dd_template.clone(),
            entry: self.entry_template.clone(),
            entry_separator: self.entry_separator.clone(),
        }
    }

    pub fn sequence_template(&self) -> SequenceTemplate {
        SequenceTemplate {
            ice_block: self.ice_block.clone(),
            description_block: self.description_block.clone(),
            query_block: self.query_block.clone(),
            block_separator: self.block_separator.clone(),
            image_marker: self.image_marker.clone(),
        }
    }

    pub fn prompt_config(&self) -> DatasetPromptConfig {
        DatasetPromptConfig {
            dataset: self.dataset.clone(),
            description_query_template: self.description_query_template.clone(),
            exemplars: self.description_exemplars.clone(),
            max_generation_tokens: self.max_new_tokens,
            reference_image_count: self.reference_image_count,
            image_marker: self.image_marker.clone(),
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            bias: self.synthetic_bias,
            mention_weight: self.synthetic_mention_weight,
            descriptions: self.synthetic_descriptions.clone(),
            ..SyntheticConfig::default()
        }
    }

    pub fn client_options(&self) -> ClientOptions {
        ClientOptions {
            max_connections: self.workers.max(1),
            timeout: std::time::Duration::from_secs(self.timeout_secs.max(1)),
            ..ClientOptions::default()
        }
    }

    pub fn gateway(&self) -> Gateway {
        Gateway::from_endpoint(&self.backend, &self.synthetic_config(), self.client_options())
            .with_image_marker(&self.image_marker)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub test_id: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub ice_ids: Vec<String>,
    /// Per-class scores in catalog order, keyed by strategy name.
    pub scores: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ImageError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub selector: Selector,
    pub shots: usize,
    pub correct: usize,
    /// Scored images; errored images are excluded.
    pub total: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub backend: String,
    pub classes: Vec<String>,
    pub config: EvalConfig,
    pub runs: Vec<RunReport>,
}

impl EvalReport {
    pub fn run(&self, strategy: Strategy, shots: usize) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.strategy == strategy && r.shots == shots)
    }
}

/// Loaded inputs shared by all runs of one config.
pub struct EvalContext {
    pub cfg: EvalConfig,
    pub store: EmbeddingStore,
    pub catalog: LabelCatalog,
    pub support: SupportSet,
    pub test_ids: Vec<String>,
    pub gateway: Gateway,
    pub descriptions: DescriptionCache,
}

impl EvalContext {
    pub fn load(cfg: EvalConfig) -> Result<Self> {
        let gateway = cfg.gateway();
        Self::load_with_gateway(cfg, gateway)
    }

    pub fn load_with_gateway(cfg: EvalConfig, gateway: Gateway) -> Result<Self> {
        cfg.validate()?;
        let store = load_store(&cfg.embeddings_manifest, &cfg.embeddings_matrix)?;
        let catalog = match &cfg.catalog {
            Some(p) => LabelCatalog::load(&store, p)?,
            None => LabelCatalog::all_labels(&store)?,
        };
        if catalog.is_empty() {
            return Err(Error::ConfigInvalid("catalog is empty".into()));
        }
        let support_ids = read_name_list(&cfg.support)?;
        let mut test_ids = read_name_list(&cfg.test)?;
        if test_ids.is_empty() {
            return Err(Error::ConfigInvalid("test split is empty".into()));
        }
        let support_set: HashSet<&str> = support_ids.iter().map(String::as_str).collect();
        let overlap: Vec<String> = test_ids
            .iter()
            .filter(|t| support_set.contains(t.as_str()))
            .cloned()
            .collect();
        if !overlap.is_empty() {
            return Err(Error::DisjointnessViolation(overlap));
        }
        let support = SupportSet::from_ids(&store, &catalog, &support_ids)?;
        let mut seen = HashSet::new();
        for t in &test_ids {
            image_label(&store, &catalog, t)?;
            if !seen.insert(t.as_str()) {
                return Err(Error::ConfigInvalid(format!("test split lists {t:?} twice")));
            }
        }
        test_ids.sort();
        if let Some(s) = cfg.shots.iter().find(|&&s| s > support.len()) {
            return Err(Error::ConfigInvalid(format!(
                "{s} shots requested but the support set holds {}",
                support.len()
            )));
        }
        let descriptions = match &cfg.desc_cache {
            Some(p) => DescriptionCache::open(p)?,
            None => DescriptionCache::in_memory(),
        };
        Ok(Self {
            cfg,
            store,
            catalog,
            support,
            test_ids,
            gateway,
            descriptions,
        })
    }

    fn description_source(&self) -> DescriptionSource<'_> {
        DescriptionSource {
            store: &self.store,
            catalog: &self.catalog,
            support: &self.support,
            gateway: &self.gateway,
        }
    }

    pub fn select_ices(&self, test_id: &str, shots: usize) -> Result<Vec<IceExample>> {
        if shots == 0 {
            return Ok(Vec::new());
        }
        match self.cfg.selector {
            Selector::Random => select_random(&self.support, shots, self.cfg.global_seed, test_id),
            Selector::Rices => Ok(self
                .cfg
                .ice_order
                .apply(select_rices(&self.store, test_id, &self.support, shots)?)),
        }
    }

    /// Label text an example carries under `strategy` (never ENS).
    pub fn label_text(&self, strategy: Strategy, ice: &IceExample, test_id: &str) -> Result<String> {
        match strategy {
            Strategy::Sl | Strategy::Vde | Strategy::Ens => Ok(ice.gt_label.clone()),
            Strategy::LdeEl | Strategy::LdeDl | Strategy::LdeDd => {
                let reference = match self.cfg.distribution_reference {
                    DistributionReference::IceImage => ice.image_id.as_str(),
                    DistributionReference::TestImage => test_id,
                };
                let dist = compute_label_distribution(
                    &self.store,
                    reference,
                    &ice.gt_label,
                    &self.catalog,
                    self.cfg.top_m,
                    self.cfg.temperature,
                )?;
                render_label_text(
                    &dist,
                    &LabelTextConfig {
                        strategy: strategy.label_strategy(),
                        templates: self.cfg.label_templates(),
                        probability_decimals: self.cfg.probability_decimals,
                    },
                )
            }
        }
    }

    /// Assembled prompt for a single (non-ensemble) strategy.
    pub fn build_prompt(&self, strategy: Strategy, ices: &[IceExample], test_id: &str) -> Result<PromptSequence> {
        if strategy == Strategy::Ens {
            return Err(Error::InvalidArgument("ENS has no single prompt".into()));
        }
        let template = self.cfg.sequence_template();
        let blocks = ices
            .iter()
            .map(|ice| {
                let label_text = self.label_text(strategy, ice, test_id)?;
                let description = if strategy == Strategy::Vde {
                    Some(self.descriptions.get_or_generate(
                        &ice.gt_label,
                        self.description_source(),
                        &self.cfg.prompt_config(),
                    )?)
                } else {
                    None
                };
                build_ice_block(ice, &label_text, &template, description.as_ref())
            })
            .collect::<Result<Vec<_>>>()?;
        assemble_sequence(blocks, test_id, &template, strategy.name())
    }

    fn classify(&self, prompt: &PromptSequence) -> Result<ClassScores> {
        classify_with(
            prompt,
            &self.catalog,
            &self.gateway,
            &CandidateRendering {
                image_marker: self.cfg.image_marker.clone(),
                prefix: self.cfg.candidate_prefix.clone(),
            },
        )
    }

    pub fn evaluate_image(&self, strategy: Strategy, shots: usize, test_id: &str) -> Result<ImageRecord> {
        let gold = self.store.record(test_id)?.label_text.clone().unwrap_or_default();
        let ices = self.select_ices(test_id, shots)?;
        let mut scores = BTreeMap::new();
        let final_scores = if strategy == Strategy::Ens {
            let dd = self.classify(&self.build_prompt(Strategy::LdeDd, &ices, test_id)?)?;
            let vde = self.classify(&self.build_prompt(Strategy::Vde, &ices, test_id)?)?;
            let ens = ensemble_weighted(&dd, &vde, self.cfg.ensemble_alpha)?;
            scores.insert(Strategy::LdeDd.name().to_string(), dd.scores);
            scores.insert(Strategy::Vde.name().to_string(), vde.scores);
            ens
        } else {
            self.classify(&self.build_prompt(strategy, &ices, test_id)?)?
        };
        scores.insert(strategy.name().to_string(), final_scores.scores.clone());
        Ok(ImageRecord {
            test_id: test_id.to_string(),
            gold,
            predicted: Some(final_scores.predicted),
            ice_ids: ices.into_iter().map(|e| e.image_id).collect(),
            scores,
            error: None,
        })
    }

    /// One (strategy, shots) pass over the whole test split.
    pub fn run(&self, strategy: Strategy, shots: usize) -> Result<RunReport> {
        let n = self.test_ids.len();
        let workers = self.cfg.workers.clamp(1, n.max(1));
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Mutex<Vec<Option<Result<ImageRecord>>>> = Mutex::new((0..n).map(|_| None).collect());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let out = self.evaluate_image(strategy, shots, &self.test_ids[i]);
                    if out.is_err() && !self.cfg.skip_errors {
                        abort.store(true, Ordering::Relaxed);
                    }
                    slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(out);
                });
            }
        });

        let mut records = Vec::with_capacity(n);
        for (i, slot) in slots
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .enumerate()
        {
            match slot {
                Some(Ok(rec)) => records.push(rec),
                Some(Err(e)) if self.cfg.skip_errors => {
                    let test_id = self.test_ids[i].clone();
                    let gold = self
                        .store
                        .record(&test_id)
                        .ok()
                        .and_then(|r| r.label_text.clone())
                        .unwrap_or_default();
                    records.push(ImageRecord {
                        test_id,
                        gold,
                        predicted: None,
                        ice_ids: Vec::new(),
                        scores: BTreeMap::new(),
                        error: Some(ImageError {
                            code: e.code().to_string(),
                            message: e.to_string(),
                        }),
                    });
                }
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }

        let scored: Vec<&ImageRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let correct = scored
            .iter()
            .filter(|r| r.predicted.as_deref() == Some(r.gold.as_str()))
            .count();
        let total = scored.len();
        Ok(RunReport {
            strategy,
            selector: self.cfg.selector,
            shots,
            correct,
            total,
            errors: records.len() - total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            records,
        })
    }

    pub fn run_all(&self) -> Result<EvalReport> {
        let mut runs = Vec::new();
        for &strategy in &self.cfg.strategy {
            for &shots in &self.cfg.shots {
                runs.push(self.run(strategy, shots)?);
            }
        }
        Ok(EvalReport {
            dataset: self.cfg.dataset.clone(),
            backend: self.gateway.fingerprint(),
            classes: self.catalog.classes().to_vec(),
            config: self.cfg.clone(),
            runs,
        })
    }

    /// Generates (or loads) a description for each class in `classes`.
    pub fn prewarm_descriptions(&self, classes: &[String]) -> Result<usize> {
        let cfg = self.cfg.prompt_config();
        for class in classes {
            self.descriptions
                .get_or_generate(class, self.description_source(), &cfg)?;
        }
        Ok(classes.len())
    }
}

/// Loads inputs, runs every configured (strategy, shots) pair, and returns
/// the report.
pub fn run_eval(cfg: EvalConfig) -> Result<EvalReport> {
    EvalContext::load(cfg)?.run_all()
}

/// Companion table path: `report.json` -> `report.table.md`.
pub fn table_path_for(path: &Path) -> PathBuf {
    path.with_extension("table.md")
}

/// Accuracy table, one row per selector/strategy and one column per shot
/// count, values in percent with two decimals.
pub fn render_table(report: &EvalReport) -> String {
    let shots: BTreeSet<usize> = report.runs.iter().map(|r| r.shots).collect();
    let mut rows: Vec<(Selector, Strategy)> = Vec::new();
    for r in &report.runs {
        if !rows.contains(&(r.selector, r.strategy)) {
            rows.push((r.selector, r.strategy));
        }
    }
    let mut out = String::new();
    let _ = write!(out, "| Method |");
    for s in &shots {
        let _ = write!(out, " {s}-shot |");
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &shots {
        out.push_str("---:|");
    }
    out.push('\n');
    for (sel, strat) in rows {
        let _ = write!(out, "| {sel} {strat} |");
        for &s in &shots {
            let cell = report
                .runs
                .iter()
                .find(|r| r.selector == sel && r.strategy == strat && r.shots == s)
                .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.accuracy * 100.0));
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Writes the JSON report to `path` and the accuracy table next to it.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let table = table_path_for(path);
    std::fs::write(&table, render_table(report)).map_err(|e| Error::io(&table, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("report {}: {e}", path.display())))
}

/// One line of an ingestion image manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    pub label: String,
    pub path: String,
}

pub fn read_image_entries(path: &Path) -> Result<Vec<ImageEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedManifest {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Output file pair written by [`ingest_embeddings`].
pub fn store_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = prefix.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{base}.manifest.jsonl")),
        PathBuf::from(format!("{base}.emb")),
    )
}

const EMBED_BATCH: usize = 64;

/// Embeds every image and catalog label through the backend and writes the
/// manifest/matrix pair under `out_prefix`. Label records get id
/// `label:<class>`.
pub fn ingest_embeddings(
    gateway: &Gateway,
    images: &[ImageEntry],
    classes: &[String],
    label_template: &str,
    out_prefix: &Path,
) -> Result<(PathBuf, PathBuf)> {
    require(label_template, "{label}")?;
    let mut records = Vec::with_capacity(images.len() + classes.len());
    let mut items = Vec::with_capacity(images.len() + classes.len());
    for img in images {
        records.push(EmbeddingRecord {
            id: img.id.clone(),
            kind: RecordKind::Image,
            label_text: Some(img.label.clone()),
            source_path: Some(img.path.clone()),
            row: 0,
        });
        items.push(EmbedItem::image(&img.id, &img.path));
    }
    for class in classes {
        let id = format!("label:{class}");
        items.push(EmbedItem::label(&id, &fill(label_template, &[("label", class)])));
        records.push(EmbeddingRecord {
            id,
            kind: RecordKind::Label,
            label_text: Some(class.clone()),
            source_path: None,
            row: 0,
        });
    }
    let mut rows = Vec::with_capacity(items.len());
    for chunk in items.chunks(EMBED_BATCH) {
        rows.extend(gateway.embed(chunk)?);
    }
    // Validates ids, finiteness and norms before anything is written.
    let store = EmbeddingStore::from_rows(records, rows)?;
    let (manifest, matrix) = store_paths(out_prefix);
    let rows: Vec<Vec<f32>> = store
        .records()
        .iter()
        .map(|r| store.vector(&r.id).map(<[f32]>::to_vec))
        .collect::<Result<_>>()?;
    write_manifest(&manifest, store.records())?;
    write_matrix(&matrix, store.dims(), &rows)?;
    Ok((manifest, matrix))
}
