//! Fixtures shared by the integration suites.
//!
//! `SyntheticTask` writes a 10-class dataset whose geometry is fully known:
//! every test image has a private direction shared with exactly two support
//! images. The nearer one carries a wrong label N, the farther one the gold
//! label G. The test image's closest labels are G, then N, and the near
//! example's closest label besides its own is G.
//!
//! `replay` recomputes accuracy from the raw vectors with the synthetic
//! scoring rule, without touching the library pipeline.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use icc_core::embedding_store::{write_manifest, write_matrix, EmbeddingRecord, RecordKind};
use icc_core::eval_harness::{EvalConfig, Strategy};

pub const CLASSES: [&str; 10] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
];
pub const TESTS: usize = 50;
const LABEL_DIMS: usize = 10;
pub const DIMS: usize = LABEL_DIMS + TESTS;

pub const BIAS: f64 = -5.0;
pub const MENTION_WEIGHT: f64 = 0.5;

pub struct Item {
    pub id: String,
    pub kind: RecordKind,
    pub label: String,
    pub raw: Vec<f64>,
}

pub struct SyntheticTask {
    pub items: Vec<Item>,
    pub support: Vec<String>,
    pub test: Vec<String>,
    pub descriptions: BTreeMap<String, String>,
}

fn axis(i: usize) -> usize {
    i
}

fn private_axis(t: usize) -> usize {
    LABEL_DIMS + t
}

pub fn gold_of(t: usize) -> usize {
    t % 10
}

pub fn wrong_of(t: usize) -> usize {
    (gold_of(t) + 1 + t / 10) % 10
}

impl SyntheticTask {
    pub fn build() -> Self {
        let mut items = Vec::new();
        for (i, c) in CLASSES.iter().enumerate() {
            let mut v = vec![0.0; DIMS];
            v[axis(i)] = 1.0;
            items.push(Item {
                id: format!("label:{c}"),
                kind: RecordKind::Label,
                label: c.to_string(),
                raw: v,
            });
        }
        let mut support = Vec::new();
        let mut test = Vec::new();
        for t in 0..TESTS {
            let (g, n) = (gold_of(t), wrong_of(t));
            let (x, y, z) = ((g + 6) % 10, (g + 7) % 10, (g + 8) % 10);
            let u = private_axis(t);

            let mut tv = vec![0.0; DIMS];
            tv[u] = 1.0;
            tv[axis(g)] = 0.3;
            tv[axis(n)] = 0.2;

            let mut near = vec![0.0; DIMS];
            near[u] = 1.0;
            near[axis(n)] = 0.3;
            near[axis(g)] = 0.25;
            near[axis(z)] = 0.1;

            let mut far = vec![0.0; DIMS];
            far[u] = 0.8;
            far[axis(g)] = 0.3;
            far[axis(x)] = 0.2;
            far[axis(y)] = 0.15;

            let tid = format!("t{t:02}");
            let nid = format!("s{t:02}n");
            let fid = format!("s{t:02}f");
            items.push(Item {
                id: tid.clone(),
                kind: RecordKind::Image,
                label: CLASSES[g].into(),
                raw: tv,
            });
            items.push(Item {
                id: nid.clone(),
                kind: RecordKind::Image,
                label: CLASSES[n].into(),
                raw: near,
            });
            items.push(Item {
                id: fid.clone(),
                kind: RecordKind::Image,
                label: CLASSES[g].into(),
                raw: far,
            });
            test.push(tid);
            support.push(nid);
            support.push(fid);
        }
        let descriptions = CLASSES
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), format!("pattern number {i} with plain edges")))
            .collect();
        Self {
            items,
            support,
            test,
            descriptions,
        }
    }

    /// Writes the store, splits and a config; returns the config path.
    pub fn write(&self, dir: &Path) -> PathBuf {
        let records: Vec<EmbeddingRecord> = self
            .items
            .iter()
            .enumerate()
            .map(|(row, it)| EmbeddingRecord {
                id: it.id.clone(),
                kind: it.kind,
                label_text: Some(it.label.clone()),
                source_path: None,
                row,
            })
            .collect();
        let rows: Vec<Vec<f32>> = self
            .items
            .iter()
            .map(|it| it.raw.iter().map(|&v| v as f32).collect())
            .collect();
        write_manifest(&dir.join("emb.manifest.jsonl"), &records).unwrap();
        write_matrix(&dir.join("emb.emb"), DIMS, &rows).unwrap();
        std::fs::write(dir.join("catalog.txt"), CLASSES.join("\n") + "\n").unwrap();
        std::fs::write(dir.join("support.txt"), self.support.join("\n") + "\n").unwrap();
        std::fs::write(dir.join("test.txt"), self.test.join("\n") + "\n").unwrap();
        let cfg_path = dir.join("eval.toml");
        std::fs::write(&cfg_path, self.config_text()).unwrap();
        cfg_path
    }

    pub fn config_text(&self) -> String {
        let mut s = String::from(
            "dataset = \"synthetic-10\"\n\
             embeddings_manifest = \"emb.manifest.jsonl\"\n\
             embeddings_matrix = \"emb.emb\"\n\
             catalog = \"catalog.txt\"\n\
             support = \"support.txt\"\n\
             test = \"test.txt\"\n\
             strategy = [\"SL\", \"LDE-EL\", \"LDE-DL\", \"LDE-DD\", \"VDE\", \"ENS\"]\n\
             selector = \"RICES\"\n\
             shots = [1, 2]\n\
             backend = \"synthetic\"\n\
             synthetic_bias = -5.0\n\
             synthetic_mention_weight = 0.5\n",
        );
        s.push_str("synthetic_descriptions = { ");
        let parts: Vec<String> = self.descriptions.iter().map(|(k, v)| format!("{k} = {v:?}")).collect();
        s.push_str(&parts.join(", "));
        s.push_str(" }\n");
        s
    }

    pub fn config(&self, dir: &Path) -> EvalConfig {
        EvalConfig::load(&self.write(dir)).unwrap()
    }

    fn item(&self, id: &str) -> &Item {
        self.items.iter().find(|i| i.id == id).unwrap()
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Sorted by descending key, ties by ascending name; stable sort over a
/// name-sorted list.
fn brute_rank(mut v: Vec<(String, f64)>) -> Vec<(String, f64)> {
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    v
}

fn half_up(x: f64) -> String {
    // Two decimals, half-up on the shortest decimal representation.
    let s = format!("{x}");
    let (i, f) = s.split_once('.').unwrap_or((&s, ""));
    let f: Vec<u32> = f
        .chars()
        .map(|c| c.to_digit(10).unwrap())
        .chain(std::iter::repeat(0))
        .take(3)
        .collect();
    let mut cents = i.parse::<u32>().unwrap() * 100 + f[0] * 10 + f[1];
    if f[2] >= 5 {
        cents += 1;
    }
    format!("{}.{:02}", cents / 100, cents % 100)
}

pub struct ReplayPrediction {
    pub test_id: String,
    pub predicted: String,
    pub gold: String,
    pub scores: Vec<f64>,
}

/// Independent recomputation of one (strategy, shots) run with defaults:
/// RICES ascending, top_m 3, temperature 0.05, example-image reference.
pub fn replay(task: &SyntheticTask, strategy: Strategy, shots: usize) -> Vec<ReplayPrediction> {
    let mut tests = task.test.clone();
    tests.sort();
    tests
        .iter()
        .map(|tid| {
            let scores = match strategy {
                Strategy::Ens => {
                    let a = replay_scores(task, Strategy::LdeDd, shots, tid);
                    let b = replay_scores(task, Strategy::Vde, shots, tid);
                    a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect()
                }
                s => replay_scores(task, s, shots, tid),
            };
            let mut best = 0;
            for i in 1..scores.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            ReplayPrediction {
                test_id: tid.clone(),
                predicted: CLASSES[best].to_string(),
                gold: task.item(tid).label.clone(),
                scores,
            }
        })
        .collect()
}

pub fn replay_prompt(task: &SyntheticTask, strategy: Strategy, shots: usize, tid: &str) -> String {
    let test = task.item(tid);
    let ranked = brute_rank(
        task.support
            .iter()
            .map(|s| (s.clone(), cos(&test.raw, &task.item(s).raw)))
            .collect(),
    );
    let mut chosen: Vec<&str> = ranked.iter().take(shots).map(|(s, _)| s.as_str()).collect();
    chosen.reverse();

    let mut text = String::new();
    for sid in chosen {
        let ice = task.item(sid);
        let sims = brute_rank(
            CLASSES
                .iter()
                .filter(|c| **c != ice.label)
                .map(|c| (c.to_string(), cos(&ice.raw, &task.item(&format!("label:{c}")).raw)))
                .collect(),
        );
        let kept = &sims[..2];
        let m = kept.iter().map(|(_, s)| s / 0.05).fold(f64::MIN, f64::max);
        let e: Vec<f64> = kept.iter().map(|(_, s)| (s / 0.05 - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        let dist = format!(
            "{} (1.00), {} ({}), {} ({})",
            ice.label,
            kept[0].0,
            half_up(w[0]),
            kept[1].0,
            half_up(w[1])
        );
        let label_text = match strategy {
            Strategy::Sl | Strategy::Vde => ice.label.clone(),
            Strategy::LdeEl => format!("{} or {}", ice.label, kept[0].0),
            Strategy::LdeDl => dist,
            Strategy::LdeDd => format!("{}. This image most resembles: {}", ice.label, dist),
            Strategy::Ens => unreachable!(),
        };
        text.push_str("<image>");
        if strategy == Strategy::Vde {
            text.push_str(&format!(
                "Output:{label_text}, which has {}",
                task.descriptions[&ice.label]
            ));
        } else {
            text.push_str(&format!("Output:{label_text}"));
        }
        text.push_str("<|endofchunk|>");
    }
    text.push_str("<image>Output:");
    text
}

fn replay_scores(task: &SyntheticTask, strategy: Strategy, shots: usize, tid: &str) -> Vec<f64> {
    let text = replay_prompt(task, strategy, shots, tid);
    CLASSES
        .iter()
        .map(|c| (BIAS + MENTION_WEIGHT * text.matches(c).count() as f64).min(0.0))
        .collect()
}

pub fn replay_accuracy(preds: &[ReplayPrediction]) -> f64 {
    preds.iter().filter(|p| p.predicted == p.gold).count() as f64 / preds.len() as f64
}

/// Seeded generator for randomized fixtures.
pub struct TestRng(StdRng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(StdRng::seed_from_u64(seed))
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn unit(&mut self) -> f64 {
        self.0.gen()
    }
}

/// Random store of at most 50 image records in at most 16 dims, plus one
/// label record `label:thing`. Roughly one image in eight duplicates an
/// earlier vector so that ties occur.
pub fn random_store(rng: &mut TestRng) -> icc_core::embedding_store::EmbeddingStore {
    let dims = 1 + rng.below(16);
    let n = 2 + rng.below(48);
    let mut rows: Vec<Vec<f32>> = vec![vec![1.0; dims]];
    let mut records = vec![EmbeddingRecord {
        id: "label:thing".into(),
        kind: RecordKind::Label,
        label_text: Some("thing".into()),
        source_path: None,
        row: 0,
    }];
    for i in 0..n {
        let row = if i > 0 && rng.below(8) == 0 {
            rows[1 + rng.below(i)].clone()
        } else {
            loop {
                let v: Vec<f32> = (0..dims).map(|_| (rng.unit() * 2.0 - 1.0) as f32).collect();
                if v.iter().any(|x| x.abs() > 1e-3) {
                    break v;
                }
            }
        };
        rows.push(row);
        records.push(EmbeddingRecord {
            id: format!("r{:05}", rng.below(1000) * 100 + i),
            kind: RecordKind::Image,
            label_text: Some("thing".into()),
            source_path: None,
            row: i + 1,
        });
    }
    icc_core::embedding_store::EmbeddingStore::from_rows(records, rows).unwrap()
}

/// Store from `(id, kind, label, vector)` tuples.
pub fn store_of(entries: &[(&str, RecordKind, &str, Vec<f32>)]) -> icc_core::embedding_store::EmbeddingStore {
    let records = entries
        .iter()
        .enumerate()
        .map(|(row, (id, kind, label, _))| EmbeddingRecord {
            id: id.to_string(),
            kind: *kind,
            label_text: Some(label.to_string()),
            source_path: None,
            row,
        })
        .collect();
    let rows = entries.iter().map(|e| e.3.clone()).collect();
    icc_core::embedding_store::EmbeddingStore::from_rows(records, rows).unwrap()
}
