mod common;

use common::store_of;
use icc_core::embedding_store::{load_store, EmbeddingStore, LabelCatalog, RecordKind};
use icc_core::ice_selection::{select_random, select_rices, IceOrder, SupportSet};
use icc_core::Error;
use proptest::prelude::*;

fn arb_vectors(max_n: usize) -> impl Strategy<Value = (usize, Vec<Vec<f32>>)> {
    (1usize..=8).prop_flat_map(move |dims| {
        let row =
            prop::collection::vec(-1.0f32..1.0, dims).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3));
        (Just(dims), prop::collection::vec(row, 2..=max_n))
    })
}

/// Images `i00..`, one label record, all labelled "thing". Every third row
/// repeats the first so that ties are common.
fn build(rows: &[Vec<f32>]) -> (EmbeddingStore, LabelCatalog, Vec<String>) {
    let dims = rows[0].len();
    let mut entries = vec![("label:thing".to_string(), RecordKind::Label, vec![1.0; dims])];
    for (i, r) in rows.iter().enumerate() {
        let v = if i % 3 == 2 { rows[0].clone() } else { r.clone() };
        entries.push((format!("i{i:02}"), RecordKind::Image, v));
    }
    let borrowed: Vec<(&str, RecordKind, &str, Vec<f32>)> = entries
        .iter()
        .map(|(id, k, v)| (id.as_str(), *k, "thing", v.clone()))
        .collect();
    let store = store_of(&borrowed);
    let catalog = LabelCatalog::from_store(&store, vec!["thing".into()]).unwrap();
    let ids = (0..rows.len()).map(|i| format!("i{i:02}")).collect();
    (store, catalog, ids)
}

fn brute_top(store: &EmbeddingStore, q: &str, cands: &[String], k: usize) -> Vec<String> {
    let mut all: Vec<(String, f64)> = cands
        .iter()
        .map(|c| (c.clone(), store.cosine_sim(q, c).unwrap()))
        .collect();
    all.sort_by(|a, b| a.0.cmp(&b.0));
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.into_iter().take(k).map(|(id, _)| id).collect()
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded((_, rows) in arb_vectors(6)) {
        let (store, _, ids) = build(&rows);
        for a in &ids {
            let self_sim = store.cosine_sim(a, a).unwrap();
            prop_assert!((self_sim - 1.0).abs() < 1e-6);
            for b in &ids {
                let ab = store.cosine_sim(a, b).unwrap();
                prop_assert_eq!(ab, store.cosine_sim(b, a).unwrap());
                prop_assert!((-1.0..=1.0).contains(&ab));
            }
        }
    }

    #[test]
    fn top_k_matches_brute_force((_, rows) in arb_vectors(20), k in 1usize..25, q in 0usize..20) {
        let (store, _, ids) = build(&rows);
        let q = &ids[q % ids.len()];
        let cands: Vec<String> = ids.iter().filter(|i| *i != q).cloned().collect();
        let got: Vec<String> = store.top_k_by_similarity(q, &cands, k).unwrap().into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(got, brute_top(&store, q, &cands, k));
    }

    #[test]
    fn save_load_is_idempotent((_, rows) in arb_vectors(10)) {
        let (store, _, _) = build(&rows);
        let dir = tempfile::tempdir().unwrap();
        let (m1, x1) = (dir.path().join("a.manifest.jsonl"), dir.path().join("a.emb"));
        let (m2, x2) = (dir.path().join("b.manifest.jsonl"), dir.path().join("b.emb"));
        store.save(&m1, &x1).unwrap();
        let loaded = load_store(&m1, &x1).unwrap();
        prop_assert_eq!(loaded.records(), store.records());
        for r in store.records() {
            prop_assert_eq!(loaded.vector(&r.id).unwrap(), store.vector(&r.id).unwrap());
        }
        loaded.save(&m2, &x2).unwrap();
        prop_assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
        prop_assert_eq!(std::fs::read(&x1).unwrap(), std::fs::read(&x2).unwrap());
    }

    #[test]
    fn rices_set_equals_top_k_set((_, rows) in arb_vectors(15), n in 1usize..15, q in 0usize..15) {
        let (store, catalog, ids) = build(&rows);
        let q = ids[q % ids.len()].clone();
        let support: Vec<String> = ids.iter().filter(|i| **i != q).cloned().collect();
        let n = 1 + (n - 1) % support.len();
        let set = SupportSet::from_ids(&store, &catalog, &support).unwrap();
        let ices = select_rices(&store, &q, &set, n).unwrap();
        let mut got: Vec<String> = ices.iter().map(|e| e.image_id.clone()).collect();
        let sims: Vec<f64> = ices.iter().map(|e| e.similarity_to_query.unwrap()).collect();
        prop_assert!(sims.windows(2).all(|w| w[0] <= w[1]), "not ascending: {:?}", sims);
        let mut want = brute_top(&store, &q, &support, n);
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn random_selection_is_distinct_and_pure(size in 1usize..12, n in 1usize..12, seed: u64, test in "[a-z]{1,6}") {
        let rows: Vec<Vec<f32>> = (0..size).map(|i| vec![1.0, i as f32]).collect();
        let (store, catalog, ids) = build(&rows);
        let set = SupportSet::from_ids(&store, &catalog, &ids).unwrap();
        let n = 1 + (n - 1) % size;
        let a = select_random(&set, n, seed, &test).unwrap();
        prop_assert_eq!(a.len(), n);
        let mut uniq: Vec<&str> = a.iter().map(|e| e.image_id.as_str()).collect();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), n);
        prop_assert_eq!(a, select_random(&set, n, seed, &test).unwrap());
    }
}

fn letters_support() -> (EmbeddingStore, SupportSet) {
    let store = store_of(&[
        ("label:thing", RecordKind::Label, "thing", vec![1.0, 0.0]),
        ("a", RecordKind::Image, "thing", vec![1.0, 0.1]),
        ("b", RecordKind::Image, "thing", vec![1.0, 0.2]),
        ("c", RecordKind::Image, "thing", vec![1.0, 0.3]),
        ("d", RecordKind::Image, "thing", vec![1.0, 0.4]),
        ("e", RecordKind::Image, "thing", vec![1.0, 0.5]),
    ]);
    let catalog = LabelCatalog::from_store(&store, vec!["thing".into()]).unwrap();
    let set = SupportSet::from_ids(&store, &catalog, &["a", "b", "c", "d"]).unwrap();
    (store, set)
}

/// Second implementation of the documented seeding and draw procedure.
fn reference_draw(seed: u64, key: &str, pool: &[&str], n: usize) -> Vec<String> {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut state = mix(seed ^ h);
    let mut next = || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        mix(state)
    };
    let mut pool: Vec<&str> = pool.to_vec();
    for i in 0..n {
        let m = (pool.len() - i) as u64;
        let zone = u64::MAX - u64::MAX % m;
        let r = loop {
            let x = next();
            if x < zone {
                break x % m;
            }
        };
        pool.swap(i, i + r as usize);
    }
    pool[..n].iter().map(|s| s.to_string()).collect()
}

#[test]
fn random_selection_golden() {
    let (_, set) = letters_support();
    let got: Vec<String> = select_random(&set, 2, 7, "t0")
        .unwrap()
        .into_iter()
        .map(|e| e.image_id)
        .collect();
    assert_eq!(got, reference_draw(7, "t0", &["a", "b", "c", "d"], 2));
    assert_eq!(got, GOLDEN_SEED7_T0);
}

/// Frozen from the first run, which agreed with `reference_draw`.
const GOLDEN_SEED7_T0: [&str; 2] = ["a", "c"];

#[test]
fn random_selection_single_support() {
    let store = store_of(&[
        ("label:thing", RecordKind::Label, "thing", vec![1.0, 0.0]),
        ("only", RecordKind::Image, "thing", vec![0.0, 1.0]),
    ]);
    let catalog = LabelCatalog::from_store(&store, vec!["thing".into()]).unwrap();
    let set = SupportSet::from_ids(&store, &catalog, &["only"]).unwrap();
    for seed in 0..20 {
        assert_eq!(select_random(&set, 1, seed, "t").unwrap()[0].image_id, "only");
    }
    assert!(matches!(
        select_random(&set, 2, 0, "t"),
        Err(Error::NotEnoughSupport {
            requested: 2,
            available: 1
        })
    ));
}

#[test]
fn random_selection_is_uniform() {
    let (store, _) = letters_support();
    let catalog = LabelCatalog::from_store(&store, vec!["thing".into()]).unwrap();
    let ids = ["a", "b", "c", "d", "e"];
    let set = SupportSet::from_ids(&store, &catalog, &ids).unwrap();
    let trials = 10_000u32;
    let mut first = [0u32; 5];
    let mut any = [0u32; 5];
    for seed in 0..trials {
        let picks = select_random(&set, 2, u64::from(seed), "t0").unwrap();
        first[ids.iter().position(|i| *i == picks[0].image_id).unwrap()] += 1;
        for p in &picks {
            any[ids.iter().position(|i| *i == p.image_id).unwrap()] += 1;
        }
    }
    let within = |counts: &[u32; 5], p: f64, draws: f64| {
        let mean = draws * p;
        let sd = (draws * p * (1.0 - p)).sqrt();
        counts.iter().all(|&c| (f64::from(c) - mean).abs() <= 3.0 * sd)
    };
    assert!(within(&first, 0.2, f64::from(trials)), "first draw {first:?}");
    assert!(within(&any, 0.4, f64::from(trials)), "membership {any:?}");
}

#[test]
fn rices_fixture_and_order_knob() {
    let comp = |s: f32| vec![s, (1.0 - s * s).sqrt()];
    let store = store_of(&[
        ("label:thing", RecordKind::Label, "thing", vec![1.0, 0.0]),
        ("q", RecordKind::Image, "thing", vec![1.0, 0.0]),
        ("a", RecordKind::Image, "thing", comp(0.9)),
        ("b", RecordKind::Image, "thing", comp(0.5)),
        ("c", RecordKind::Image, "thing", comp(0.7)),
        ("twin", RecordKind::Image, "thing", vec![1.0, 0.0]),
    ]);
    let catalog = LabelCatalog::from_store(&store, vec!["thing".into()]).unwrap();
    let set = SupportSet::from_ids(&store, &catalog, &["a", "b", "c"]).unwrap();
    let ices = select_rices(&store, "q", &set, 2).unwrap();
    let ids: Vec<&str> = ices.iter().map(|e| e.image_id.as_str()).collect();
    assert_eq!(ids, ["c", "a"]);
    let desc = IceOrder::Descending.apply(ices.clone());
    assert_eq!(desc[0].image_id, "a");
    assert_eq!(IceOrder::Ascending.apply(ices.clone()), ices);

    let all = select_rices(&store, "q", &set, 3).unwrap();
    assert_eq!(
        all.iter().map(|e| e.image_id.as_str()).collect::<Vec<_>>(),
        ["b", "c", "a"]
    );

    let set = SupportSet::from_ids(&store, &catalog, &["a", "b", "twin"]).unwrap();
    let last = select_rices(&store, "q", &set, 3).unwrap().pop().unwrap();
    assert_eq!(last.image_id, "twin");
    assert!((last.similarity_to_query.unwrap() - 1.0).abs() < 1e-6);
}
