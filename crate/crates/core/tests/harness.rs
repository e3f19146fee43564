mod common;

use common::{replay, replay_accuracy, SyntheticTask, CLASSES, TESTS};
use icc_core::embedding_store::{load_store, RecordKind};
use icc_core::eval_harness::{
    ingest_embeddings, read_report, run_eval, store_paths, table_path_for, write_report, EvalConfig, EvalContext,
    ImageEntry, Strategy,
};
use icc_core::ice_selection::Selector;
use icc_core::scorer_gateway::{
    Backend, EmbedItem, Gateway, GenerateRequest, GenerateResponse, ScoreRequest, ScoreResponse, SyntheticBackend,
};
use icc_core::{Error, ErrorClass};

fn context(task: &SyntheticTask, dir: &std::path::Path, edit: impl FnOnce(&mut EvalConfig)) -> EvalContext {
    let mut cfg = task.config(dir);
    edit(&mut cfg);
    EvalContext::load(cfg).unwrap()
}

/// Synthetic scoring that refuses prompts mentioning one test image.
struct FailsOn {
    inner: SyntheticBackend,
    image: &'static str,
}

impl Backend for FailsOn {
    fn score(&self, req: &ScoreRequest) -> icc_core::Result<ScoreResponse> {
        if req.images.iter().any(|i| i == self.image) {
            return Err(Error::BackendError {
                code: "internal".into(),
                message: "corrupt image".into(),
            });
        }
        self.inner.score(req)
    }
    fn generate(&self, req: &GenerateRequest) -> icc_core::Result<GenerateResponse> {
        self.inner.generate(req)
    }
    fn embed(&self, items: &[EmbedItem]) -> icc_core::Result<Vec<Vec<f32>>> {
        self.inner.embed(items)
    }
    fn fingerprint(&self) -> String {
        "fails-on".into()
    }
}

#[test]
fn zero_shot_prompts_hold_only_the_query() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(&task, dir.path(), |_| {});
    let run = ctx.run(Strategy::Sl, 0).unwrap();
    assert_eq!(run.total, TESTS);
    for rec in &run.records {
        assert!(rec.ice_ids.is_empty());
        let p = ctx.build_prompt(Strategy::Sl, &[], &rec.test_id).unwrap();
        assert_eq!(p.image_ids(), std::slice::from_ref(&rec.test_id));
    }
    // Nothing in the prompt mentions a class, so every score is the bias.
    assert!(run.records.iter().all(|r| r.predicted.as_deref() == Some("alpha")));
}

#[test]
fn null_model_picks_the_first_class() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(&task, dir.path(), |c| c.synthetic_mention_weight = 0.0);
    for strategy in [Strategy::Sl, Strategy::LdeDd, Strategy::Ens] {
        let run = ctx.run(strategy, 2).unwrap();
        assert!(run.records.iter().all(|r| r.predicted.as_deref() == Some(CLASSES[0])));
        assert_eq!(run.correct, TESTS / CLASSES.len());
    }
}

#[test]
fn accuracy_matches_replay_for_random_selection() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let rices = context(&task, dir.path(), |_| {});
    assert_eq!(
        rices.run(Strategy::LdeDd, 2).unwrap().accuracy,
        replay_accuracy(&replay(&task, Strategy::LdeDd, 2))
    );

    let random = context(&task, dir.path(), |c| {
        c.selector = Selector::Random;
        c.global_seed = 11;
    });
    let a = random.run(Strategy::Sl, 2).unwrap();
    let b = random.run(Strategy::Sl, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.selector, Selector::Random);
    assert!(a
        .records
        .iter()
        .all(|r| r.ice_ids.len() == 2 && r.ice_ids[0] != r.ice_ids[1]));
}

#[test]
fn test_split_order_does_not_matter() {
    let task = SyntheticTask::build();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = task.config(a.path());
    let cfg_b = task.config(b.path());
    let mut shuffled = task.test.clone();
    shuffled.reverse();
    shuffled.rotate_left(17);
    std::fs::write(&cfg_b.test, shuffled.join("\n")).unwrap();
    let ra = run_eval(cfg_a).unwrap();
    let rb = run_eval(cfg_b).unwrap();
    assert_eq!(ra.runs, rb.runs);
}

#[test]
fn worker_count_does_not_change_the_report() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let one = context(&task, dir.path(), |c| c.workers = 1).run_all().unwrap();
    let eight = context(&task, dir.path(), |c| c.workers = 8).run_all().unwrap();
    assert_eq!(one.runs, eight.runs);
}

#[test]
fn errors_abort_by_default_and_are_skipped_on_request() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let gateway = || {
        Gateway::new(FailsOn {
            inner: SyntheticBackend::new(task.config(dir.path()).synthetic_config()),
            image: "t07",
        })
    };

    let strict = EvalContext::load_with_gateway(task.config(dir.path()), gateway()).unwrap();
    let err = strict.run(Strategy::Sl, 1).unwrap_err();
    assert!(matches!(err, Error::BackendError { .. }));
    assert_eq!(err.class(), ErrorClass::Backend);

    let mut cfg = task.config(dir.path());
    cfg.skip_errors = true;
    let lenient = EvalContext::load_with_gateway(cfg, gateway()).unwrap();
    let run = lenient.run(Strategy::Sl, 1).unwrap();
    assert_eq!((run.errors, run.total), (1, TESTS - 1));
    assert_eq!(run.records.len(), TESTS);
    let bad = run.records.iter().find(|r| r.test_id == "t07").unwrap();
    assert_eq!(bad.predicted, None);
    assert_eq!(bad.error.as_ref().unwrap().code, "backend_error");
    assert_eq!(run.accuracy, run.correct as f64 / (TESTS - 1) as f64);
}

#[test]
fn overlapping_splits_are_rejected() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let cfg = task.config(dir.path());
    std::fs::write(&cfg.test, format!("t00\n{}\n", task.support[3])).unwrap();
    match EvalContext::load(cfg) {
        Err(Error::DisjointnessViolation(ids)) => assert_eq!(ids, [task.support[3].clone()]),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("overlap accepted"),
    }
}

#[test]
fn config_errors_are_config_class() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = task.config(dir.path());
    cfg.shots = vec![1, 200];
    let err = EvalContext::load(cfg).err().unwrap();
    assert_eq!(err.class(), ErrorClass::Config);
    assert!(EvalConfig::parse("no_such_key = 1").is_err());
}

#[test]
fn report_round_trips_and_writes_a_table() {
    let task = SyntheticTask::build();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = task.config(dir.path());
    cfg.strategy = vec![Strategy::Sl, Strategy::LdeDd];
    let report = run_eval(cfg).unwrap();
    let path = dir.path().join("report.json");
    write_report(&report, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), report);
    let table = std::fs::read_to_string(table_path_for(&path)).unwrap();
    assert_eq!(
        table,
        "| Method | 1-shot | 2-shot |\n|---|---:|---:|\n| RICES SL | 0.00 | 70.00 |\n| RICES LDE-DD | 0.00 | 100.00 |\n"
    );
}

#[test]
fn ingestion_writes_a_loadable_store() {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::synthetic(Default::default());
    let images: Vec<ImageEntry> = (0..70)
        .map(|i| ImageEntry {
            id: format!("img{i}"),
            label: CLASSES[i % 3].into(),
            path: format!("images/{i}.jpg"),
        })
        .collect();
    let classes: Vec<String> = CLASSES[..3].iter().map(|c| c.to_string()).collect();
    let prefix = dir.path().join("store");
    let (manifest, matrix) = ingest_embeddings(&gw, &images, &classes, "a photo of a {label}", &prefix).unwrap();
    assert_eq!((manifest.clone(), matrix.clone()), store_paths(&prefix));
    let store = load_store(&manifest, &matrix).unwrap();
    assert_eq!(store.len(), 73);
    assert_eq!(store.record("label:bravo").unwrap().kind, RecordKind::Label);
    assert_eq!(
        store.record("img5").unwrap().source_path.as_deref(),
        Some("images/5.jpg")
    );
    assert_eq!(
        store.vector("img5").unwrap(),
        gw.embed(&[EmbedItem::image("img5", "images/5.jpg")]).unwrap()[0]
    );
    assert!(ingest_embeddings(&gw, &images, &classes, "no placeholder", &prefix).is_err());
}
