use std::collections::{BTreeMap, BTreeSet};

use calearn_core::corpus::{Class, Dataset, Origin};
use calearn_core::engine::{EngineConfig, RetrainPolicy};
use calearn_core::select::SelectionConfig;
use calearn_core::sim::{make_synthetic_corpus, CorpusSpec};
use calearn_core::workspace::{Next, Workspace};
use proptest::prelude::*;

const TASK: &str = "target";

fn corpus(n_docs: usize, seed: u64) -> Dataset {
    make_synthetic_corpus(&CorpusSpec {
        n_docs,
        prevalence: 0.3,
        seed,
        ..CorpusSpec::default()
    })
    .unwrap()
}

fn config(seed: u64, k_cluster: usize, every_n: Option<usize>) -> EngineConfig {
    EngineConfig {
        seed,
        min_labels_before_training: 6,
        selection: SelectionConfig {
            k_top: 40,
            k_cluster,
            high_fraction: 0.7,
            seed,
        },
        retrain_policy: match every_n {
            Some(n) => RetrainPolicy::EveryNLabels { n },
            None => RetrainPolicy::OnBatchConsumed,
        },
        ..EngineConfig::default()
    }
}

fn workspace(ds: &Dataset, cfg: EngineConfig) -> Workspace {
    let mut ws = Workspace::for_simulation(cfg).unwrap();
    ws.add_dataset(ds.clone()).unwrap();
    ws.create_task(TASK, None, None).unwrap();
    ws
}

fn truth(ds: &Dataset) -> BTreeMap<String, Class> {
    ds.documents
        .iter()
        .map(|d| (d.doc_id.clone(), d.ground_truth[TASK]))
        .collect()
}

/// Labels everything through the queue; returns the served ids in order.
fn label_all(ws: &mut Workspace, truth: &BTreeMap<String, Class>, flip_every: usize) -> Vec<String> {
    let mut served = Vec::new();
    let mut labeled = BTreeSet::new();
    for step in 0..truth.len() + 1 {
        match ws.next_to_label_sync(TASK).unwrap() {
            Next::Doc(d) => {
                assert!(!labeled.contains(&d.doc_id), "served labeled doc {}", d.doc_id);
                let mut cls = truth[&d.doc_id];
                if flip_every > 0 && step % flip_every == 0 {
                    cls = cls.flip();
                }
                ws.submit_label_sync(TASK, &d.doc_id, cls, "oracle", Origin::Oracle).unwrap();
                labeled.insert(d.doc_id.clone());
                served.push(d.doc_id);
            }
            Next::Complete => {
                assert_eq!(labeled.len(), truth.len());
                return served;
            }
        }
    }
    panic!("queue did not complete after {} serves", truth.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn queue_never_serves_labeled_and_completes(
        n_docs in 20usize..70,
        seed in 0u64..1000,
        k_cluster in 2usize..8,
        flip_every in 0usize..5,
        every_n in proptest::option::of(3usize..12),
    ) {
        let ds = corpus(n_docs, seed);
        let mut ws = workspace(&ds, config(seed, k_cluster, every_n));
        let served = label_all(&mut ws, &truth(&ds), flip_every);
        prop_assert_eq!(served.len(), n_docs);
        let distinct: BTreeSet<_> = served.iter().collect();
        prop_assert_eq!(distinct.len(), n_docs);
    }

    #[test]
    fn validation_fraction_holds_every_cycle(n_docs in 30usize..80, seed in 0u64..1000) {
        let ds = corpus(n_docs, seed);
        let mut ws = workspace(&ds, config(seed, 4, None));
        label_all(&mut ws, &truth(&ds), 0);
        let m = ws.metrics(TASK).unwrap();
        prop_assert!(!m.history.is_empty());
        for c in &m.history {
            let want = (0.2 * c.labels_used as f64).round();
            prop_assert!((c.validation_size as f64 - want).abs() <= 1.0, "{} of {}", c.validation_size, c.labels_used);
            prop_assert_eq!(c.train_size + c.validation_size, c.labels_used);
        }
        let indices: Vec<u64> = m.history.iter().map(|c| c.cycle_index).collect();
        prop_assert_eq!(indices, (1..=m.cycle_index).collect::<Vec<_>>());
    }

    #[test]
    fn log_and_seed_determine_queues(n_docs in 20usize..60, seed in 0u64..1000) {
        let ds = corpus(n_docs, seed);
        let t = truth(&ds);
        let mut a = workspace(&ds, config(seed, 3, None));
        let mut b = workspace(&ds, config(seed, 3, None));
        prop_assert_eq!(label_all(&mut a, &t, 3), label_all(&mut b, &t, 3));
    }
}

#[test]
fn labels_before_split_reach_training_and_later_ones_wait() {
    let ds = corpus(80, 4);
    let t = truth(&ds);
    let mut ws = workspace(&ds, config(4, 4, None));
    let mut job = None;
    while job.is_none() {
        let (next, j) = ws.next_to_label(TASK).unwrap();
        assert!(j.is_none());
        let Next::Doc(d) = next else { panic!("complete too early") };
        let (_, j) = ws
            .submit_label(TASK, &d.doc_id, t[&d.doc_id], "a", Origin::Oracle)
            .unwrap();
        job = j;
    }
    let at_split: BTreeSet<String> = ws.corpus().labels(TASK).into_keys().collect();

    // keep labeling while the cycle is out
    let mut late = BTreeSet::new();
    for _ in 0..3 {
        let (Next::Doc(d), j) = ws.next_to_label(TASK).unwrap() else { panic!() };
        assert!(j.is_none(), "second job while training");
        ws.submit_label(TASK, &d.doc_id, t[&d.doc_id], "a", Origin::Oracle).unwrap();
        late.insert(d.doc_id);
    }
    assert!(ws.summary(TASK).unwrap().training_in_progress);

    let outcome = job.unwrap().run().unwrap();
    let used: BTreeSet<String> = outcome
        .train_ids
        .iter()
        .chain(&outcome.validation_ids)
        .cloned()
        .collect();
    assert_eq!(used, at_split);
    assert!(used.is_disjoint(&late));
    ws.finish_cycle(outcome).unwrap();
    let s = ws.summary(TASK).unwrap();
    assert_eq!(s.cycle_index, 1);
    assert!(!s.training_in_progress);
}

#[test]
fn csv_file_to_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reviews.csv");
    std::fs::write(
        &path,
        "id,body\nr1,great food fast delivery\nr2,\"cold, late and wrong\"\nr3,would order again\n",
    )
    .unwrap();
    let mut ws = Workspace::new(EngineConfig::default()).unwrap();
    let opts = calearn_core::corpus::IngestOptions {
        id_column: Some("id".into()),
        ..calearn_core::corpus::IngestOptions::new(calearn_core::corpus::Format::Csv, "body")
    };
    let id = ws.ingest(&path, &opts).unwrap();
    assert_eq!(id, "reviews");
    ws.create_task("complaint", None, None).unwrap();
    ws.submit_label_sync("complaint", "r2", Class::Yes, "kim", Origin::Manual).unwrap();
    ws.submit_label_sync("complaint", "r1", Class::No, "kim", Origin::Manual).unwrap();

    let csv = String::from_utf8(ws.export("complaint").unwrap()).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["doc_id", "class", "origin", "annotator", "timestamp"]);
    assert_eq!(&rows[1][..4], ["r2", "yes", "manual", "kim"]);
    assert_eq!(&rows[2][..4], ["r1", "no", "manual", "kim"]);

    let snap = dir.path().join("state");
    ws.snapshot(&snap).unwrap();
    let back = Workspace::load(&snap).unwrap();
    assert_eq!(back.export("complaint").unwrap(), ws.export("complaint").unwrap());
    assert_eq!(back.summary("complaint").unwrap(), ws.summary("complaint").unwrap());
}
