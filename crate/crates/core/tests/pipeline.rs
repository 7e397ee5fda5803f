use proptest::prelude::*;

use vivqa_core::data::{kfold, split_indices};
use vivqa_core::harness::{predict_corpus, run, Checkpoint, Corpus, RunConfig, SyntheticCorpus};
use vivqa_core::metrics::{evaluate, TokenOverlap};

fn small() -> RunConfig {
    RunConfig {
        epochs: 3,
        learning_rate: 1e-3,
        synthetic: Some(SyntheticCorpus {
            n: 30,
            n_global: 2,
            n_local: 3,
            seed: 4,
        }),
        ..RunConfig::tiny()
    }
}

#[test]
fn checkpoint_file_reproduces_predictions() {
    let cfg = small();
    let corpus = Corpus::from_config(&cfg).unwrap();
    let out = run(&cfg, &corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::capture(&cfg, &out.trained.model, &out.trained.optimizer)
        .save(&path)
        .unwrap();
    let restored = Checkpoint::load(&path).unwrap().restore().unwrap();
    let (_, test) = corpus.split(cfg.train_ratio, cfg.split_seed).unwrap();
    assert_eq!(predict_corpus(&restored, &test).unwrap(), out.test_predictions);
}

#[test]
fn report_metrics_match_rescored_predictions() {
    let cfg = small();
    let out = run(&cfg, &Corpus::from_config(&cfg).unwrap()).unwrap();
    let rescored = evaluate(&out.test_predictions, TokenOverlap::Set).unwrap();
    assert_eq!(Some(rescored), out.report.test);
    assert_eq!(out.report.train_size + out.report.test_size, 30);
}

proptest! {
    #[test]
    fn split_is_disjoint_and_exhaustive(n in 1usize..300, seed in any::<u64>()) {
        let (a, b) = split_indices(n, 0.8, seed).unwrap();
        prop_assert_eq!(a.len(), (0.8 * n as f64).ceil() as usize);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn folds_partition_and_balance(n in 5usize..200, k in 2usize..6, seed in any::<u64>()) {
        let plan = kfold(n, k, seed).unwrap();
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut held: Vec<usize> = (0..k).flat_map(|f| plan.fold(f).1).collect();
        held.sort_unstable();
        prop_assert_eq!(held, (0..n).collect::<Vec<_>>());
    }
}
