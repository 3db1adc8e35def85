use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use llmar::dataset::{enumerate_partitions, generate_synthetic, FoldedDataset, GeneratorConfig};
use llmar::evaluation::{run_partition, EvalError};
use llmar::llm::{CompletionProvider, DecodingParams, LlmError, MockProvider, Prompt, PromptKind};
use llmar::training::{train, TrainError, TrainingConfig};

fn dataset(n: usize, seed: u64) -> FoldedDataset {
    let data = generate_synthetic(&GeneratorConfig::default_founders(n), seed).unwrap();
    FoldedDataset::new(data.records, 4, seed).unwrap()
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        max_iterations: 5,
        ..Default::default()
    }
}

/// Mock that fails or garbles one prompt kind.
struct Faulty {
    inner: MockProvider,
    kind: PromptKind,
    garble: bool,
    calls: AtomicUsize,
}

impl CompletionProvider for Faulty {
    fn id(&self) -> &str {
        "faulty"
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if prompt.kind != self.kind {
            return self.inner.complete(prompt, params);
        }
        if self.garble {
            Ok("I cannot comply with that request.".into())
        } else {
            Err(LlmError::Provider {
                provider: "faulty".into(),
                attempts: 3,
                message: "connection reset".into(),
            })
        }
    }
}

#[test]
fn partitions_cover_each_test_fold_three_times() {
    let parts = enumerate_partitions(4).unwrap();
    assert_eq!(parts.len(), 12);
    let distinct: BTreeSet<String> = parts.iter().map(|p| p.to_string()).collect();
    assert_eq!(distinct.len(), 12);
    for fold in 0..4 {
        assert_eq!(parts.iter().filter(|p| p.test_fold == fold).count(), 3);
    }
    for p in &parts {
        p.validate().unwrap();
    }
    assert!(enumerate_partitions(5).is_err());
}

#[test]
fn training_reads_only_training_and_validation_folds() {
    let data = dataset(2000, 3);
    let part = &enumerate_partitions(4).unwrap()[5];
    let view = data.view();
    train(&view, part, &small_config(), &MockProvider::default(), 1, None).unwrap();
    let expected: BTreeSet<usize> = [part.train_folds[0], part.train_folds[1], part.validation_fold].into();
    assert_eq!(view.accessed(), expected);
}

#[test]
fn training_is_deterministic_under_the_mock() {
    let data = dataset(2000, 4);
    let part = &enumerate_partitions(4).unwrap()[0];
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = train(&data.view(), part, &small_config(), &MockProvider::default(), 9, Some(dir_a.path())).unwrap();
    let b = train(&data.view(), part, &small_config(), &MockProvider::default(), 9, Some(dir_b.path())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.state.history.len(), 5);
    assert_eq!(a.state.reviews.len(), 1);
    for name in ["final.json", "final_policy.txt", "metrics.json", "seeds.json", "config.json", "reviews.json"] {
        let x = std::fs::read(dir_a.path().join(name)).unwrap();
        let y = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let prompts = std::fs::read_dir(dir_a.path().join("prompts")).unwrap().count();
    assert_eq!(prompts, a.state.exchanges.len());
    let c = train(&data.view(), part, &small_config(), &MockProvider::default(), 10, None).unwrap();
    assert_ne!(a.seeds, c.seeds);
}

#[test]
fn provider_failure_aborts_with_partial_artifacts() {
    let data = dataset(2000, 5);
    let part = &enumerate_partitions(4).unwrap()[0];
    let provider = Faulty {
        inner: MockProvider::default(),
        kind: PromptKind::Reflect,
        garble: false,
        calls: AtomicUsize::new(0),
    };
    let dir = tempfile::tempdir().unwrap();
    let err = train(&data.view(), part, &small_config(), &provider, 1, Some(dir.path())).unwrap_err();
    assert!(matches!(err, TrainError::Provider { iteration: 1, .. }), "{err}");
    assert!(dir.path().join("seeds.json").exists());
    assert!(!dir.path().join("final.json").exists());
}

#[test]
fn unusable_reflection_keeps_the_calibrated_policy() {
    let data = dataset(2000, 6);
    let part = &enumerate_partitions(4).unwrap()[0];
    let provider = Faulty {
        inner: MockProvider::default(),
        kind: PromptKind::Reflect,
        garble: true,
        calls: AtomicUsize::new(0),
    };
    let run = train(&data.view(), part, &small_config(), &provider, 1, None).unwrap();
    for rec in &run.state.history {
        assert!(rec.reflection_fallback);
        for r in rec.policy.all_rules() {
            assert!(rec.calibrated.all_rules().any(|c| c.body_key() == r.body_key()));
        }
    }
}

#[test]
fn unusable_review_falls_back_to_best_scoring_policy() {
    let data = dataset(2000, 7);
    let part = &enumerate_partitions(4).unwrap()[1];
    let provider = Faulty {
        inner: MockProvider::default(),
        kind: PromptKind::Evaluate,
        garble: true,
        calls: AtomicUsize::new(0),
    };
    let run = train(&data.view(), part, &small_config(), &provider, 2, None).unwrap();
    let review = &run.state.reviews[0];
    assert!(review.fallback);
    let best = review.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let chosen_iter = review.scores.iter().rev().find(|s| s.1 == best).unwrap().0;
    let expected = &run.state.history.iter().find(|h| h.iteration == chosen_iter).unwrap().policy;
    assert_eq!(review.chosen.rules(llmar::Direction::Success), expected.rules(llmar::Direction::Success));
}

#[test]
fn zero_iterations_is_an_error() {
    let data = dataset(800, 8);
    let part = &enumerate_partitions(4).unwrap()[0];
    let cfg = TrainingConfig {
        max_iterations: 0,
        ..Default::default()
    };
    let err = run_partition(&data, part, &cfg, &MockProvider::default(), 0, None).unwrap_err();
    assert!(matches!(err, EvalError::Training { .. }));
}
