//! Full in-memory pipeline on the synthetic corpus with the reference model.

use std::collections::HashMap;
use std::sync::OnceLock;

use knowpat_core::data_io::{render_prompt, PromptTemplate};
use knowpat_core::eval::perplexity;
use knowpat_core::model::{ReferenceModel, ReferenceModelConfig, TrainableModel};
use knowpat_core::objectives::sequence_score;
use knowpat_core::prefset::{
    build_all, AnswerGenerator, CorruptionGenerator, KnowledgeSensitiveGenerator, PreferenceSet,
    SetKind, GOLDEN_SOURCE,
};
use knowpat_core::retrieval::{
    build_index, retrieve_groups, HashedTfIdfEncoder, DEFAULT_DIMENSION, DEFAULT_HASH_SEED,
};
use knowpat_core::synthetic;
use knowpat_core::trainer::{
    assemble_examples, step_objective_frozen, step_weights, train, train_from, vocabulary_for,
    EpochMetrics, NoopObserver, TrainConfig, TrainExample, TrainObserver, Trainer,
};

const SEED: u64 = 7;

struct Fixture {
    sets: Vec<PreferenceSet>,
    examples: Vec<TrainExample>,
    dataset_len: usize,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = synthetic::corpus(SEED);
        let enc = HashedTfIdfEncoder::fit(
            corpus.kb.iter().map(|k| k.surface()),
            DEFAULT_DIMENSION,
            DEFAULT_HASH_SEED,
        );
        let index = build_index(&enc, &corpus.kb).unwrap();
        let groups: Vec<_> = corpus
            .dataset
            .iter()
            .map(|q| retrieve_groups(&index, &enc, &q.id, &q.question, 3).unwrap())
            .collect();
        let ladder = CorruptionGenerator::ladder(SEED);
        let sps: Vec<&dyn AnswerGenerator> =
            ladder.iter().map(|g| g as &dyn AnswerGenerator).collect();
        let kps = KnowledgeSensitiveGenerator::new("synthetic-rag", 0.3, 0.5, SEED);
        let template = PromptTemplate::default();
        let outcome = build_all(&corpus.dataset, &groups, &sps, &kps, &template).unwrap();
        assert!(outcome.failures.is_empty());
        let prompts: HashMap<String, String> = corpus
            .dataset
            .iter()
            .zip(&groups)
            .map(|(q, g)| {
                (
                    q.id.clone(),
                    render_prompt(&template, g.k1_items(), &q.question),
                )
            })
            .collect();
        let examples = assemble_examples(&corpus.dataset, &outcome.sets, &prompts);
        Fixture {
            sets: outcome.sets,
            examples,
            dataset_len: corpus.dataset.len(),
        }
    })
}

fn model() -> ReferenceModel {
    let cfg = ReferenceModelConfig {
        seed: SEED,
        ..Default::default()
    };
    ReferenceModel::new(vocabulary_for(&fixture().examples), cfg)
}

fn config() -> TrainConfig {
    TrainConfig {
        seed: SEED,
        lambda: 0.1,
        ..Default::default()
    }
}

fn positional_overlap(a: &str, golden: &str) -> usize {
    a.split_whitespace()
        .zip(golden.split_whitespace())
        .filter(|(x, y)| x == y)
        .count()
}

#[test]
fn two_sets_per_pair_with_valid_ranks() {
    let f = fixture();
    assert_eq!(f.sets.len(), 2 * f.dataset_len);
    for pair in f.sets.chunks(2) {
        assert_eq!(pair[0].kind(), SetKind::Style);
        assert_eq!(pair[1].kind(), SetKind::Knowledge);
        assert_eq!(pair[0].question_id(), pair[1].question_id());
    }
    for set in &f.sets {
        let ranks: Vec<u32> = set.ranked().iter().map(|c| c.rank).collect();
        assert_eq!(ranks, (1..=set.len() as u32).collect::<Vec<_>>());
        assert_eq!(set.ranked()[0].source, GOLDEN_SOURCE);
    }
}

#[test]
fn synthetic_quality_is_monotone_in_rank() {
    for set in &fixture().sets {
        let ranked = set.ranked();
        let golden = &ranked[0].text;
        for w in ranked.windows(2) {
            assert!(
                positional_overlap(&w[1].text, golden) <= positional_overlap(&w[0].text, golden),
                "{} {:?}",
                set.question_id(),
                ranked
            );
        }
    }
}

#[test]
fn vocabulary_is_desk_sized() {
    let m = model();
    assert!((60..=80).contains(&m.vocab().len()), "{}", m.vocab().len());
    assert!(m.num_parameters() <= 100_000);
}

#[test]
fn single_step_decreases_frozen_weight_objective() {
    let f = fixture();
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        grad_accumulation: 1,
        weight_decay: 0.0,
        ..config()
    };
    for ex in f.examples.iter().step_by(37) {
        let mut t = Trainer::new(model(), cfg.clone()).unwrap();
        let mu = step_weights(t.model(), ex).unwrap();
        let before = step_objective_frozen(t.model(), ex, cfg.lambda, &mu).unwrap();
        t.train_step(ex).unwrap();
        // Weights stay at their pre-step values, matching the gradient.
        let after = step_objective_frozen(t.model(), ex, cfg.lambda, &mu).unwrap();
        assert!(after < before, "{}: {before} -> {after}", ex.qa.id);
    }
}

struct Recorder {
    epochs: Vec<EpochMetrics>,
    steps: usize,
}

impl TrainObserver<ReferenceModel> for Recorder {
    fn on_step(
        &mut self,
        _epoch: usize,
        _step: usize,
        outcome: &knowpat_core::trainer::StepOutcome,
    ) -> knowpat_core::trainer::Result<()> {
        assert!(outcome.objective.is_finite());
        self.steps += 1;
        Ok(())
    }

    fn on_epoch_end(
        &mut self,
        _trainer: &Trainer<ReferenceModel>,
        metrics: &EpochMetrics,
    ) -> knowpat_core::trainer::Result<()> {
        self.epochs.push(metrics.clone());
        Ok(())
    }
}

#[test]
fn three_epochs_improve_and_repeat_exactly() {
    let f = fixture();
    let mut rec = Recorder {
        epochs: vec![],
        steps: 0,
    };
    let (trained, report) = train(model(), &f.examples, config(), &mut rec).unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert_eq!(rec.epochs, report.epochs);
    assert_eq!(rec.steps, 3 * report.train_examples);
    assert_eq!(report.agreement_split, "heldout");
    assert_eq!((report.train_examples, report.heldout_examples), (180, 20));

    let fin = report.final_metrics();
    assert!(fin.mean_l_ft < report.initial.mean_l_ft);
    assert!(fin.rank_agreement >= report.initial.rank_agreement);
    assert!((0.0..=1.0).contains(&fin.rank_agreement));

    let (again, report2) = train(model(), &f.examples, config(), &mut NoopObserver).unwrap();
    assert_eq!(report.without_timing(), report2.without_timing());
    assert_eq!(trained, again);

    // Perplexity from the evaluation module agrees with the trainer's score.
    for ex in f.examples.iter().take(10) {
        let s = sequence_score(&trained, &ex.prompt, &ex.qa.golden_answer).unwrap();
        let ppl = perplexity(&trained, &ex.prompt, &ex.qa.golden_answer).unwrap();
        assert!(((-s).exp() - ppl).abs() <= 1e-9 * ppl);
    }
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 2,
        ..config()
    };
    let (full, _) = train(model(), &f.examples, cfg.clone(), &mut NoopObserver).unwrap();

    let first = TrainConfig {
        epochs: 1,
        ..cfg.clone()
    };
    let mut t = Trainer::new(model(), first).unwrap();
    train_from(&mut t, &f.examples, 0, &mut NoopObserver).unwrap();
    let (m, opt) = t.into_parts();
    let mut resumed = Trainer::with_optimizer(m, opt, cfg);
    let report = train_from(&mut resumed, &f.examples, 1, &mut NoopObserver).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.epochs[0].epoch, 2);
    assert_eq!(resumed.model().parameters(), full.parameters());
}
