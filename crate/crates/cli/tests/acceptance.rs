//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report reads top to
//! bottom. Exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use knowpat_cli::artifacts::{Checkpoint, StageHashes};
use knowpat_cli::commands::{EvalReportFile, TrainReportFile};
use knowpat_cli::config::{Overrides, RunConfig};
use knowpat_core::data_io::{
    read_artifact, render_prompt, ArtifactHeader, KnowledgeItem, PromptTemplate,
};
use knowpat_core::eval::{
    bleu_n, meteor_simplified, perplexity, rouge_l, rouge_n, RougeMeasure, TokenizerMode,
};
use knowpat_core::model::{MockModel, ReferenceModel, ReferenceModelConfig};
use knowpat_core::objectives::{
    adaptive_weights, align_loss_gradient, align_loss_gradient_with_weights, align_loss_unweighted,
    align_loss_with_weights, ft_loss, margin_rank_gradient, sequence_score, AdaptiveWeights,
    SequenceScores,
};
use knowpat_core::prefset::{
    build_all, AnswerGenerator, CorruptionGenerator, KnowledgeSensitiveGenerator, PreferenceSet,
    GOLDEN_SOURCE,
};
use knowpat_core::retrieval::{
    build_index, retrieve_groups, EmbeddingVector, GroupsRecord, HashedTfIdfEncoder,
    RetrievalError, TextEncoder, DEFAULT_DIMENSION, DEFAULT_HASH_SEED,
};
use knowpat_core::synthetic;
use knowpat_core::trainer::{assemble_examples, train, vocabulary_for, NoopObserver, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:.2?}, limit {limit:?}")
    })
}

fn random_scores(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-8.0..0.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

fn loss_identity() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lens = [2usize, 3, 4, 6];
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let sc = SequenceScores::new(random_scores(&mut rng, lens[case % 4])).unwrap();
        let weighted = align_loss_with_weights(&sc, &AdaptiveWeights::ones(sc.len())).unwrap();
        let plain = align_loss_unweighted(&sc).unwrap();
        worst = worst.max((weighted - plain).abs());
    }
    ensure(worst <= 1e-12, || format!("max |diff| {worst:e}"))?;
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "1000 cases, max |diff| {worst:e}, {:.1?}",
        started.elapsed()
    ))
}

fn gradient_check() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let len = rng.gen_range(2..=8);
        let s = random_scores(&mut rng, len);
        let sc = SequenceScores::new(s.clone()).unwrap();
        let mu = adaptive_weights(&sc).unwrap();
        let g = align_loss_gradient_with_weights(&sc, &mu).unwrap();
        for i in 0..len {
            let at = |d: f64| {
                let mut p = s.clone();
                p[i] += d;
                align_loss_with_weights(&SequenceScores::new(p).unwrap(), &mu).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g[i], fd));
        }
    }
    ensure(worst <= 1e-6, || format!("max relative error {worst:e}"))?;
    within(started.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "200 cases, max relative error {worst:.2e}, {:.1?}",
        started.elapsed()
    ))
}

fn never_saturated() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let len = rng.gen_range(2..=6);
        let mut s = random_scores(&mut rng, len);
        s.sort_by(|a, b| b.total_cmp(a));
        s.dedup();
        if s.len() < 2 {
            s = vec![-1.0, -2.0];
        }
        let sc = SequenceScores::new(s.clone()).unwrap();
        let margin = margin_rank_gradient(&sc, 0.0).unwrap();
        ensure(margin.iter().all(|g| *g == 0.0), || {
            format!("case {case}: margin-rank gradient {margin:?} on {s:?}")
        })?;
        let g = align_loss_gradient(&sc).unwrap();
        ensure(
            g.iter().any(|x| *x < 0.0) && g.iter().any(|x| *x > 0.0),
            || format!("case {case}: alignment gradient {g:?} lacks mixed signs"),
        )?;
    }
    Ok("100 ordered vectors: margin-rank gradient all zero, alignment gradient mixed".into())
}

fn adaptive_weight_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let len = rng.gen_range(2..=8);
        let s = random_scores(&mut rng, len);
        let mu = adaptive_weights(&SequenceScores::new(s.clone()).unwrap()).unwrap();
        let mu = mu.as_slice();
        let argmax = (0..len).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        let argmin = (0..len).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        ensure(mu[argmax] == 1.0 && mu[argmin] == 0.0, || {
            format!("case {case}: endpoints {mu:?} for {s:?}")
        })?;
        ensure(mu.iter().all(|m| (0.0..=1.0).contains(m)), || {
            format!("case {case}: out of [0, 1]: {mu:?}")
        })?;
    }
    for case in 0..200 {
        let len = rng.gen_range(2..=8);
        let v = rng.gen_range(-8.0..0.0);
        let mut s = vec![v; len];
        // Spreads at or below 1e-12 count as equal.
        if case % 2 == 1 {
            s[0] += 5e-13;
        }
        let mu = adaptive_weights(&SequenceScores::new(s.clone()).unwrap()).unwrap();
        ensure(mu.as_slice().iter().all(|m| *m == 1.0), || {
            format!("degenerate case {case}: {:?} for {s:?}", mu.as_slice())
        })?;
    }
    Ok("1000 random vectors: argmax 1, argmin 0, bounded; 200 degenerate vectors all 1".into())
}

fn score_identities() -> Check {
    let uniform = MockModel::uniform(10);
    let answers = ["a", "the cat sat", "one two three four five six"];
    for a in answers {
        let s = sequence_score(&uniform, "p", a).unwrap();
        ensure(s == 0.1f64.ln(), || format!("S({a:?}) = {s}"))?;
        let ft = ft_loss(&uniform, "p", a).unwrap();
        ensure(ft == -s, || format!("ft {ft} vs -S {}", -s))?;
        let ppl = perplexity(&uniform, "p", a).unwrap();
        ensure(
            rel_err(ppl, 10.0) <= 1e-9 && rel_err(ppl, ft.exp()) <= 1e-9,
            || format!("ppl {ppl}"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let len = rng.gen_range(1..=10);
        let answer: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let answer = answer.join(" ");
        let lps: Vec<f64> = (0..len).map(|_| rng.gen_range(-6.0..0.0)).collect();
        let m = MockModel::new()
            .with_answer("p", answer.as_str(), lps)
            .unwrap();
        let s = sequence_score(&m, "p", &answer).unwrap();
        let ft = ft_loss(&m, "p", &answer).unwrap();
        let ppl = perplexity(&m, "p", &answer).unwrap();
        ensure(ft == -s && rel_err(ppl, ft.exp()) <= 1e-9, || {
            format!("case {case}: S {s} ft {ft} ppl {ppl}")
        })?;
    }
    Ok("uniform-10 mock: S = ln 0.1 exactly, PPL = 10; 200 random tables consistent".into())
}

/// Looks vectors up by exact text.
struct TableEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl TextEncoder for TableEncoder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.table[*t].clone()))
            .collect()
    }
}

fn retrieval_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut largest = 0;
    for case in 0..100 {
        let dim = rng.gen_range(2..=6);
        let n = if case < 10 {
            1000
        } else {
            rng.gen_range(1..=1000)
        };
        largest = largest.max(n);
        let k = *[1usize, 3, 5].choose(&mut rng).unwrap();
        // Small integer components make similarity ties common.
        let mut vector = || loop {
            let v: Vec<f64> = (0..dim)
                .map(|_| f64::from(rng.gen_range(-3i32..=3)))
                .collect();
            if v.iter().any(|x| *x != 0.0) {
                break v;
            }
        };
        let query = vector();
        let items: Vec<(String, Vec<f64>)> =
            (0..n).map(|i| (format!("k{i:04}"), vector())).collect();
        let mut table: HashMap<String, Vec<f64>> = items
            .iter()
            .map(|(id, v)| (format!("text {id}"), v.clone()))
            .collect();
        table.insert("query".into(), query.clone());
        let kb: Vec<KnowledgeItem> = items
            .iter()
            .map(|(id, _)| KnowledgeItem::document(id.clone(), format!("text {id}")).unwrap())
            .collect();
        let enc = TableEncoder { dim, table };
        let index = build_index(&enc, &kb).unwrap();
        let got = retrieve_groups(&index, &enc, "q", "query", k).unwrap();

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut full: Vec<(f64, &str)> = items
            .iter()
            .map(|(id, v)| {
                // Start from +0.0: `sum` starts from -0.0, which `total_cmp` would
                // order below an orthogonal item's +0.0.
                let dot = query.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b);
                (
                    (dot / (norm(&query) * norm(v))).clamp(-1.0, 1.0),
                    id.as_str(),
                )
            })
            .collect();
        full.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let want1: Vec<&str> = full.iter().take(k).map(|x| x.1).collect();
        let want3: Vec<&str> = full.iter().skip(k).take(k).map(|x| x.1).collect();
        let got1: Vec<&str> = got.k1.iter().map(|s| s.item.id.as_str()).collect();
        let got3: Vec<&str> = got.k3.iter().map(|s| s.item.id.as_str()).collect();
        ensure(got1 == want1 && got3 == want3 && got.k2.is_empty(), || {
            format!("case {case} (n={n}, k={k}): {got1:?}/{got3:?} vs {want1:?}/{want3:?}")
        })?;
    }
    within(started.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "100 knowledge bases up to {largest} items, k in {{1,3,5}}, {:.1?}",
        started.elapsed()
    ))
}

struct Desk {
    dataset_len: usize,
    sets: Vec<PreferenceSet>,
    failures: usize,
    examples: Vec<knowpat_core::trainer::TrainExample>,
}

fn desk_pipeline(seed: u64) -> Desk {
    let corpus = synthetic::corpus(seed);
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
    let ladder = CorruptionGenerator::ladder(seed);
    let style: Vec<&dyn AnswerGenerator> =
        ladder.iter().map(|g| g as &dyn AnswerGenerator).collect();
    let kps = KnowledgeSensitiveGenerator::new("synthetic-rag", 0.3, 0.5, seed);
    let template = PromptTemplate::default();
    let outcome = build_all(&corpus.dataset, &groups, &style, &kps, &template).unwrap();
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
    Desk {
        dataset_len: corpus.dataset.len(),
        failures: outcome.failures.len(),
        sets: outcome.sets,
        examples,
    }
}

fn preference_accounting() -> Check {
    let desk = desk_pipeline(7);
    let n = desk.dataset_len;
    ensure(desk.failures == 0, || {
        format!("{} generator failures", desk.failures)
    })?;
    ensure(desk.sets.len() == 2 * n, || {
        format!("{} sets for N = {n}", desk.sets.len())
    })?;
    let golden: HashMap<&str, &str> = desk
        .examples
        .iter()
        .map(|e| (e.qa.id.as_str(), e.qa.golden_answer.as_str()))
        .collect();
    for s in &desk.sets {
        let mut ranks: Vec<u32> = s.candidates().iter().map(|c| c.rank).collect();
        ranks.sort_unstable();
        ensure(ranks == (1..=s.len() as u32).collect::<Vec<_>>(), || {
            format!("{}: ranks {ranks:?}", s.question_id())
        })?;
        let top = s.candidates().iter().find(|c| c.rank == 1).unwrap();
        ensure(
            top.source == GOLDEN_SOURCE && top.text == golden[s.question_id()],
            || format!("{}: rank 1 is {top:?}", s.question_id()),
        )?;
    }
    Ok(format!(
        "N = {n}: {} sets, all rank permutations with golden at rank 1",
        desk.sets.len()
    ))
}

fn desk_training() -> Check {
    let started = Instant::now();
    let desk = desk_pipeline(7);
    let model = || {
        ReferenceModel::new(
            vocabulary_for(&desk.examples),
            ReferenceModelConfig {
                seed: 7,
                ..Default::default()
            },
        )
    };
    let cfg = TrainConfig {
        seed: 7,
        lambda: 0.1,
        epochs: 3,
        ..Default::default()
    };
    let (m1, r1) = train(model(), &desk.examples, cfg.clone(), &mut NoopObserver).unwrap();
    let (m2, r2) = train(model(), &desk.examples, cfg, &mut NoopObserver).unwrap();
    let (init, fin) = (&r1.initial, r1.final_metrics());
    let vocab = m1.vocab().len();
    ensure(fin.mean_l_ft < init.mean_l_ft, || {
        format!("(a) l_ft {} -> {}", init.mean_l_ft, fin.mean_l_ft)
    })?;
    ensure(r1.agreement_split == "heldout", || {
        "(b) no held-out split".into()
    })?;
    ensure(fin.rank_agreement >= init.rank_agreement, || {
        format!(
            "(b) rank agreement {} -> {}",
            init.rank_agreement, fin.rank_agreement
        )
    })?;
    let bitwise = serde_json::to_string(&r1.without_timing()).unwrap()
        == serde_json::to_string(&r2.without_timing()).unwrap()
        && m1 == m2;
    ensure(bitwise, || "(c) repeat run differs".into())?;
    within(started.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "{} pairs, vocab {vocab}: (a) l_ft {:.4} -> {:.4}; (b) held-out agreement {:.3} -> {:.3}; (c) identical; two runs {:.1?}",
        desk.dataset_len,
        init.mean_l_ft,
        fin.mean_l_ft,
        init.rank_agreement,
        fin.rank_agreement,
        started.elapsed()
    ))
}

fn metric_oracles() -> Check {
    let tok = |s: &str| TokenizerMode::Whitespace.tokenize(s);
    let close = |name: &str, got: f64, want: f64| {
        ensure((got - want).abs() <= 1e-12, || {
            format!("{name}: {got} vs {want}")
        })
    };
    // Clipped unigram precision 1/3, candidate longer so no brevity penalty.
    close(
        "bleu_1 clipped",
        bleu_n(&tok("the the the"), &tok("the cat"), 1, false),
        1.0 / 3.0,
    )?;
    // Full unigram match, c = 2, r = 4: penalty exp(1 - 4/2).
    close(
        "bleu_1 brevity",
        bleu_n(&tok("the cat"), &tok("the cat sat down"), 1, false),
        (-1.0f64).exp(),
    )?;
    // P = 2/3, R = 1.
    close(
        "rouge_1 F1",
        rouge_n(&tok("the cat sat"), &tok("the cat"), 1, RougeMeasure::F1),
        0.8,
    )?;
    // LCS 3 of 4 and 3: F1 = 2 * 0.75 / 1.75.
    close(
        "rouge_l F1",
        rouge_l(&tok("a b c d"), &tok("a c d"), RougeMeasure::F1),
        6.0 / 7.0,
    )?;
    // One of two unigrams, one chunk: P = R = 1/2, Fmean 10PR/(R+9P) = 1/2.
    close(
        "meteor half",
        meteor_simplified(&tok("the cat"), &tok("the dog"), false),
        0.5,
    )?;
    // Token probabilities 0.5 and 0.25: sqrt(8).
    let m = MockModel::new()
        .with_answer("p", "x y", vec![0.5f64.ln(), 0.25f64.ln()])
        .unwrap();
    let ppl = perplexity(&m, "p", "x y").unwrap();
    ensure(rel_err(ppl, 8f64.sqrt()) <= 1e-12, || format!("ppl {ppl}"))?;

    for text in [
        "the cat sat on the mat",
        "alpha has tier gold .",
        "one two three four",
    ] {
        let t = tok(text);
        let mut values: Vec<f64> = (1..=4).map(|n| bleu_n(&t, &t, n, false)).collect();
        values.extend([
            rouge_n(&t, &t, 1, RougeMeasure::F1),
            rouge_n(&t, &t, 2, RougeMeasure::F1),
            rouge_l(&t, &t, RougeMeasure::F1),
            meteor_simplified(&t, &t, true),
        ]);
        ensure(values.iter().all(|v| *v == 1.0), || {
            format!("identical {text:?}: {values:?}")
        })?;
    }
    let (a, b) = (tok("red green"), tok("blue yellow"));
    ensure(
        bleu_n(&a, &b, 1, false) == 0.0
            && rouge_n(&a, &b, 1, RougeMeasure::F1) == 0.0
            && rouge_l(&a, &b, RougeMeasure::F1) == 0.0
            && meteor_simplified(&a, &b, true) == 0.0,
        || "disjoint texts score above 0".into(),
    )?;
    Ok("bleu_1 1/3 and e^-1, rouge_1 0.8, rouge_l 6/7, meteor 0.5, ppl sqrt 8, identical 1.0, disjoint 0".into())
}

fn knowpat(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_knowpat"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.code() != Some(0) {
        return Err(format!(
            "`knowpat {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn first_header(path: &Path) -> Result<ArtifactHeader, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(text.lines().next().unwrap_or(""))
        .map_err(|e| format!("{} header: {e}", path.display()))
}

fn cli_smoke() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let fixtures = root.join("fixtures");
    let fx = fixtures.to_str().unwrap();
    knowpat(&["synth", "--out", fx, "--seed", "7"])?;
    let config = fixtures.join("config.toml");
    let cfg_arg = config.to_str().unwrap();
    for stage in ["retrieve", "build-prefsets", "train"] {
        knowpat(&[stage, "--config", cfg_arg])?;
    }
    knowpat(&["eval", "--config", cfg_arg, "--generate"])?;

    let cfg = RunConfig::load(&config, &Overrides::default()).map_err(|e| e.to_string())?;
    let expected = StageHashes::compute(&cfg).map_err(|e| e.to_string())?;
    let out = &cfg.paths.out;

    let (gh, groups) = read_artifact::<GroupsRecord>(&out.join("knowledge_groups.jsonl"))
        .map_err(|e| e.to_string())?;
    let gh = gh.ok_or("knowledge groups lack a header")?;
    let (ph, sets) = read_artifact::<PreferenceSet>(&out.join("preference_sets.jsonl"))
        .map_err(|e| e.to_string())?;
    let ph = ph.ok_or("preference sets lack a header")?;
    let lh = first_header(&out.join("train_log.jsonl"))?;
    let report: TrainReportFile = serde_json::from_str(
        &fs::read_to_string(out.join("train_report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| format!("train report: {e}"))?;
    let ck =
        Checkpoint::load(&out.join("checkpoints/epoch-003.json")).map_err(|e| e.to_string())?;
    let eval: EvalReportFile = serde_json::from_str(
        &fs::read_to_string(out.join("eval/epoch-003/eval_report.json"))
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| format!("eval report: {e}"))?;

    ensure(groups.len() == 200 && sets.len() == 400, || {
        format!("{} group records, {} sets", groups.len(), sets.len())
    })?;
    ensure(report.report.epochs.len() == 3, || {
        "train report lacks 3 epochs".into()
    })?;
    ensure(eval.report.sample_count > 0, || {
        "eval scored nothing".into()
    })?;
    let chain = [
        (
            "groups",
            gh.config_hash.as_str(),
            expected.retrieve.as_str(),
        ),
        ("prefsets", &ph.config_hash, &expected.prefsets),
        (
            "prefsets upstream",
            ph.upstream.as_deref().unwrap_or(""),
            &expected.retrieve,
        ),
        ("train log", &lh.config_hash, &expected.train),
        ("train report", &report.header.config_hash, &expected.train),
        ("checkpoint", &ck.header.config_hash, &expected.train),
        (
            "checkpoint upstream",
            ck.header.upstream.as_deref().unwrap_or(""),
            &expected.prefsets,
        ),
        (
            "eval upstream",
            eval.header.upstream.as_deref().unwrap_or(""),
            &expected.train,
        ),
        (
            "eval",
            &eval.header.config_hash,
            &expected.eval(&expected.train, &cfg),
        ),
    ];
    for (what, got, want) in chain {
        ensure(got == want, || format!("{what}: hash {got} vs {want}"))?;
    }
    Ok(format!(
        "synth -> retrieve -> build-prefsets -> train -> eval exit 0, {} hashes chained, {:.1?}",
        chain.len(),
        started.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("loss identity with unit weights", loss_identity),
        ("alignment gradient vs finite differences", gradient_check),
        ("never-saturated contrast", never_saturated),
        ("adaptive weights", adaptive_weight_suite),
        (
            "score / fine-tuning loss / perplexity identities",
            score_identities,
        ),
        ("retrieval vs full-sort oracle", retrieval_oracle),
        ("2N preference sets", preference_accounting),
        ("desk-scale training", desk_training),
        ("metric oracles", metric_oracles),
        ("end-to-end CLI smoke", cli_smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
