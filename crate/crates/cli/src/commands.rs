//! The four pipeline stages plus the synthetic-corpus writer.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use knowpat_core::data_io::{
    self, load_kb, load_qa_dataset, render_prompt, write_jsonl, ArtifactHeader, KnowledgeItem,
    QaPair,
};
use knowpat_core::eval::{
    evaluate, load_generations, load_human_eval, tally_human_eval, write_generations, EvalReport,
    PairTally,
};
use knowpat_core::model::ReferenceModel;
use knowpat_core::prefset::{
    build_all, load_preference_sets, write_preference_sets, AnswerGenerator, FailureRecord,
    PREFSET_ARTIFACT,
};
use knowpat_core::retrieval::{build_index, retrieve_groups, GroupsRecord, KnowledgeGroups};
use knowpat_core::synthetic;
use knowpat_core::trainer::{
    assemble_examples, train_from, vocabulary_for, EpochMetrics, StepOutcome, TrainExample,
    TrainObserver, TrainReport, Trainer,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

/// Validated config, its stage hashes and the loaded inputs.
struct Context<'a> {
    cfg: &'a RunConfig,
    hashes: StageHashes,
    dataset: Vec<QaPair>,
    kb: Vec<KnowledgeItem>,
}

impl<'a> Context<'a> {
    fn open(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hashes = StageHashes::compute(cfg)?;
        let dataset = load_qa_dataset(&cfg.paths.qa)?;
        let kb = load_kb(&cfg.paths.kb)?;
        ensure_dir(&cfg.paths.out)?;
        Ok(Self {
            cfg,
            hashes,
            dataset,
            kb,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out.join(name)
    }

    /// Knowledge groups written by `retrieve` under this config.
    fn load_groups(&self) -> Result<Vec<KnowledgeGroups>> {
        let path = self.out(GROUPS_FILE);
        if !path.is_file() {
            return Err(CliError::validation(format!(
                "{} not found; run `retrieve` first",
                path.display()
            )));
        }
        let (header, rows) = data_io::read_artifact::<GroupsRecord>(&path)?;
        check_header(
            &path,
            header.as_ref(),
            GROUPS_ARTIFACT,
            &self.hashes.retrieve,
        )?;
        let by_id: HashMap<String, KnowledgeItem> =
            self.kb.iter().map(|k| (k.id.clone(), k.clone())).collect();
        rows.iter()
            .map(|(_, r)| KnowledgeGroups::from_record(r, &by_id).map_err(CliError::from))
            .collect()
    }

    /// K1-augmented prompt per question id.
    fn prompts(&self, groups: &[KnowledgeGroups]) -> Result<HashMap<String, String>> {
        let template = self.cfg.prompt_template()?;
        let by_q: HashMap<&str, &KnowledgeGroups> =
            groups.iter().map(|g| (g.question_id.as_str(), g)).collect();
        Ok(self
            .dataset
            .iter()
            .filter_map(|qa| {
                by_q.get(qa.id.as_str()).map(|g| {
                    (
                        qa.id.clone(),
                        render_prompt(&template, g.k1_items(), &qa.question),
                    )
                })
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieveSummary {
    pub path: PathBuf,
    pub records: usize,
    pub config_hash: String,
}

pub fn retrieve(cfg: &RunConfig) -> Result<RetrieveSummary> {
    let ctx = Context::open(cfg)?;
    let encoder = cfg.encoder(ctx.kb.iter().map(|k| k.surface()))?;
    let index = build_index(encoder.as_ref(), &ctx.kb)?;
    let records: Vec<GroupsRecord> = ctx
        .dataset
        .iter()
        .map(|qa| {
            retrieve_groups(
                &index,
                encoder.as_ref(),
                &qa.id,
                &qa.question,
                cfg.retrieval.k,
            )
            .map(|g| g.to_record())
            .map_err(|e| CliError::from(e).context(&qa.id))
        })
        .collect::<Result<_>>()?;
    let path = ctx.out(GROUPS_FILE);
    let header = ArtifactHeader::new(GROUPS_ARTIFACT, &ctx.hashes.retrieve);
    write_jsonl(&path, Some(&header), &records)?;
    Ok(RetrieveSummary {
        path,
        records: records.len(),
        config_hash: ctx.hashes.retrieve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefsetSummary {
    pub path: PathBuf,
    pub emitted: usize,
    pub failures: usize,
    pub config_hash: String,
}

/// Fails with a runtime error only when every set failed.
pub fn build_prefsets(cfg: &RunConfig) -> Result<PrefsetSummary> {
    let ctx = Context::open(cfg)?;
    let groups = ctx.load_groups()?;
    let style: Vec<Box<dyn AnswerGenerator>> = cfg
        .prefset
        .style
        .iter()
        .map(|g| g.build(cfg.seed))
        .collect::<Result<_>>()?;
    let style_refs: Vec<&dyn AnswerGenerator> = style.iter().map(|g| g.as_ref()).collect();
    let knowledge = cfg.prefset.knowledge.build(cfg.seed)?;
    let template = cfg.prompt_template()?;
    let outcome = build_all(
        &ctx.dataset,
        &groups,
        &style_refs,
        knowledge.as_ref(),
        &template,
    )?;

    let header = ArtifactHeader::new(PREFSET_ARTIFACT, &ctx.hashes.prefsets)
        .with_upstream(&ctx.hashes.retrieve);
    let path = ctx.out(PREFSETS_FILE);
    write_preference_sets(&path, &header, &outcome.sets)?;
    let fail_header = ArtifactHeader::new(FAILURES_ARTIFACT, &ctx.hashes.prefsets)
        .with_upstream(&ctx.hashes.retrieve);
    write_jsonl::<_, FailureRecord>(
        ctx.out(FAILURES_FILE),
        Some(&fail_header),
        &outcome.failures,
    )?;
    for f in &outcome.failures {
        log::warn!(
            "dropped {:?} set for `{}`: {}",
            f.kind,
            f.question_id,
            f.reason
        );
    }
    if outcome.sets.is_empty() && !outcome.failures.is_empty() {
        return Err(CliError::runtime(format!(
            "all {} preference sets failed; see {}",
            outcome.failures.len(),
            ctx.out(FAILURES_FILE).display()
        )));
    }
    Ok(PrefsetSummary {
        path,
        emitted: outcome.sets.len(),
        failures: outcome.failures.len(),
        config_hash: ctx.hashes.prefsets,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub outcome: StepOutcome,
}

/// Train report as persisted, timing excluded so reruns match byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReportFile {
    pub header: ArtifactHeader,
    pub resumed_from_epoch: usize,
    pub report: TrainReport,
}

struct Persist<'a> {
    dir: PathBuf,
    header: ArtifactHeader,
    log: BufWriter<fs::File>,
    log_path: &'a Path,
    written: Vec<PathBuf>,
}

impl TrainObserver<ReferenceModel> for Persist<'_> {
    fn on_step(
        &mut self,
        epoch: usize,
        step: usize,
        outcome: &StepOutcome,
    ) -> knowpat_core::trainer::Result<()> {
        let rec = LogRecord {
            epoch,
            step,
            outcome: outcome.clone(),
        };
        serde_json::to_writer(&mut self.log, &rec)
            .map_err(|e| e.to_string())
            .and_then(|_| self.log.write_all(b"\n").map_err(|e| e.to_string()))
            .map_err(|e| {
                knowpat_core::trainer::TrainError::Observer(format!(
                    "{}: {e}",
                    self.log_path.display()
                ))
            })
    }

    fn on_epoch_end(
        &mut self,
        trainer: &Trainer<ReferenceModel>,
        metrics: &EpochMetrics,
    ) -> knowpat_core::trainer::Result<()> {
        let ck = Checkpoint {
            header: self.header.clone(),
            epoch: metrics.epoch,
            metrics: metrics.clone(),
            model: trainer.model().clone(),
            optimizer: trainer.optimizer().clone(),
        };
        let path = ck
            .save(&self.dir)
            .map_err(|e| knowpat_core::trainer::TrainError::Observer(e.to_string()))?;
        log::info!(
            "epoch {}: l_ft {:.4} l_align {:.4} agreement {:.3}",
            metrics.epoch,
            metrics.mean_l_ft,
            metrics.mean_l_align,
            metrics.rank_agreement
        );
        self.written.push(path);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub report_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub report: TrainReport,
    pub config_hash: String,
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    let ctx = Context::open(cfg)?;
    let groups = ctx.load_groups()?;
    let sets_path = ctx.out(PREFSETS_FILE);
    if !sets_path.is_file() {
        return Err(CliError::validation(format!(
            "{} not found; run `build-prefsets` first",
            sets_path.display()
        )));
    }
    let (header, sets) = load_preference_sets(&sets_path)?;
    check_header(
        &sets_path,
        header.as_ref(),
        PREFSET_ARTIFACT,
        &ctx.hashes.prefsets,
    )?;
    let examples: Vec<TrainExample> =
        assemble_examples(&ctx.dataset, &sets, &ctx.prompts(&groups)?);

    let ck_dir = ctx.out(CHECKPOINT_DIR);
    ensure_dir(&ck_dir)?;
    let existing = list_checkpoints(&ck_dir)?;
    let train_cfg = cfg.train_config();
    let (mut trainer, completed) = if resume {
        let Some((epoch, path)) = existing.last() else {
            return Err(CliError::validation(format!(
                "--resume given but {} holds no checkpoint",
                ck_dir.display()
            )));
        };
        let ck = Checkpoint::load(path)?;
        check_header(
            path,
            Some(&ck.header),
            CHECKPOINT_ARTIFACT,
            &ctx.hashes.train,
        )?;
        log::info!("resuming from {}", path.display());
        (
            Trainer::with_optimizer(ck.model, ck.optimizer, train_cfg),
            *epoch,
        )
    } else {
        for (_, p) in &existing {
            fs::remove_file(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?;
        }
        let model = ReferenceModel::new(vocabulary_for(&examples), cfg.model_config());
        (Trainer::new(model, train_cfg)?, 0)
    };

    let header = ArtifactHeader::new(CHECKPOINT_ARTIFACT, &ctx.hashes.train)
        .with_upstream(&ctx.hashes.prefsets);
    let log_path = ctx.out(TRAIN_LOG_FILE);
    let log_file = if resume && log_path.is_file() {
        fs::OpenOptions::new().append(true).open(&log_path)
    } else {
        fs::File::create(&log_path)
    }
    .map_err(|e| CliError::runtime(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log_file);
    if !resume || log.get_ref().metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        let log_header = ArtifactHeader::new(TRAIN_LOG_ARTIFACT, &ctx.hashes.train)
            .with_upstream(&ctx.hashes.prefsets);
        serde_json::to_writer(&mut log, &log_header)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        log.write_all(b"\n")
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let mut persist = Persist {
        dir: ck_dir,
        header: header.clone(),
        log,
        log_path: &log_path,
        written: Vec::new(),
    };
    let report = train_from(&mut trainer, &examples, completed, &mut persist)?;
    persist
        .log
        .flush()
        .map_err(|e| CliError::runtime(format!("{}: {e}", log_path.display())))?;
    log::info!("training took {:.2}s", report.wall_clock_seconds);

    let report = report.without_timing();
    let report_path = ctx.out(TRAIN_REPORT_FILE);
    let file = TrainReportFile {
        header: ArtifactHeader::new(TRAIN_REPORT_ARTIFACT, &ctx.hashes.train)
            .with_upstream(&ctx.hashes.prefsets),
        resumed_from_epoch: completed,
        report: report.clone(),
    };
    write_json(&report_path, &file)?;
    Ok(TrainSummary {
        report_path,
        checkpoints: persist.written,
        report,
        config_hash: ctx.hashes.train,
    })
}

/// Where `eval` gets the answers it scores.
#[derive(Debug, Clone, PartialEq)]
pub enum GenerationSource {
    File(PathBuf),
    /// Greedy decoding with each checkpoint's model.
    Generate,
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    /// Empty means the latest checkpoint of this run.
    pub checkpoints: Vec<PathBuf>,
    pub generations: GenerationSource,
    pub human_eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub header: ArtifactHeader,
    pub checkpoint: String,
    pub checkpoint_epoch: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub label: String,
    pub path: PathBuf,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTallyFile {
    pub pairs: Vec<PairTally>,
}

pub fn eval(cfg: &RunConfig, req: &EvalRequest) -> Result<Vec<EvalOutcome>> {
    let ctx = Context::open(cfg)?;
    let groups = ctx.load_groups()?;
    let prompts = ctx.prompts(&groups)?;

    let checkpoints = if req.checkpoints.is_empty() {
        let dir = ctx.out(CHECKPOINT_DIR);
        match list_checkpoints(&dir)?.pop() {
            Some((_, p)) => vec![p],
            None => {
                return Err(CliError::validation(format!(
                    "no checkpoint in {}; run `train` or pass --checkpoint",
                    dir.display()
                )))
            }
        }
    } else {
        req.checkpoints.clone()
    };
    for p in &checkpoints {
        if !p.is_file() {
            return Err(CliError::validation(format!(
                "checkpoint not found: {}",
                p.display()
            )));
        }
    }
    let file_generations = match &req.generations {
        GenerationSource::File(p) => Some(load_generations(p)?),
        GenerationSource::Generate => None,
    };

    let labels = unique_labels(&checkpoints);
    let eval_cfg = cfg.eval_config();
    let mut outcomes = Vec::new();
    for (path, label) in checkpoints.iter().zip(labels) {
        let ck = Checkpoint::load(path)?;
        // Checkpoints trained with other settings are fine to compare as
        // long as they learned from this run's preference data.
        if ck.header.upstream.as_deref() != Some(ctx.hashes.prefsets.as_str()) {
            return Err(CliError::validation(format!(
                "{} was trained on different preference data (upstream {}), current is {}",
                path.display(),
                ck.header.upstream.as_deref().map(short).unwrap_or("none"),
                short(&ctx.hashes.prefsets)
            )));
        }
        let dir = ctx.out(EVAL_DIR).join(&label);
        ensure_dir(&dir)?;
        let generations = match &file_generations {
            Some(g) => g.clone(),
            None => {
                let g = generate(&ck.model, &ctx.dataset, &prompts, cfg.eval.max_new_tokens);
                write_generations(&dir.join(GENERATIONS_FILE), &ctx.dataset, &g)?;
                g
            }
        };
        let report = evaluate(
            &ck.model,
            &ctx.dataset,
            &prompts,
            &generations,
            &eval_cfg,
            &[],
        )?;
        let out = dir.join(EVAL_REPORT_FILE);
        let eval_hash = ctx.hashes.eval(&ck.header.config_hash, cfg);
        write_json(
            &out,
            &EvalReportFile {
                header: ArtifactHeader::new(EVAL_REPORT_ARTIFACT, eval_hash)
                    .with_upstream(&ck.header.config_hash),
                checkpoint: path.display().to_string(),
                checkpoint_epoch: ck.epoch,
                report: report.clone(),
            },
        )?;
        outcomes.push(EvalOutcome {
            label,
            path: out,
            report,
        });
    }

    if let Some(path) = &req.human_eval {
        let tally = tally_human_eval(&load_human_eval(path)?);
        write_json(
            &ctx.out(EVAL_DIR).join(HUMAN_TALLY_FILE),
            &HumanTallyFile {
                pairs: tally.to_rows(),
            },
        )?;
    }
    Ok(outcomes)
}

fn generate(
    model: &ReferenceModel,
    dataset: &[QaPair],
    prompts: &HashMap<String, String>,
    max_tokens: usize,
) -> HashMap<String, String> {
    dataset
        .iter()
        .filter_map(|qa| {
            let prompt = prompts.get(&qa.id)?;
            let text = model.generate_greedy(prompt, max_tokens);
            // Empty decodes cannot be scored; they count as missing.
            (!text.trim().is_empty()).then(|| (qa.id.clone(), text))
        })
        .collect()
}

/// Checkpoint file stems, suffixed where two collide.
fn unique_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("checkpoint")
                .to_string();
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect()
}

/// Metric rows with one column per report.
pub fn summary_table(outcomes: &[EvalOutcome]) -> String {
    let rows: [(&str, fn(&EvalReport) -> f64); 10] = [
        ("BLEU-1", |r| r.bleu_1),
        ("BLEU-2", |r| r.bleu_2),
        ("BLEU-3", |r| r.bleu_3),
        ("BLEU-4", |r| r.bleu_4),
        ("ROUGE-1", |r| r.rouge_1),
        ("ROUGE-2", |r| r.rouge_2),
        ("ROUGE-L", |r| r.rouge_l),
        ("METEOR", |r| r.meteor),
        ("PPL", |r| r.ppl),
        ("PrefScore", |r| r.preference_score),
    ];
    let width = outcomes
        .iter()
        .map(|o| o.label.len())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut s = format!("{:<10}", "metric");
    for o in outcomes {
        s.push_str(&format!(" {:>width$}", o.label));
    }
    s.push('\n');
    for (name, f) in rows {
        s.push_str(&format!("{name:<10}"));
        for o in outcomes {
            s.push_str(&format!(" {:>width$.4}", f(&o.report)));
        }
        s.push('\n');
    }
    s.push_str(&format!("{:<10}", "samples"));
    for o in outcomes {
        s.push_str(&format!(" {:>width$}", o.report.sample_count));
    }
    s.push('\n');
    s
}

/// Writes the bundled synthetic corpus plus a config pointing at it.
pub fn synth(out: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let corpus = synthetic::corpus(seed);
    let qa = out.join("qa.jsonl");
    let kb = out.join("kb.jsonl");
    let cfg = out.join("config.toml");
    data_io::write_qa_dataset(&qa, &corpus.dataset)?;
    data_io::write_kb(&kb, &corpus.kb)?;
    let text = format!(
        "seed = {seed}\n\n[paths]\nqa = \"qa.jsonl\"\nkb = \"kb.jsonl\"\nout = \"run\"\n\n[train]\nlambda = 0.1\nepochs = 3\n"
    );
    fs::write(&cfg, text).map_err(|e| CliError::runtime(format!("{}: {e}", cfg.display())))?;
    Ok(vec![qa, kb, cfg])
}
