use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use knowpat_cli::artifacts::short;
use knowpat_cli::commands::{self, EvalRequest, GenerationSource};
use knowpat_cli::config::{Overrides, RunConfig};
use knowpat_cli::{CliError, EXIT_VALIDATION};
use knowpat_core::eval::TokenizerMode;

/// Knowledgeable preference alignment pipeline.
///
/// Endpoint API keys are read from the environment variables named in the
/// config (`api_key_env`, `token_env`), never from flags.
#[derive(Debug, Parser)]
#[command(name = "knowpat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Retrieval depth per knowledge group.
    #[arg(long)]
    k: Option<usize>,
    /// Alignment loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// `whitespace` or `char`.
    #[arg(long, value_name = "MODE")]
    tokenizer_mode: Option<TokenizerMode>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            k: self.k,
            lambda: self.lambda,
            learning_rate: self.lr,
            epochs: self.epochs,
            tokenizer: self.tokenizer_mode,
        };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Retrieve K1/K2/K3 knowledge groups for every question.
    Retrieve(Common),
    /// Build style and knowledge preference sets.
    BuildPrefsets(Common),
    /// Fine-tune the reference model with the alignment objective.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint of this run.
        #[arg(long)]
        resume: bool,
    },
    /// Score generations against the golden answers.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; repeat to compare. Defaults to the
        /// latest checkpoint of this run.
        #[arg(long = "checkpoint", value_name = "PATH")]
        checkpoints: Vec<PathBuf>,
        /// JSON Lines file of `{question_id, text}` records.
        #[arg(long, value_name = "PATH", conflicts_with = "generate")]
        generations: Option<PathBuf>,
        /// Generate answers greedily with each checkpoint.
        #[arg(long)]
        generate: bool,
        /// Human win/tie/lose records to tally.
        #[arg(long, value_name = "PATH")]
        human_eval: Option<PathBuf>,
    },
    /// Write the bundled synthetic corpus and a matching config.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Retrieve(common) => {
            let s = commands::retrieve(&common.load()?)?;
            println!(
                "retrieve: {} records -> {} [config {}]",
                s.records,
                s.path.display(),
                short(&s.config_hash)
            );
        }
        Command::BuildPrefsets(common) => {
            let s = commands::build_prefsets(&common.load()?)?;
            println!(
                "build-prefsets: {} sets, {} failures -> {} [config {}]",
                s.emitted,
                s.failures,
                s.path.display(),
                short(&s.config_hash)
            );
        }
        Command::Train { common, resume } => {
            let s = commands::train(&common.load()?, resume)?;
            let r = &s.report;
            let fin = r.final_metrics();
            println!(
                "train: l_ft {:.4} -> {:.4}, rank agreement ({}) {:.3} -> {:.3}",
                r.initial.mean_l_ft,
                fin.mean_l_ft,
                r.agreement_split,
                r.initial.rank_agreement,
                fin.rank_agreement
            );
            for p in &s.checkpoints {
                println!("checkpoint: {}", p.display());
            }
            println!(
                "report: {} [config {}]",
                s.report_path.display(),
                short(&s.config_hash)
            );
        }
        Command::Eval {
            common,
            checkpoints,
            generations,
            generate,
            human_eval,
        } => {
            let generations = match (generations, generate) {
                (Some(p), false) => GenerationSource::File(p),
                (None, true) => GenerationSource::Generate,
                _ => {
                    return Err(CliError::validation(
                        "eval needs exactly one of --generations PATH or --generate",
                    ))
                }
            };
            let outcomes = commands::eval(
                &common.load()?,
                &EvalRequest {
                    checkpoints,
                    generations,
                    human_eval,
                },
            )?;
            for o in &outcomes {
                let r = &o.report;
                println!(
                    "eval {}: BLEU-1 {:.4} ROUGE-L {:.4} METEOR {:.4} PPL {:.3} ({} samples) -> {}",
                    o.label,
                    r.bleu_1,
                    r.rouge_l,
                    r.meteor,
                    r.ppl,
                    r.sample_count,
                    o.path.display()
                );
            }
            if outcomes.len() > 1 {
                print!("{}", commands::summary_table(&outcomes));
            }
        }
        Command::Synth { out, seed } => {
            for p in commands::synth(&out, seed)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("knowpat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
