use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdst_core::corpus::{self, Corpus, PredictionSet};
use sdst_core::dst_metrics::{compare, evaluate, MetricReport};
use sdst_core::entity_corrector::{
    correct_corpus, default_grid, detect_corpus_entities, replacement_log_csv, split_by_speaker, tune_threshold,
    AgentScope, CorrectionConfig, Gazetteer,
};
use sdst_core::error_simulator::{
    augment_corpus, augment_from_transcripts, edit_log_csv, estimate_error_matrix, Augmentation, EditCount,
    ErrorMatrix, InjectionConfig, OpKind,
};
use sdst_core::error_taxonomy::{build_context_ablation, similarity_distribution, taxonomy_report};
use sdst_core::normalizer::{normalize_text, RuleSet};
use sdst_core::report::markdown_summary;
use sdst_core::state_codec::{model_inputs, model_inputs_to_jsonl, InputBudget, TextSource};
use sdst_core::{Error, Result};

/// Evaluation and transcript tooling for cascade spoken dialogue state tracking.
#[derive(Debug, Parser)]
#[command(name = "sdst", version)]
struct Cli {
    /// Directory all output files are written to.
    #[arg(long, global = true, env = "SDST_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus against its schema and write it back in canonical form.
    Ingest {
        #[command(flatten)]
        data: CorpusArgs,
        /// ASR transcripts to attach while ingesting.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Attach ASR hypotheses to user turns.
    AttachHyp {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        transcripts: PathBuf,
    },
    /// Write tracker input strings for every user turn.
    SerializeInputs {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long, value_enum, default_value_t = Source::Hyp)]
        source: Source,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Score predictions against the gold states.
    Evaluate {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Predictions to report deltas against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Normalize user transcripts into the working text.
    Normalize {
        #[command(flatten)]
        data: CorpusArgs,
        /// Rule set JSON; the bundled rules are used when absent.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Source::Hyp)]
        source: Source,
    },
    /// Replace misrecognized user entities with close agent entities.
    CorrectEntities {
        #[command(flatten)]
        data: CorpusArgs,
        #[command(flatten)]
        entities: EntityArgs,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
    },
    /// Sweep the correction threshold and report mean corrected CER.
    TuneThreshold {
        #[command(flatten)]
        data: CorpusArgs,
        #[command(flatten)]
        entities: EntityArgs,
        /// Comma-separated thresholds (default 0, 0.05, ..., 0.5).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Estimate a character error matrix from gold and hypothesis texts.
    EstimateMatrix {
        #[command(flatten)]
        data: CorpusArgs,
    },
    /// Inject character errors into non-categorical value spans.
    Augment {
        #[command(flatten)]
        data: CorpusArgs,
        /// Error matrix JSON from estimate-matrix.
        #[arg(long, required_unless_present = "from_file", conflicts_with = "from_file")]
        matrix: Option<PathBuf>,
        /// Take noisy texts from a transcript file instead of sampling.
        #[arg(long)]
        from_file: Option<PathBuf>,
        #[arg(long, required_unless_present = "from_file")]
        seed: Option<u64>,
        /// Mean edits per span.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Exact edit count per span; overrides --lambda.
        #[arg(long)]
        edits: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = ["substitute".to_string(), "delete".to_string(), "insert".to_string()])]
        ops: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[arg(long)]
        final_turn_only: bool,
    },
    /// Categorize non-categorical value errors.
    Categorize {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = Source::Hyp)]
        source: Source,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Histogram of context similarity for values missing from the context.
    SimilarityHist {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = Source::Hyp)]
        source: Source,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
    },
    /// Write paired all-hypothesis and oracle-context tracker inputs.
    ContextAblation {
        #[command(flatten)]
        data: CorpusArgs,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Markdown summary of one or more prediction files.
    Report {
        #[command(flatten)]
        data: CorpusArgs,
        /// Prediction files; the first is the baseline and is categorized.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Source::Hyp)]
        source: Source,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
    },
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        corpus::ingest_corpus(&self.corpus, &self.schema)
    }
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Maximum tracker input length in characters.
    #[arg(long, default_value_t = 3000)]
    max_chars: usize,
    /// Append the agent reply that follows the current user turn.
    #[arg(long)]
    include_following_agent: bool,
}

impl BudgetArgs {
    fn budget(&self) -> Result<InputBudget> {
        let mut budget = InputBudget::new(self.max_chars)?;
        budget.include_following_agent = self.include_following_agent;
        Ok(budget)
    }
}

#[derive(Debug, Args)]
struct EntityArgs {
    #[command(flatten)]
    source: EntitySource,
    /// Which agent turns may supply replacements.
    #[arg(long, value_enum, default_value_t = Scope::Previous)]
    scope: Scope,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct EntitySource {
    /// Entity list used to tag both user and agent turns.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// Pre-tagged entity spans (JSONL).
    #[arg(long)]
    spans: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Gold,
    Hyp,
    Working,
    OracleContext,
}

impl From<Source> for TextSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Gold => TextSource::Gold,
            Source::Hyp => TextSource::Hyp,
            Source::Working => TextSource::Working,
            Source::OracleContext => TextSource::OracleContext,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    Previous,
    WholeDialogue,
}

impl From<Scope> for AgentScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Previous => AgentScope::Previous,
            Scope::WholeDialogue => AgentScope::WholeDialogue,
        }
    }
}

/// Files produced by a command, written only after everything succeeded.
struct Outputs(Vec<(String, String)>);

impl Outputs {
    fn new() -> Self {
        Outputs(Vec::new())
    }

    fn add(&mut self, name: impl Into<String>, content: impl Into<String>) {
        self.0.push((name.into(), content.into()));
    }

    fn write(self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, content) in self.0 {
            let path = dir.join(&name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn entity_spans(corpus: &Corpus, args: &EntityArgs) -> Result<(Vec<corpus::EntitySpan>, Vec<corpus::EntitySpan>)> {
    match (&args.source.gazetteer, &args.source.spans) {
        (Some(path), _) => Ok(detect_corpus_entities(corpus, &Gazetteer::load(path)?)),
        (None, Some(path)) => split_by_speaker(corpus, corpus::read_entity_spans(path, corpus)?),
        (None, None) => unreachable!("clap requires one entity source"),
    }
}

fn load_predictions(path: &Path, corpus: &Corpus) -> Result<PredictionSet> {
    let preds = corpus::load_predictions(path, corpus)?;
    for w in preds.warnings() {
        eprintln!("warning: {}:{}: {}", path.display(), w.line, w.message);
    }
    Ok(preds)
}

fn augmentation_outputs(out: &mut Outputs, aug: &Augmentation) -> Result<()> {
    out.add("corpus.jsonl", aug.corpus.to_jsonl());
    out.add("edits.csv", edit_log_csv(&aug.edits)?);
    out.add("augment_stats.json", serde_json_string(&aug.stats));
    Ok(())
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn run(cli: Cli) -> Result<()> {
    let mut out = Outputs::new();
    match cli.command {
        Command::Ingest { data, transcripts } => {
            let mut corpus = data.load()?;
            if let Some(path) = transcripts {
                corpus::attach_hypotheses(&mut corpus, path)?;
            }
            println!("{} dialogues, {} user turns", corpus.len(), corpus.user_turn_count());
            out.add("corpus.jsonl", corpus.to_jsonl());
        }
        Command::AttachHyp { data, transcripts } => {
            let mut corpus = data.load()?;
            let n = corpus::attach_hypotheses(&mut corpus, transcripts)?;
            println!("attached {n} hypotheses");
            out.add("corpus.jsonl", corpus.to_jsonl());
        }
        Command::SerializeInputs { data, source, budget } => {
            let corpus = data.load()?;
            let source = TextSource::from(source);
            let inputs = model_inputs(&corpus, source, &budget.budget()?)?;
            out.add(format!("inputs.{source}.jsonl"), model_inputs_to_jsonl(&inputs));
        }
        Command::Evaluate {
            data,
            predictions,
            baseline,
        } => {
            let corpus = data.load()?;
            let preds = load_predictions(&predictions, &corpus)?;
            let base = baseline.map(|b| load_predictions(&b, &corpus)).transpose()?;
            let report = evaluate(&preds, &corpus);
            println!("JGA {:.4}  STA {:.4}", report.jga, report.sta);
            out.add("metrics.json", report.to_json());
            out.add("per_slot.csv", report.per_slot_csv(corpus.schema())?);
            if let Some(base) = base {
                let delta = compare(&evaluate(&base, &corpus), &report);
                out.add("delta.json", serde_json_string(&delta));
            }
        }
        Command::Normalize { data, rules, source } => {
            let mut corpus = data.load()?;
            let rules = match rules {
                Some(path) => RuleSet::load(path)?,
                None => RuleSet::default(),
            };
            let source = TextSource::from(source);
            let texts: Vec<String> = corpus
                .user_turns()
                .map(|t| {
                    let text = match source {
                        TextSource::Gold => Some(&t.turn.gold_text),
                        TextSource::Working => t.turn.working_text.as_ref(),
                        TextSource::Hyp | TextSource::OracleContext => t.turn.hyp_text.as_ref(),
                    };
                    text.map(|s| normalize_text(s, &rules)).ok_or_else(|| Error::MissingVariant {
                        dialogue: t.dialogue.id.clone(),
                        turn: t.index,
                        variant: source.as_str(),
                    })
                })
                .collect::<Result<_>>()?;
            let mut texts = texts.into_iter();
            corpus.map_working_text(|_, _, _| texts.next());
            out.add("corpus.jsonl", corpus.to_jsonl());
        }
        Command::CorrectEntities {
            data,
            entities,
            threshold,
        } => {
            let corpus = data.load()?;
            let (user, agent) = entity_spans(&corpus, &entities)?;
            let config = CorrectionConfig::new(threshold, entities.scope.into())?;
            let (corrected, log) = correct_corpus(&corpus, &user, &agent, &config)?;
            println!("{} replacements", log.len());
            out.add("corpus.jsonl", corrected.to_jsonl());
            out.add("replacements.csv", replacement_log_csv(&log)?);
        }
        Command::TuneThreshold { data, entities, grid } => {
            let corpus = data.load()?;
            let (user, agent) = entity_spans(&corpus, &entities)?;
            let grid = if grid.is_empty() { default_grid() } else { grid };
            let curve = tune_threshold(&corpus, &user, &agent, &grid, entities.scope.into())?;
            println!("best threshold {}", curve.best);
            out.add("threshold.csv", curve.to_csv()?);
            out.add("threshold.json", serde_json_string(&curve));
        }
        Command::EstimateMatrix { data } => {
            let corpus = data.load()?;
            let pairs = corpus
                .user_turns()
                .map(|t| {
                    let hyp = t.turn.hyp_text.clone().ok_or_else(|| Error::MissingVariant {
                        dialogue: t.dialogue.id.clone(),
                        turn: t.index,
                        variant: "hyp",
                    })?;
                    Ok((t.turn.gold_text.clone(), hyp))
                })
                .collect::<Result<Vec<_>>>()?;
            out.add("matrix.json", estimate_error_matrix(&pairs)?.to_json_string());
        }
        Command::Augment {
            data,
            matrix,
            from_file,
            seed,
            lambda,
            edits,
            ops,
            smoothing,
            final_turn_only,
        } => {
            let corpus = data.load()?;
            let aug = match (from_file, matrix, seed) {
                (Some(path), _, _) => augment_from_transcripts(&corpus, &corpus::read_transcripts(path)?)?,
                (None, Some(matrix), Some(seed)) => {
                    let matrix = ErrorMatrix::load(matrix)?;
                    let config = InjectionConfig {
                        edits: edits.map_or(EditCount::Poisson(lambda), EditCount::Fixed),
                        allowed: ops.iter().map(|o| o.parse::<OpKind>()).collect::<Result<_>>()?,
                        smoothing,
                        final_turn_only,
                        ..InjectionConfig::new(seed)
                    };
                    augment_corpus(&corpus, &matrix, &config)?
                }
                _ => unreachable!("clap requires --matrix and --seed without --from-file"),
            };
            let s = &aug.stats;
            println!(
                "{} of {} user turns changed, {} values targeted, {} skipped",
                s.corrupted_turns,
                s.user_turns,
                s.targeted_values,
                s.skipped_missing + s.skipped_overlap
            );
            augmentation_outputs(&mut out, &aug)?;
        }
        Command::Categorize {
            data,
            predictions,
            source,
            budget,
        } => {
            let corpus = data.load()?;
            let preds = load_predictions(&predictions, &corpus)?;
            let report = taxonomy_report(&preds, &corpus, source.into(), &budget.budget()?)?;
            out.add("categories.csv", report.counts_csv()?);
            out.add("categories.json", report.to_json());
        }
        Command::SimilarityHist {
            data,
            predictions,
            source,
            budget,
            bin_width,
        } => {
            let corpus = data.load()?;
            let preds = load_predictions(&predictions, &corpus)?;
            let report = taxonomy_report(&preds, &corpus, source.into(), &budget.budget()?)?;
            let hist = similarity_distribution(&report, bin_width)?;
            out.add("similarity_bins.csv", hist.bins_csv()?);
            out.add("similarity_rows.csv", hist.rows_csv()?);
        }
        Command::ContextAblation { data, budget } => {
            let corpus = data.load()?;
            let (a, b) = build_context_ablation(&corpus, &budget.budget()?)?;
            out.add("inputs.condA.jsonl", model_inputs_to_jsonl(&a));
            out.add("inputs.condB.jsonl", model_inputs_to_jsonl(&b));
        }
        Command::Report {
            data,
            predictions,
            source,
            budget,
            bin_width,
        } => {
            let corpus = data.load()?;
            let sets = predictions
                .iter()
                .map(|p| load_predictions(p, &corpus))
                .collect::<Result<Vec<_>>>()?;
            let reports: Vec<MetricReport> = sets.iter().map(|p| evaluate(p, &corpus)).collect();
            let taxonomy = taxonomy_report(&sets[0], &corpus, source.into(), &budget.budget()?)?;
            let hist = similarity_distribution(&taxonomy, bin_width)?;
            out.add(
                "report.md",
                markdown_summary(corpus.schema(), &reports, Some(&taxonomy), Some(&hist)),
            );
        }
    }
    out.write(&cli.out_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
