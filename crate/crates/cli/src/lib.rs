//! Command-line front end: `run`, `record`, `eval` and `validate`.
//!
//! Each command writes its report to the given stdout handle and returns a
//! process exit code. Errors that stop a command before it produces a report
//! come back as `Err`.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ehrqa_core::corpus::{load_corpus, CaseRecord, Stage, Submission};
use ehrqa_core::llm::{BackendRegistry, ChatBackend, RecordingBackend};
use ehrqa_core::metrics::{
    alignment_report, evidence_report, read_sidecar, text_report, MetricReport, MetricsError, TextItem, TextTask,
};
use ehrqa_core::pipeline::{run_pipeline, RunReport};

pub use config::{resolve, ConfigError, PipelineArgs, RunSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "ehrqa", version, about = "Grounded question answering over clinical notes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run pipeline stages over a corpus and write submission files
    Run(RunArgs),
    /// Run the pipeline against a live backend while writing a replay transcript
    Record(RunArgs),
    /// Score a submission file against the corpus gold annotations
    Eval(EvalArgs),
    /// Schema-check a submission file
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Submission file to score
    #[arg(long)]
    pub pred: PathBuf,
    /// Corpus file holding the gold annotations
    #[arg(long)]
    pub gold: PathBuf,
    /// Stage number of the submission; detected from its fields when omitted
    #[arg(long)]
    pub stage: Option<u8>,
    /// JSON map of externally computed metrics, merged for overall scores
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Report format on stdout
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Also write the JSON report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Submission file to check
    pub file: PathBuf,
    /// Stage number of the submission; detected from its fields when omitted
    #[arg(long)]
    pub stage: Option<u8>,
    /// Also check case ids and sentence indices against this corpus
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Record(a) => cmd_record(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Validate(a) => cmd_validate(a, stdout),
    }
}

fn load_run_inputs(args: &PipelineArgs) -> Result<(RunSettings, Vec<CaseRecord>)> {
    let mut settings = resolve(args)?;
    let corpus = load_corpus(&settings.corpus).with_context(|| format!("loading corpus {}", settings.corpus.display()))?;
    if settings.backend_settings.mock_scorer == "gold" {
        settings.backend_settings.gold_sentences = gold_sentences(&corpus);
    }
    Ok((settings, corpus))
}

/// Texts of every gold-essential sentence in the corpus.
fn gold_sentences(corpus: &[CaseRecord]) -> Vec<String> {
    corpus
        .iter()
        .filter_map(|c| c.gold.as_ref().map(|g| (c, g)))
        .flat_map(|(c, g)| g.essential.iter().filter_map(|&i| c.sentence(i)).map(|s| s.text.clone()))
        .collect()
}

fn print_json<T: serde::Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

/// Logs problems and decides the exit code of a finished run.
fn finish_run(report: &RunReport, corpus: &[CaseRecord], strict: bool) -> i32 {
    let mut code = EXIT_OK;
    for outcome in report.outcomes.iter().filter(|o| o.error.is_some()) {
        tracing::error!(case_id = %outcome.case_id, error = outcome.error.as_deref().unwrap_or(""), "case failed");
        code = EXIT_FAILURE;
    }
    for sub in &report.submissions {
        if let Err(e) = sub.validate_against(corpus) {
            tracing::error!(error = %e, "output failed schema validation");
            code = EXIT_FAILURE;
        }
    }
    if !report.missing_transcript_keys.is_empty() {
        let keys = report.missing_transcript_keys.join(", ");
        if strict {
            tracing::error!(keys = %keys, "transcript has no entry for these requests");
            code = EXIT_FAILURE;
        } else {
            tracing::warn!(keys = %keys, "transcript misses answered by the mock backend");
        }
    }
    tracing::info!(
        cases = report.cases,
        failed = report.failed_cases.len(),
        fallbacks = report.fallbacks,
        tiers = ?report.tiers,
        "run finished"
    );
    code
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (settings, corpus) = load_run_inputs(&args.pipeline)?;
    let backend = BackendRegistry::with_builtins().build(&settings.backend, &settings.backend_settings)?;
    tracing::info!(backend = backend.name(), cases = corpus.len(), "starting run");
    let report = run_pipeline(&corpus, &settings.stages, &settings.pipeline, backend.as_ref(), settings.out_dir.as_deref())?;
    print_json(stdout, &report)?;
    let strict = settings.backend == "replay" && settings.backend_settings.strict_replay;
    Ok(finish_run(&report, &corpus, strict))
}

pub fn cmd_record(args: &RunArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut pipeline_args = args.pipeline.clone();
    pipeline_args.backend = Some(pipeline_args.backend.clone().unwrap_or_else(|| "http".into()));
    let (settings, corpus) = load_run_inputs(&pipeline_args)?;
    if settings.backend == "replay" {
        bail!(ConfigError { path: None, line: None, message: "record needs a live backend, not replay".into() });
    }
    let transcript = settings.backend_settings.transcript.clone().ok_or_else(|| ConfigError {
        path: None,
        line: None,
        message: "record needs a transcript path (--transcript or backend.transcript)".into(),
    })?;
    let inner: Arc<dyn ChatBackend> = BackendRegistry::with_builtins().build(&settings.backend, &settings.backend_settings)?;
    let recorder = RecordingBackend::new(inner, &transcript)?;
    tracing::info!(backend = settings.backend, transcript = %transcript.display(), "recording");
    let report = run_pipeline(&corpus, &settings.stages, &settings.pipeline, &recorder, settings.out_dir.as_deref())?;
    print_json(stdout, &report)?;
    let mut code = finish_run(&report, &corpus, false);
    if recorder.unrecorded() > 0 {
        tracing::error!(
            requests = recorder.unrecorded(),
            "transport errors left requests unrecorded; the transcript is partial"
        );
        code = EXIT_FAILURE;
    }
    Ok(code)
}

fn submission_stage(explicit: Option<u8>, raw: &str, path: &Path) -> Result<Stage> {
    match explicit {
        Some(n) => Stage::from_number(n).with_context(|| format!("stage {n} is not in 1..=4")),
        None => Submission::detect_stage(raw)?
            .with_context(|| format!("cannot tell the stage of {}; pass --stage", path.display())),
    }
}

fn read_pred(path: &Path, stage: Option<u8>) -> Result<Submission> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stage = submission_stage(stage, &raw, path)?;
    let sub = Submission::from_json(stage, &raw)?;
    sub.validate()?;
    Ok(sub)
}

fn check_gold<T>(preds: &BTreeMap<String, T>, gold: &BTreeMap<String, impl Sized>) -> Result<(), MetricsError> {
    match preds.keys().find(|id| !gold.contains_key(*id)) {
        Some(id) => Err(MetricsError::MissingGold(id.clone())),
        None => Ok(()),
    }
}

/// Scores a parsed submission against the corpus gold annotations.
pub fn evaluate(sub: &Submission, corpus: &[CaseRecord], sidecar: &BTreeMap<String, f64>) -> Result<MetricReport> {
    let report = match sub {
        Submission::Evidence(entries) => {
            let preds: BTreeMap<String, BTreeSet<usize>> =
                entries.iter().map(|e| (e.case_id.clone(), e.evidence.iter().copied().collect())).collect();
            let gold = corpus.iter().filter_map(|c| c.gold.clone().map(|g| (c.case_id.clone(), g))).collect();
            evidence_report(&preds, &gold)?
        }
        Submission::Alignments(entries) => {
            let preds = entries.iter().map(|e| (e.case_id.clone(), e.alignment.clone())).collect();
            let gold = corpus
                .iter()
                .filter_map(|c| {
                    let links = c.gold.as_ref()?.reference_alignment.clone()?;
                    Some((c.case_id.clone(), links))
                })
                .collect();
            alignment_report(&preds, &gold)?
        }
        Submission::Queries(entries) => {
            let preds: BTreeMap<String, String> = entries.iter().map(|e| (e.case_id.clone(), e.query.clone())).collect();
            let gold: BTreeMap<String, (String, String)> = corpus
                .iter()
                .filter_map(|c| {
                    let r = c.gold.as_ref()?.reference_query.clone()?;
                    Some((c.case_id.clone(), (c.patient_question.clone(), r)))
                })
                .collect();
            text_eval(TextTask::Interpret, &preds, &gold, sidecar)?
        }
        Submission::Answers(entries) => {
            let preds: BTreeMap<String, String> = entries.iter().map(|e| (e.case_id.clone(), e.answer.clone())).collect();
            let gold: BTreeMap<String, (String, String)> = corpus
                .iter()
                .filter_map(|c| {
                    let r = c.gold.as_ref()?.reference_answer.clone()?;
                    Some((c.case_id.clone(), (c.note_text(), r)))
                })
                .collect();
            text_eval(TextTask::Generate, &preds, &gold, sidecar)?
        }
    };
    Ok(report)
}

/// `gold` maps case id to (source, reference). Unpredicted cases score an empty candidate.
fn text_eval(
    task: TextTask,
    preds: &BTreeMap<String, String>,
    gold: &BTreeMap<String, (String, String)>,
    sidecar: &BTreeMap<String, f64>,
) -> Result<MetricReport, MetricsError> {
    check_gold(preds, gold)?;
    let items: Vec<TextItem<'_>> = gold
        .iter()
        .map(|(id, (source, reference))| TextItem {
            case_id: id,
            source,
            candidate: preds.get(id).map(String::as_str).unwrap_or(""),
            reference,
        })
        .collect();
    text_report(task, &items, sidecar)
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<i32> {
    let corpus = load_corpus(&args.gold).with_context(|| format!("loading gold corpus {}", args.gold.display()))?;
    let sub = read_pred(&args.pred, args.stage)?;
    let sidecar = match &args.sidecar {
        Some(p) => read_sidecar(p)?,
        None => BTreeMap::new(),
    };
    if !sidecar.is_empty() && matches!(sub, Submission::Evidence(_) | Submission::Alignments(_)) {
        tracing::warn!("sidecar metrics are ignored for evidence and alignment scoring");
    }
    let report = evaluate(&sub, &corpus, &sidecar)?;
    if let Some(path) = &args.out {
        let mut body = serde_json::to_string_pretty(&report)?;
        body.push('\n');
        std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    match args.format {
        ReportFormat::Json => print_json(stdout, &report)?,
        ReportFormat::Table => write!(stdout, "{}", report.to_table())?,
    }
    tracing::info!(stage = sub.stage().number(), cases = report.per_case.len(), "evaluation finished");
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &ValidateArgs, stdout: &mut dyn Write) -> Result<i32> {
    let sub = read_pred(&args.file, args.stage)?;
    if let Some(corpus_path) = &args.corpus {
        let corpus = load_corpus(corpus_path).with_context(|| format!("loading corpus {}", corpus_path.display()))?;
        sub.validate_against(&corpus)?;
    }
    writeln!(stdout, "ok: {} submission with {} entries", sub.stage(), sub.len())?;
    Ok(EXIT_OK)
}
