//! Run configuration: a TOML file plus command-line overrides. Flags win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use ehrqa_core::corpus::{PromptAssets, Stage};
use ehrqa_core::llm::{BackendSettings, HttpSettings, RetryPolicy};
use ehrqa_core::pipeline::{AnchorMode, AnswerSource, PipelineConfig, StageSet};
use serde::Deserialize;

/// A configuration problem, located in its file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self { path: None, line: None, message: message.into() }
    }

    fn at(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { path: Some(path.to_path_buf()), line, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "config error at {}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "config error in {}: {}", p.display(), self.message),
            _ => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub stages: Option<String>,
    pub workers: Option<usize>,
    pub anchor: Option<String>,
    pub answer_source: Option<String>,
    pub prompts_dir: Option<PathBuf>,
    pub model_id: Option<String>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default)]
    pub truncation: TruncationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub mock_scorer: Option<String>,
    pub transcript: Option<PathBuf>,
    pub strict: Option<bool>,
    pub http: Option<HttpSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSection {
    pub endpoint: String,
    pub model_id: Option<String>,
    pub api_key_env: Option<String>,
    pub adapter: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub retry_attempts: Option<u32>,
    pub retry_base_delay_ms: Option<u64>,
    #[serde(default)]
    pub safety_overrides: BTreeMap<String, String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Temperatures {
    pub interpret: Option<f64>,
    pub score: Option<f64>,
    pub generate: Option<f64>,
    pub align: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    pub query_max_words: Option<usize>,
    pub answer_max_words: Option<usize>,
    pub answer_soft_cut_ratio: Option<f64>,
}

/// Flags shared by `run` and `record`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus JSON file
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Stages to run: `all` or a comma-separated list such as `1,2`
    #[arg(long)]
    pub stages: Option<String>,
    /// Evidence-scoring anchor: patient-narrative, clinician-query or interpreted-query
    #[arg(long)]
    pub anchor: Option<String>,
    /// Model backend: mock, http or replay
    #[arg(long)]
    pub backend: Option<String>,
    /// Parallel case workers
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for submissions and the run report
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Transcript file (read by replay, written by record)
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Treat replay transcript misses as errors
    #[arg(long)]
    pub strict: bool,
    /// Mock scoring rule: overlap or gold
    #[arg(long)]
    pub mock_scorer: Option<String>,
    /// Model identifier sent to the backend and used in transcript keys
    #[arg(long)]
    pub model_id: Option<String>,
    /// Stage-4 answer source: auto, generated or reference
    #[arg(long)]
    pub answer_source: Option<String>,
    /// Directory of prompt asset overrides
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

/// Everything a pipeline run needs, fully resolved.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub corpus: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub stages: StageSet,
    pub backend: String,
    pub backend_settings: BackendSettings,
    pub pipeline: PipelineConfig,
}

/// 1-based line of the first `key =` assignment in a TOML document.
fn line_of(raw: &str, key: &str) -> Option<usize> {
    raw.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses a config document. Relative paths are resolved against `base`.
pub fn parse_config(raw: &str, path: &Path) -> Result<FileConfig, ConfigError> {
    let mut cfg: FileConfig = toml::from_str(raw).map_err(|e| {
        let line = e.span().map(|s| raw[..s.start.min(raw.len())].matches('\n').count() + 1);
        ConfigError::at(path, line, e.message().to_string())
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(inner) = p.as_mut() {
            if inner.is_relative() {
                *inner = base.join(&*inner);
            }
        }
    };
    rebase(&mut cfg.corpus);
    rebase(&mut cfg.out_dir);
    rebase(&mut cfg.prompts_dir);
    rebase(&mut cfg.backend.transcript);
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(FileConfig, String), ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::at(path, None, e.to_string()))?;
    Ok((parse_config(&raw, path)?, raw))
}

/// Merges the config file (if any) with flags into [`RunSettings`].
pub fn resolve(args: &PipelineArgs) -> Result<RunSettings, ConfigError> {
    let (file, raw) = match &args.config {
        Some(p) => load_config(p)?,
        None => (FileConfig::default(), String::new()),
    };
    let located = |key: &str, msg: String| -> ConfigError {
        match &args.config {
            Some(p) => ConfigError::at(p, line_of(&raw, key), msg),
            None => ConfigError::new(msg),
        }
    };
    // A bad value supplied by flag is reported without file context.
    let pick = |flag: &Option<String>, from_file: &Option<String>| -> (Option<String>, bool) {
        match flag {
            Some(v) => (Some(v.clone()), false),
            None => (from_file.clone(), true),
        }
    };
    let err_for = |in_file: bool, key: &str, msg: String| if in_file { located(key, msg) } else { ConfigError::new(msg) };

    let corpus = args
        .corpus
        .clone()
        .or(file.corpus.clone())
        .ok_or_else(|| ConfigError::new("no corpus given (use --corpus or `corpus` in the config file)"))?;

    let (stages_s, in_file) = pick(&args.stages, &file.stages);
    let stages: StageSet = match stages_s {
        Some(s) => s.parse().map_err(|e: String| err_for(in_file, "stages", e))?,
        None => StageSet::all(),
    };

    let (anchor_s, in_file) = pick(&args.anchor, &file.anchor);
    let anchor: AnchorMode = match anchor_s {
        Some(s) => s.parse().map_err(|e: String| err_for(in_file, "anchor", e))?,
        None => AnchorMode::default(),
    };

    let (source_s, in_file) = pick(&args.answer_source, &file.answer_source);
    let answer_source: AnswerSource = match source_s {
        Some(s) => s.parse().map_err(|e: String| err_for(in_file, "answer_source", e))?,
        None => AnswerSource::default(),
    };

    let workers = args.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(err_for(args.workers.is_none(), "workers", "workers must be at least 1".into()));
    }

    let http = match &file.backend.http {
        Some(h) => Some(http_settings(h, file.model_id.as_deref()).map_err(|m| located("endpoint", m))?),
        None => None,
    };
    let model_id = args
        .model_id
        .clone()
        .or(file.model_id.clone())
        .or_else(|| http.as_ref().map(|h| h.model_id.clone()).filter(|m| !m.is_empty()))
        .unwrap_or_else(|| "mock".into());

    let backend = args.backend.clone().or(file.backend.kind.clone()).unwrap_or_else(|| "mock".into());
    let mut http = http.unwrap_or_default();
    if http.model_id.is_empty() || args.model_id.is_some() {
        http.model_id = model_id.clone();
    }
    let backend_settings = BackendSettings {
        model_id: model_id.clone(),
        http,
        transcript: args.transcript.clone().or(file.backend.transcript.clone()),
        strict_replay: args.strict || file.backend.strict.unwrap_or(false),
        mock_scorer: args.mock_scorer.clone().or(file.backend.mock_scorer.clone()).unwrap_or_else(|| "overlap".into()),
        gold_sentences: Vec::new(),
    };

    let mut pipeline = PipelineConfig::builtin(&model_id);
    pipeline.anchor = anchor;
    pipeline.answer_source = answer_source;
    pipeline.workers = workers;

    if let Some(dir) = args.prompts.clone().or(file.prompts_dir.clone()) {
        for stage in Stage::ALL {
            pipeline.setup_mut(stage).assets =
                PromptAssets::load(&dir, stage).map_err(|e| ConfigError::at(&dir, None, e.to_string()))?;
        }
    }

    let t = &file.temperatures;
    for (stage, key, value) in [
        (Stage::Interpret, "interpret", t.interpret),
        (Stage::Evidence, "score", t.score),
        (Stage::Generate, "generate", t.generate),
        (Stage::Align, "align", t.align),
    ] {
        if let Some(v) = value {
            if !(0.0..=2.0).contains(&v) {
                return Err(located(key, format!("temperature {key} = {v} is outside 0..=2")));
            }
            pipeline.setup_mut(stage).config.temperature = v;
        }
    }

    let tr = &file.truncation;
    if let Some(n) = tr.query_max_words {
        pipeline.query_policy.max_words = n;
    }
    if let Some(n) = tr.answer_max_words {
        pipeline.answer_policy.max_words = n;
    }
    if let Some(r) = tr.answer_soft_cut_ratio {
        pipeline.answer_policy.soft_cut_ratio = r;
    }
    for (policy, key) in [(&pipeline.query_policy, "query_max_words"), (&pipeline.answer_policy, "answer_max_words")] {
        if !policy.is_valid() {
            return Err(located(key, format!("invalid truncation policy {policy:?}")));
        }
    }

    Ok(RunSettings {
        corpus,
        out_dir: args.out.clone().or(file.out_dir.clone()),
        stages,
        backend,
        backend_settings,
        pipeline,
    })
}

fn http_settings(h: &HttpSection, top_model: Option<&str>) -> Result<HttpSettings, String> {
    if h.endpoint.trim().is_empty() {
        return Err("backend.http.endpoint must not be empty".into());
    }
    let defaults = HttpSettings::default();
    let retry = RetryPolicy {
        attempts: h.retry_attempts.unwrap_or(defaults.retry.attempts),
        base_delay: h.retry_base_delay_ms.map(Duration::from_millis).unwrap_or(defaults.retry.base_delay),
        factor: defaults.retry.factor,
    };
    Ok(HttpSettings {
        endpoint: h.endpoint.clone(),
        model_id: h.model_id.clone().or(top_model.map(str::to_string)).unwrap_or_default(),
        api_key_env: h.api_key_env.clone(),
        adapter: h.adapter.clone().unwrap_or(defaults.adapter),
        max_in_flight: h.max_in_flight.unwrap_or(defaults.max_in_flight),
        retry,
        timeout: h.timeout_secs.map(Duration::from_secs).unwrap_or(defaults.timeout),
        safety_overrides: h.safety_overrides.clone(),
    })
}
