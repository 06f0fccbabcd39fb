//! Command-line front end: argument parsing, config resolution and the
//! subcommands. [`run_command`] is the whole program minus process exit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use inkloop_core::assets::{AssetError, PromptAssets};
use inkloop_core::backends::BackendError;
use inkloop_core::config::{build_clients, build_embedder, AppConfig, BackendKind, ConfigError};
use inkloop_core::corpus::{load_corpus, Corpus, CorpusError, EmbeddingCache};
use inkloop_core::elements::ElementError;
use inkloop_core::embedding::EmbedError;
use inkloop_core::evaluate::{
    comparison_report, group_by_label, mean_trace, render_comparison_table, render_round_table,
    round_report, to_jsonl, EvalError, EvalScore,
};
use inkloop_core::fixtures::{convergence_suite, SimStack};
use inkloop_core::manifest::{self, ManifestError, RunManifest, RunStamp};
use inkloop_core::pipeline::{
    run_pipeline, Clients, GenerationSource, PipelineErrorKind, SuggesterMode,
};

pub const ASSETS_ENV: &str = "INKLOOP_ASSETS";

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Config = 2,
    Backend = 3,
    Data = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    fn config(m: impl std::fmt::Display) -> Self {
        Self::new(Exit::Config, m.to_string())
    }

    fn data(m: impl std::fmt::Display) -> Self {
        Self::new(Exit::Data, m.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Backend(b) => b.into(),
            other => Self::config(other),
        }
    }
}

impl From<AssetError> for CliError {
    fn from(e: AssetError) -> Self {
        Self::config(e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        Self::new(Exit::Backend, e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Unreachable(_) | EmbedError::BadResponse(_) => {
                Self::new(Exit::Backend, e.to_string())
            }
            other => Self::data(other),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Embed(inner) => inner.into(),
            other => Self::data(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => Self::config(e),
            EvalError::Embed(inner) => inner.into(),
            other => Self::data(other),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Eval(inner) => inner.into(),
            other => Self::data(other),
        }
    }
}

impl From<ElementError> for CliError {
    fn from(e: ElementError) -> Self {
        match e {
            ElementError::Embed(inner) => inner.into(),
            other => Self::new(Exit::Backend, other.to_string()),
        }
    }
}

impl From<PipelineErrorKind> for CliError {
    fn from(e: PipelineErrorKind) -> Self {
        match e {
            PipelineErrorKind::Config(m) => Self::config(format!("invalid pipeline config: {m}")),
            PipelineErrorKind::Corpus(c) => c.into(),
            PipelineErrorKind::Elements(el) => el.into(),
            PipelineErrorKind::Backend(b) => b.into(),
            PipelineErrorKind::EmptyKey => Self::data(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "inkloop",
    version,
    about = "Generate, check and correct images for classical poems"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Backend family; overrides the config.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Correction round limit; overrides the config.
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    /// Layout suggester; overrides the config.
    #[arg(long, global = true, value_enum)]
    pub suggester: Option<SuggesterArg>,
    /// Generate the initial image from the poem text instead of its translation.
    #[arg(long, global = true)]
    pub from_poem: bool,
    /// Directory for manifests and reports.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Directory holding the prompt assets; the bundled copies are used otherwise.
    #[arg(long, global = true, env = ASSETS_ENV)]
    pub assets: Option<PathBuf>,
    /// Corpus file (JSON lines); overrides the config.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Sim,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuggesterArg {
    Llm,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Rounds,
    Comparison,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and cache its embeddings next to it.
    Ingest { corpus_file: PathBuf },
    /// Run retrieval, extraction, generation and the correction loop.
    Run {
        /// Poem text or corpus record id, one run each.
        #[arg(required = true)]
        queries: Vec<String>,
        /// Number of runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute scores for stored runs.
    Eval {
        /// Manifest files or directories containing them.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write the rows as JSON lines.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Per-round or per-generator tables from stored runs.
    Report {
        #[arg(value_enum)]
        kind: ReportKind,
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Simulated-backend checks.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Run the seeded end-to-end convergence suite.
    Selftest {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Diagnostics go to `err` as a single line.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    Exit::Ok as i32
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    Exit::Usage as i32
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => Exit::Ok as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {}", one_line(&e.message));
            e.exit as i32
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Ingest { corpus_file } => ingest(&cfg, &cli.global, corpus_file, out),
        Command::Run { queries, jobs } => run(&cfg, &cli.global, queries, *jobs, out),
        Command::Eval { manifests, jsonl } => eval(&cfg, manifests, jsonl.as_deref(), out),
        Command::Report {
            kind,
            manifests,
            jsonl,
        } => report(*kind, manifests, jsonl.as_deref(), out),
        Command::Sim {
            command: SimCommand::Selftest { cases, seed },
        } => selftest(&cfg, &cli.global, *cases, *seed, out),
    }
}

/// Config file (if any) with command-line overrides applied.
pub fn resolve_config(g: &GlobalArgs) -> Result<AppConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(b) = g.backend {
        cfg.backends.kind = match b {
            BackendArg::Sim => BackendKind::Sim,
            BackendArg::Remote => BackendKind::Remote,
        };
    }
    if let Some(n) = g.max_rounds {
        cfg.pipeline.max_rounds = n;
    }
    if let Some(s) = g.suggester {
        cfg.pipeline.suggester_mode = match s {
            SuggesterArg::Llm => SuggesterMode::Llm,
            SuggesterArg::Rule => SuggesterMode::RuleBased,
        };
    }
    if g.from_poem {
        cfg.pipeline.generation_source = GenerationSource::Poem;
    }
    if let Some(c) = &g.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(a) = &g.assets {
        cfg.assets_dir = Some(a.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_assets(cfg: &AppConfig) -> Result<PromptAssets, CliError> {
    let assets = match &cfg.assets_dir {
        Some(dir) => PromptAssets::load_dir(dir)?,
        None => PromptAssets::bundled(),
    };
    assets.verify()?;
    Ok(assets)
}

/// Where `ingest` stores the embedding cache for a corpus file.
pub fn cache_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".embeddings.json");
    corpus.with_file_name(name)
}

fn load_corpus_with_cache(path: &Path) -> Result<Corpus, CliError> {
    let mut corpus = load_corpus(path)?;
    let cache = cache_path(path);
    if cache.exists() {
        let text = fs::read_to_string(&cache)
            .map_err(|e| CliError::data(format!("{}: {e}", cache.display())))?;
        let parsed: EmbeddingCache = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", cache.display())))?;
        corpus.set_cache(parsed)?;
    }
    Ok(corpus)
}

fn corpus_path(cfg: &AppConfig) -> Result<&Path, CliError> {
    cfg.corpus.as_deref().ok_or_else(|| {
        CliError::config("no corpus given; pass --corpus or set `corpus` in the config")
    })
}

fn ingest(
    cfg: &AppConfig,
    _g: &GlobalArgs,
    corpus_file: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut corpus = load_corpus(corpus_file)?;
    let assets = load_assets(cfg)?;
    let clients = build_clients(cfg, &corpus, &assets)?;
    let cache = corpus.build_cache(clients.embedder.as_ref())?.clone();
    let path = cache_path(corpus_file);
    let json = serde_json::to_string(&cache).expect("cache serializes");
    fs::write(&path, json + "\n")
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let _ = writeln!(
        out,
        "{} records, embeddings ({}) cached in {}",
        corpus.len(),
        cache.provider,
        path.display()
    );
    Ok(())
}

fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Poem text for a query that names a record id, else the query itself.
fn query_text(corpus: &Corpus, query: &str) -> String {
    corpus
        .get(query)
        .map_or_else(|| query.to_string(), |r| r.poem.clone())
}

fn run_one(
    query: &str,
    corpus: &Corpus,
    clients: &Clients,
    cfg: &AppConfig,
    assets: &PromptAssets,
    out_dir: &Path,
) -> Result<(RunManifest, PathBuf), CliError> {
    let started_at = timestamp();
    let text = query_text(corpus, query);
    let output = match run_pipeline(&text, corpus, clients, &cfg.pipeline, assets) {
        Ok(o) => o,
        Err(e) => {
            let mut err = CliError::from(e.kind);
            if let Some(p) = e.partial {
                err.message.push_str(&format!(
                    " (best image so far {} after {} rounds)",
                    p.best_image.id,
                    p.history.len()
                ));
            }
            return Err(err);
        }
    };
    let stamp = RunStamp {
        run_id: uuid::Uuid::new_v4().to_string(),
        label: cfg.label(),
        started_at,
        finished_at: timestamp(),
    };
    let m = RunManifest::from_run(
        stamp,
        query,
        &output,
        &cfg.pipeline,
        &cfg.eval,
        clients.ids(),
        clients.embedder.as_ref(),
    )?;
    let path = m.write(out_dir)?;
    Ok((m, path))
}

fn run(
    cfg: &AppConfig,
    g: &GlobalArgs,
    queries: &[String],
    jobs: usize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::new(Exit::Usage, "--jobs must be at least 1"));
    }
    let corpus = load_corpus_with_cache(corpus_path(cfg)?)?;
    let assets = load_assets(cfg)?;
    let clients = build_clients(cfg, &corpus, &assets)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(RunManifest, PathBuf), CliError>> = pool.install(|| {
        queries
            .par_iter()
            .map(|q| run_one(q, &corpus, &clients, cfg, &assets, &g.out))
            .collect()
    });
    let mut first_err = None;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok((m, path)) => {
                let _ = writeln!(
                    out,
                    "{}  record={} rounds={} converged={} completeness={:.2}%->{:.2}%  {}",
                    m.run_id,
                    m.record_id,
                    m.rounds_used,
                    m.converged,
                    m.baseline.e * 100.0,
                    m.corrected.e * 100.0,
                    path.display()
                );
            }
            Err(e) => {
                let _ = writeln!(out, "failed  query={q:?}: {}", one_line(&e.message));
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn collect_manifests(paths: &[PathBuf]) -> Result<Vec<RunManifest>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        if p.is_dir() {
            all.extend(manifest::read_dir(p)?);
        } else {
            all.push(RunManifest::read(p)?);
        }
    }
    if all.is_empty() {
        return Err(CliError::data("no manifests found"));
    }
    Ok(all)
}

fn write_jsonl(path: Option<&Path>, body: String) -> Result<(), CliError> {
    if let Some(p) = path {
        fs::write(p, body).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn eval(
    cfg: &AppConfig,
    paths: &[PathBuf],
    jsonl: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let manifests = collect_manifests(paths)?;
    let provider = build_embedder(cfg)?;
    let mut runs: Vec<(String, EvalScore, EvalScore)> = Vec::new();
    for m in &manifests {
        if m.backends.embedder != provider.id() {
            return Err(CliError::config(format!(
                "run {} was scored with embedder {} but {} is configured",
                m.run_id,
                m.backends.embedder,
                provider.id()
            )));
        }
        let (before, after) = m.rescore(provider.as_ref(), &cfg.eval)?;
        let _ = writeln!(
            out,
            "{}  record={}  before: s={:.4} e={:.4} theta={:.4}  after: s={:.4} e={:.4} theta={:.4}",
            m.run_id, m.record_id, before.s, before.e, before.theta, after.s, after.e, after.theta
        );
        runs.push((m.label.clone(), before, after));
    }
    let rows = comparison_report(&group_by_label(&runs));
    let _ = write!(out, "\n{}", render_comparison_table(&rows));
    write_jsonl(jsonl, to_jsonl(&rows))
}

fn report(
    kind: ReportKind,
    paths: &[PathBuf],
    jsonl: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let manifests = collect_manifests(paths)?;
    match kind {
        ReportKind::Rounds => {
            let traces: Vec<Vec<f64>> = manifests
                .iter()
                .map(|m| m.completeness_trace.clone())
                .collect();
            let rows = round_report(&mean_trace(&traces));
            let _ = write!(out, "{}", render_round_table(&rows));
            write_jsonl(jsonl, to_jsonl(&rows))
        }
        ReportKind::Comparison => {
            let runs: Vec<(String, EvalScore, EvalScore)> = manifests
                .iter()
                .map(|m| (m.label.clone(), m.baseline, m.corrected))
                .collect();
            let rows = comparison_report(&group_by_label(&runs));
            let _ = write!(out, "{}", render_comparison_table(&rows));
            write_jsonl(jsonl, to_jsonl(&rows))
        }
    }
}

fn selftest(
    cfg: &AppConfig,
    g: &GlobalArgs,
    cases: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let assets = load_assets(cfg)?;
    let suite = convergence_suite(cases, seed);
    let mut pipeline = cfg.pipeline.clone();
    if g.suggester.is_none() {
        pipeline.suggester_mode = SuggesterMode::RuleBased;
    }
    let stack = SimStack {
        suggest: pipeline.suggest_config(),
        ..SimStack::from_cases(&suite)
    };
    let clients = stack.clients(&assets);
    let corpus = Corpus::new(suite.iter().map(|c| c.record.clone()).collect())?;
    let started = Instant::now();
    let mut failures = 0usize;
    for case in &suite {
        let res = run_pipeline(&case.record.poem, &corpus, &clients, &pipeline, &assets)
            .map_err(|e| CliError::from(e.kind))?;
        let r = &res.result;
        let monotone = r.per_round_completeness.windows(2).all(|w| w[1] >= w[0]);
        let ok = res.record.id == case.record.id
            && r.converged
            && r.per_round_completeness.last() == Some(&1.0)
            && monotone;
        if !ok {
            failures += 1;
        }
        let trace: Vec<String> = r
            .per_round_completeness
            .iter()
            .map(|c| format!("{:.2}", c))
            .collect();
        let _ = writeln!(
            out,
            "{} {}  elements={} missing={} rounds={} trace=[{}]",
            if ok { "ok  " } else { "FAIL" },
            case.record.id,
            r.key_elements.len(),
            case.missing.len(),
            r.rounds_used,
            trace.join(", ")
        );
    }
    let _ = writeln!(
        out,
        "selftest: {}/{} converged with non-decreasing completeness in {:.2?}",
        suite.len() - failures,
        suite.len(),
        started.elapsed()
    );
    if failures > 0 {
        return Err(CliError::data(format!(
            "selftest: {failures} of {} cases failed",
            suite.len()
        )));
    }
    Ok(())
}
