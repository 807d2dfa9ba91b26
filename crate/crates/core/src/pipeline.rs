//! End-to-end wiring: configuration, resource loading and the per-note
//! stages run over a worker pool.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::assertion::{classify, AssertionStatus, RuleSet};
use crate::attributes::{llm_extract, AnnotatorBackend, LlmBackend, PromptTemplates, RawAttributes, RuleBackend, WordLists};
use crate::error::{Error, Result};
use crate::integrate::{assemble, NoteAnnotations, NoteResult, DEFAULT_MISMATCH_THRESHOLD};
use crate::llm_client::{
    Completer, EndpointConfig, HttpCompleter, LlmError, RecordingCompleter, ReplayCompleter, DEFAULT_API_KEY_ENV,
};
use crate::preprocess::{chunk_note, count_tokens, restore_linebreaks, Chunk, ChunkerConfig, NormalizedNote, RawNote};
use crate::recognition::{assign_ordinals, expand_abbreviation, filter_reportable, recognize, Mention};
use crate::terminology::cache::{content_hash, read_cache, write_cache, CacheLookup};
use crate::terminology::{parse_lexicon, AbbreviationTable, ApplicabilityTable, AttributeKind, TermIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rule,
    Llm,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rule" => Ok(BackendKind::Rule),
            "llm" => Ok(BackendKind::Llm),
            "replay" => Ok(BackendKind::Replay),
            other => Err(config_err("backend", format!("unknown backend {other:?} (rule, llm or replay)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSettings {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> usize {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff() -> u64 {
    1000
}

impl EndpointSettings {
    pub fn to_endpoint(&self) -> EndpointConfig {
        EndpointConfig {
            api_key_env: self.api_key_env.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            backoff_base: Duration::from_millis(self.backoff_ms),
            ..EndpointConfig::new(&self.base_url, &self.model)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordListPaths {
    pub anatomy: Option<PathBuf>,
    pub modifiers: Option<PathBuf>,
    pub units: Option<PathBuf>,
}

/// Pipeline settings, read from a TOML file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub lexicon: PathBuf,
    pub abbreviations: Option<PathBuf>,
    /// Built-in rules are used when absent.
    pub assertion_rules: Option<PathBuf>,
    pub applicability_overrides: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendKind,
    pub endpoint: Option<EndpointSettings>,
    /// Replay source for `replay`; record target for `llm`.
    pub transcript: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub word_lists: WordListPaths,
    #[serde(default)]
    pub chunker: ChunkerConfig,
    #[serde(default = "default_threshold")]
    pub mismatch_threshold: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_MISMATCH_THRESHOLD
}
fn default_workers() -> usize {
    1
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl PipelineConfig {
    /// Config with every optional field at its default.
    pub fn with_lexicon(lexicon: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            lexicon: lexicon.into(),
            abbreviations: None,
            assertion_rules: None,
            applicability_overrides: None,
            index_cache: None,
            backend: BackendKind::Rule,
            endpoint: None,
            transcript: None,
            prompts_dir: None,
            word_lists: WordListPaths::default(),
            chunker: ChunkerConfig::default(),
            mismatch_threshold: DEFAULT_MISMATCH_THRESHOLD,
            workers: 1,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.lexicon);
        for p in [
            &mut self.abbreviations,
            &mut self.assertion_rules,
            &mut self.applicability_overrides,
            &mut self.index_cache,
            &mut self.transcript,
            &mut self.prompts_dir,
            &mut self.word_lists.anatomy,
            &mut self.word_lists.modifiers,
            &mut self.word_lists.units,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks referenced files and value ranges, naming the first bad field.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(config_err(field, format!("{} does not exist", p.display())))
            }
        };
        must_exist("lexicon", &self.lexicon)?;
        let optional = [
            ("abbreviations", &self.abbreviations),
            ("assertion_rules", &self.assertion_rules),
            ("applicability_overrides", &self.applicability_overrides),
            ("prompts_dir", &self.prompts_dir),
            ("word_lists.anatomy", &self.word_lists.anatomy),
            ("word_lists.modifiers", &self.word_lists.modifiers),
            ("word_lists.units", &self.word_lists.units),
        ];
        for (field, p) in optional {
            if let Some(p) = p {
                must_exist(field, p)?;
            }
        }
        self.chunker.validate()?;
        if !(0.0..=1.0).contains(&self.mismatch_threshold) {
            return Err(config_err("mismatch_threshold", "must be between 0 and 1"));
        }
        if self.workers == 0 {
            return Err(config_err("workers", "must be at least 1"));
        }
        match self.backend {
            BackendKind::Rule => {}
            BackendKind::Llm => {
                let ep = self
                    .endpoint
                    .as_ref()
                    .ok_or_else(|| config_err("endpoint", "backend = \"llm\" requires an [endpoint] section"))?;
                if ep.base_url.trim().is_empty() {
                    return Err(config_err("endpoint.base_url", "must not be empty"));
                }
                if ep.model.trim().is_empty() {
                    return Err(config_err("endpoint.model", "must not be empty"));
                }
                if ep.max_in_flight == 0 {
                    return Err(config_err("endpoint.max_in_flight", "must be at least 1"));
                }
            }
            BackendKind::Replay => {
                let t = self
                    .transcript
                    .as_ref()
                    .ok_or_else(|| config_err("transcript", "backend = \"replay\" requires a transcript"))?;
                must_exist("transcript", t)?;
            }
        }
        Ok(())
    }

    /// Resolved settings as `key = value` lines.
    pub fn describe(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("(none)".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        let _ = writeln!(s, "lexicon = {}", self.lexicon.display());
        let _ = writeln!(s, "abbreviations = {}", opt(&self.abbreviations));
        let _ = writeln!(
            s,
            "assertion_rules = {}",
            self.assertion_rules
                .as_ref()
                .map_or("(built-in)".to_string(), |p| p.display().to_string())
        );
        let _ = writeln!(s, "applicability_overrides = {}", opt(&self.applicability_overrides));
        let _ = writeln!(s, "index_cache = {}", opt(&self.index_cache));
        let _ = writeln!(s, "backend = {}", serde_json::to_value(self.backend).unwrap().as_str().unwrap());
        if let Some(ep) = &self.endpoint {
            let _ = writeln!(s, "endpoint.base_url = {}", ep.base_url);
            let _ = writeln!(s, "endpoint.model = {}", ep.model);
            let _ = writeln!(s, "endpoint.api_key_env = {}", ep.api_key_env);
            let _ = writeln!(s, "endpoint.max_retries = {}", ep.max_retries);
            let _ = writeln!(s, "endpoint.max_in_flight = {}", ep.max_in_flight);
        }
        let _ = writeln!(s, "transcript = {}", opt(&self.transcript));
        let _ = writeln!(s, "prompts_dir = {}", opt(&self.prompts_dir));
        let _ = writeln!(s, "chunker.max_tokens = {}", self.chunker.max_tokens);
        let _ = writeln!(s, "chunker.hard_note_limit = {}", self.chunker.hard_note_limit);
        let _ = writeln!(s, "chunker.token_scale = {}", self.chunker.token_scale);
        let _ = writeln!(s, "mismatch_threshold = {}", self.mismatch_threshold);
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }
}

/// Where a loaded index came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexSource {
    Built,
    CacheHit,
    Rebuilt(String),
}

/// Loads the lexicon into an index, reusing `cache` when its hash matches.
/// Stale or corrupt caches are rebuilt and overwritten.
pub fn load_index(lexicon: &Path, cache: Option<&Path>) -> Result<(TermIndex, IndexSource)> {
    let bytes = fs::read(lexicon).map_err(|e| Error::io(lexicon, e))?;
    let hash = content_hash(&bytes);
    let reason = match cache.map(|c| read_cache(c, &hash)) {
        Some(CacheLookup::Hit(index)) => return Ok((*index, IndexSource::CacheHit)),
        Some(CacheLookup::Missing) | None => None,
        Some(CacheLookup::Stale) => Some("lexicon changed".to_string()),
        Some(CacheLookup::Corrupt(why)) => {
            warn!(reason = %why, "index cache is corrupt; rebuilding");
            Some(format!("corrupt cache: {why}"))
        }
    };
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(lexicon.display().to_string(), 0, e.to_string()))?;
    let lexicon_data = parse_lexicon(&text, &lexicon.display().to_string())?;
    let report = &lexicon_data.report;
    if report.duplicates > 0 || report.unknown_type_count() > 0 {
        info!(
            duplicates = report.duplicates,
            unknown_types = report.unknown_type_count(),
            "lexicon loaded with skipped or collapsed rows"
        );
    }
    let index = TermIndex::build(&lexicon_data.entries);
    if let Some(c) = cache {
        write_cache(c, &hash, &index)?;
    }
    Ok((index, reason.map_or(IndexSource::Built, IndexSource::Rebuilt)))
}

/// Per-note state passed between stages; each stage fills in more fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteWork {
    pub note_id: String,
    pub raw_text: String,
    pub normalized: NormalizedNote,
    pub chunks: Vec<Chunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<Mention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<StageAnnotations>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAnnotations {
    pub statuses: Vec<AssertionStatus>,
    pub attributes: Vec<RawAttributes>,
    pub dropped_lines: usize,
    pub total_lines: usize,
}

/// Loaded resources plus the attribute backend.
pub struct Pipeline {
    pub index: TermIndex,
    pub abbreviations: AbbreviationTable,
    pub rules: RuleSet,
    pub applicability: ApplicabilityTable,
    pub chunker: ChunkerConfig,
    pub mismatch_threshold: f64,
    pub workers: usize,
    backend: Arc<dyn AnnotatorBackend>,
}

impl Pipeline {
    /// Pipeline with built-in rules, default tables and the rule backend.
    pub fn new(index: TermIndex) -> Self {
        Pipeline {
            index,
            abbreviations: AbbreviationTable::new(),
            rules: RuleSet::builtin(),
            applicability: ApplicabilityTable::default(),
            chunker: ChunkerConfig::default(),
            mismatch_threshold: DEFAULT_MISMATCH_THRESHOLD,
            workers: 1,
            backend: Arc::new(RuleBackend::default()),
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn AnnotatorBackend>) -> Self {
        self.backend = backend;
        self
    }

    /// Validates `cfg` and loads everything it references.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let (index, source) = load_index(&cfg.lexicon, cfg.index_cache.as_deref())?;
        debug!(?source, terms = index.len(), "term index ready");
        let abbreviations = match &cfg.abbreviations {
            Some(p) => AbbreviationTable::load(p)?,
            None => AbbreviationTable::new(),
        };
        let applicability = match &cfg.applicability_overrides {
            Some(p) => ApplicabilityTable::load_overrides(p)?,
            None => ApplicabilityTable::default(),
        };
        let backend = build_backend(cfg)?;
        Ok(Pipeline {
            index,
            abbreviations,
            rules: RuleSet::resolve(cfg.assertion_rules.as_deref(), true)?,
            applicability,
            chunker: cfg.chunker.clone(),
            mismatch_threshold: cfg.mismatch_threshold,
            workers: cfg.workers,
            backend,
        })
    }

    pub fn preprocess(&self, note: &RawNote) -> NoteWork {
        let tokens = count_tokens(&note.text);
        if tokens > self.chunker.hard_note_limit {
            warn!(note_id = %note.note_id, tokens, limit = self.chunker.hard_note_limit, "note exceeds hard token limit");
        }
        let normalized = restore_linebreaks(note);
        let chunks = chunk_note(&normalized, &self.chunker);
        if let Some(c) = chunks.iter().find(|c| c.oversize) {
            warn!(note_id = %note.note_id, chunk = c.chunk_index, tokens = c.token_count, "oversize chunk");
        }
        NoteWork {
            note_id: note.note_id.clone(),
            raw_text: note.text.clone(),
            normalized,
            chunks,
            mentions: None,
            annotations: None,
            error: None,
        }
    }

    pub fn recognize(&self, work: &mut NoteWork) {
        let mut mentions: Vec<Mention> = work
            .chunks
            .iter()
            .flat_map(|c| recognize(c, &work.normalized, &work.raw_text, &self.index))
            .collect();
        mentions = filter_reportable(mentions)
            .into_iter()
            .map(|m| expand_abbreviation(m, &self.abbreviations))
            .collect();
        assign_ordinals(&mut mentions);
        work.mentions = Some(mentions);
    }

    fn require_mentions<'a>(&self, work: &'a NoteWork) -> Result<&'a [Mention]> {
        work.mentions
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("note {} has not been through recognition", work.note_id)))
    }

    /// Assertion status plus attributes. Backend failures are recorded on
    /// the note; other errors propagate.
    pub fn annotate(&self, work: &mut NoteWork) -> Result<()> {
        let mentions = self.require_mentions(work)?;
        let statuses = mentions
            .iter()
            .map(|m| classify(&work.normalized.text, m.norm_start..m.norm_end, &self.rules))
            .collect::<Result<Vec<_>>>()?;
        match self.extract_attributes(&work.chunks, mentions) {
            Ok((attributes, dropped_lines, total_lines)) => {
                work.annotations = Some(StageAnnotations {
                    statuses,
                    attributes,
                    dropped_lines,
                    total_lines,
                });
                Ok(())
            }
            Err(e) if is_note_local(&e) => {
                warn!(note_id = %work.note_id, error = %e, "backend failed; note rejected");
                work.error = Some(e.to_string());
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn extract_attributes(&self, chunks: &[Chunk], mentions: &[Mention]) -> Result<(Vec<RawAttributes>, usize, usize)> {
        let mut attributes = vec![RawAttributes::default(); mentions.len()];
        let (mut dropped, mut total) = (0, 0);
        let mut offset = 0;
        for chunk in chunks {
            let count = mentions[offset..]
                .iter()
                .take_while(|m| m.chunk_index == chunk.chunk_index)
                .count();
            let local = &mentions[offset..offset + count];
            if !local.is_empty() {
                for kind in AttributeKind::ALL {
                    let got = llm_extract(chunk, local, kind, self.backend.as_ref())?;
                    dropped += got.dropped;
                    total += got.total_lines;
                    for (mi, values) in got.assigned {
                        attributes[offset + mi].set(kind, values);
                    }
                }
            }
            offset += count;
        }
        Ok((attributes, dropped, total))
    }

    pub fn integrate(&self, work: &NoteWork) -> Result<NoteResult> {
        if let Some(e) = &work.error {
            return Ok(NoteResult::failed(&work.note_id, e));
        }
        let ann = work
            .annotations
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("note {} has not been annotated", work.note_id)))?;
        let ann = NoteAnnotations {
            mentions: self.require_mentions(work)?.to_vec(),
            statuses: ann.statuses.clone(),
            attributes: ann.attributes.clone(),
            dropped_lines: ann.dropped_lines,
            total_lines: ann.total_lines,
        };
        let result = assemble(&work.note_id, &work.raw_text, &ann, &self.applicability, self.mismatch_threshold)?;
        if result.rejected {
            warn!(note_id = %result.note_id, ratio = result.mismatch_ratio(), "note rejected for mismatches");
        }
        Ok(result)
    }

    pub fn structure_note(&self, note: &RawNote) -> Result<NoteResult> {
        let mut work = self.preprocess(note);
        self.recognize(&mut work);
        self.annotate(&mut work)?;
        self.integrate(&work)
    }

    /// Runs `f` over `items` on `self.workers` threads, keeping input order.
    pub fn run_parallel<T, U, F>(&self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
        pool.install(|| items.par_iter().map(&f).collect())
    }

    /// Structures every note; results are sorted by note id.
    pub fn structure_batch(&self, notes: &[RawNote]) -> Result<Vec<NoteResult>> {
        check_unique(notes.iter().map(|n| n.note_id.as_str()))?;
        let mut results = self.run_parallel(notes, |n| self.structure_note(n))?;
        results.sort_by(|a, b| a.note_id.cmp(&b.note_id));
        Ok(results)
    }
}

/// Errors that reject one note rather than stopping the run.
fn is_note_local(e: &Error) -> bool {
    match e {
        Error::Backend(_) => true,
        Error::Llm(LlmError::Config(_)) => false,
        Error::Llm(_) => true,
        _ => false,
    }
}

pub fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Contract(format!("duplicate note_id {id:?} in input")));
        }
    }
    Ok(())
}

fn build_backend(cfg: &PipelineConfig) -> Result<Arc<dyn AnnotatorBackend>> {
    let templates = || match &cfg.prompts_dir {
        Some(dir) => PromptTemplates::load_dir(dir),
        None => Ok(PromptTemplates::default()),
    };
    Ok(match cfg.backend {
        BackendKind::Rule => Arc::new(RuleBackend::new(WordLists::load(
            cfg.word_lists.anatomy.as_deref(),
            cfg.word_lists.modifiers.as_deref(),
            cfg.word_lists.units.as_deref(),
        )?)),
        BackendKind::Replay => {
            let path = cfg.transcript.as_ref().ok_or_else(|| config_err("transcript", "required for replay"))?;
            let client: Arc<dyn Completer> = Arc::new(ReplayCompleter::load(path)?);
            Arc::new(LlmBackend::new(client, templates()?))
        }
        BackendKind::Llm => {
            let ep = cfg.endpoint.as_ref().ok_or_else(|| config_err("endpoint", "required for llm"))?;
            let http = HttpCompleter::from_env(ep.to_endpoint())
                .map_err(|e| config_err("endpoint.api_key_env", e.to_string()))?;
            let client: Arc<dyn Completer> = match &cfg.transcript {
                Some(path) => Arc::new(RecordingCompleter::new(http, path)),
                None => Arc::new(http),
            };
            Arc::new(LlmBackend::new(client, templates()?))
        }
    })
}

/// Reads JSONL of `T`, skipping blank lines; errors carry the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: std::io::Write>(w: &mut W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item).map_err(|e| Error::Output(e.into()))?;
        w.write_all(b"\n").map_err(Error::Output)?;
    }
    w.flush().map_err(Error::Output)
}

pub fn read_notes<R: BufRead>(reader: R, origin: &str) -> Result<Vec<RawNote>> {
    read_jsonl(reader, origin)
}
