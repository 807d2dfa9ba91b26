use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use genie_core::evaluate::{evaluate, load_records, Averaging, EquivalenceJudge, LlmJudge, NormalizingJudge};
use genie_core::integrate::{write_entities, write_notes, write_rejections, NoteResult};
use genie_core::llm_client::ReplayCompleter;
use genie_core::pipeline::{
    check_unique, load_index, read_jsonl, read_notes, write_jsonl, BackendKind, IndexSource, NoteWork, Pipeline,
    PipelineConfig,
};
use genie_core::terminology::AbbreviationTable;

/// Structure clinical notes into per-term JSONL records.
#[derive(Parser)]
#[command(name = "genie", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: notes JSONL in, entity JSONL out.
    Structure {
        #[command(flatten)]
        run: RunArgs,
        /// Emit one result object per note instead of one line per entity.
        #[arg(long)]
        group_by_note: bool,
        /// Where to write the rejection report (JSONL).
        #[arg(long)]
        rejections: Option<PathBuf>,
    },
    /// Score predictions against gold annotations.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Abbreviation table used for acronym matching.
        #[arg(long)]
        abbreviations: Option<PathBuf>,
        /// Average per note instead of pooling counts.
        #[arg(long = "macro")]
        macro_avg: bool,
        /// Replay transcript for the chat-model equivalence judge.
        #[arg(long)]
        judge_transcript: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compile the lexicon and write the index cache.
    BuildIndex {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the configuration and print the resolved settings.
    ValidateConfig {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Line-break restoration and chunking: notes JSONL in, work JSONL out.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Term recognition over preprocessed work records.
    Recognize {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Assertion status and attributes over recognized work records.
    Annotate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Assemble annotated work records into entity JSONL.
    Integrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        group_by_note: bool,
        #[arg(long)]
        rejections: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long, default_value = "genie.toml")]
    config: PathBuf,
    /// Attribute backend: rule, llm or replay.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    mismatch_threshold: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    assertion_rules: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input JSONL; stdin when omitted.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output JSONL; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(b) = &self.backend {
            cfg.backend = b.parse::<BackendKind>()?;
        }
        if let Some(n) = self.max_tokens {
            cfg.chunker.max_tokens = n;
        }
        if let Some(t) = self.mismatch_threshold {
            cfg.mismatch_threshold = t;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(p) = &self.assertion_rules {
            cfg.assertion_rules = Some(p.clone());
        }
        Ok(cfg)
    }

    fn pipeline(&self) -> anyhow::Result<Pipeline> {
        Ok(Pipeline::from_config(&self.load()?)?)
    }
}

fn open_input(path: Option<&Path>) -> anyhow::Result<(Box<dyn io::BufRead>, String)> {
    Ok(match path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
            (Box::new(BufReader::new(f)), p.display().to_string())
        }
        None => (Box::new(io::stdin().lock()), "<stdin>".to_string()),
    })
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_work(run: &RunArgs) -> anyhow::Result<Vec<NoteWork>> {
    let (reader, origin) = open_input(run.input.as_deref())?;
    let work: Vec<NoteWork> = read_jsonl(reader, &origin)?;
    check_unique(work.iter().map(|w| w.note_id.as_str()))?;
    Ok(work)
}

fn emit_results(
    results: &[NoteResult],
    output: Option<&Path>,
    group_by_note: bool,
    rejections: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mut out = open_output(output)?;
    if group_by_note {
        write_notes(&mut out, results)?;
    } else {
        write_entities(&mut out, results)?;
    }
    let rejected = results.iter().filter(|r| r.rejected).count();
    if let Some(p) = rejections {
        let mut w = open_output(Some(p))?;
        write_rejections(&mut w, results)?;
    }
    if rejected > 0 {
        warn!(rejected, total = results.len(), "some notes were rejected");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Structure {
            run,
            group_by_note,
            rejections,
        } => {
            let pipeline = run.common.pipeline()?;
            let (reader, origin) = open_input(run.input.as_deref())?;
            let notes = read_notes(reader, &origin)?;
            let results = pipeline.structure_batch(&notes)?;
            emit_results(&results, run.output.as_deref(), group_by_note, rejections.as_deref())
        }
        Command::Preprocess { run } => {
            let pipeline = run.common.pipeline()?;
            let (reader, origin) = open_input(run.input.as_deref())?;
            let notes = read_notes(reader, &origin)?;
            check_unique(notes.iter().map(|n| n.note_id.as_str()))?;
            let work = pipeline.run_parallel(&notes, |n| Ok(pipeline.preprocess(n)))?;
            write_jsonl(&mut open_output(run.output.as_deref())?, &work)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Recognize { run } => {
            let pipeline = run.common.pipeline()?;
            let work = read_work(&run)?;
            let work = pipeline.run_parallel(&work, |w| {
                let mut w = w.clone();
                pipeline.recognize(&mut w);
                Ok(w)
            })?;
            write_jsonl(&mut open_output(run.output.as_deref())?, &work)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Annotate { run } => {
            let pipeline = run.common.pipeline()?;
            let work = read_work(&run)?;
            let work = pipeline.run_parallel(&work, |w| {
                let mut w = w.clone();
                pipeline.annotate(&mut w)?;
                Ok(w)
            })?;
            write_jsonl(&mut open_output(run.output.as_deref())?, &work)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Integrate {
            run,
            group_by_note,
            rejections,
        } => {
            let pipeline = run.common.pipeline()?;
            let work = read_work(&run)?;
            let mut results = pipeline.run_parallel(&work, |w| pipeline.integrate(w))?;
            results.sort_by(|a, b| a.note_id.cmp(&b.note_id));
            emit_results(&results, run.output.as_deref(), group_by_note, rejections.as_deref())
        }
        Command::Evaluate {
            gold,
            pred,
            abbreviations,
            macro_avg,
            judge_transcript,
            json,
        } => {
            let gold = load_records(&gold)?;
            let pred = load_records(&pred)?;
            let table = match abbreviations {
                Some(p) => AbbreviationTable::load(p)?,
                None => AbbreviationTable::new(),
            };
            let judge: Box<dyn EquivalenceJudge> = match judge_transcript {
                Some(p) => Box::new(LlmJudge::new(std::sync::Arc::new(ReplayCompleter::load(p)?))),
                None => Box::new(NormalizingJudge),
            };
            let averaging = if macro_avg { Averaging::Macro } else { Averaging::Micro };
            let report = evaluate(&gold, &pred, &table, judge.as_ref(), averaging);
            print!("{}", report.render_table());
            if let Some(p) = json {
                std::fs::write(&p, report.to_json() + "\n").with_context(|| format!("cannot write {}", p.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildIndex { common } => {
            let cfg = common.load()?;
            let Some(cache) = &cfg.index_cache else {
                bail!("config field `index_cache` must be set to build an index");
            };
            let (index, source) = load_index(&cfg.lexicon, Some(cache))?;
            let status = match source {
                IndexSource::CacheHit => "cache hit".to_string(),
                IndexSource::Built => "built".to_string(),
                IndexSource::Rebuilt(why) => format!("rebuilt ({why})"),
            };
            println!("{status}: {} terms -> {}", index.len(), cache.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { common } => {
            let cfg = common.load()?;
            cfg.validate()?;
            print!("{}", cfg.describe());
            info!("configuration is valid");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("GENIE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
