//! Command-line front end: typing, evaluation, ontology validation and
//! fixture recording.
//!
//! Everything runs through [`run`], which takes its input and output streams
//! explicitly so the binary stays a thin shell.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use hypertype::alignment::{EmbeddingTable, Verbalizer};
use hypertype::backend::{
    FixtureStore, Recorder, RemoteTransport, Script, ScriptedTransport, Transport,
};
use hypertype::candidates::{default_patterns, load_patterns, GenerationSettings};
use hypertype::evaluation::{self, load_dataset, load_predictions, Prediction};
use hypertype::ontology::{load_ontology, validate_ontology};
use hypertype::resolution::{ResolutionSettings, Weights, DEFAULT_THETA, DEFAULT_W_CAND, DEFAULT_W_HEAD};
use hypertype::{Backend, CharSpan, Engine, EngineSettings, TypeOntology};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn from_core(e: hypertype::Error) -> Self {
        use hypertype::Error as E;
        match e {
            E::Backend(b) => CliError::Backend(b.to_string()),
            E::Ontology(_) | E::Config(_) => CliError::Usage(e.to_string()),
            E::Span(_) | E::Data(_) => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypertype", version, about = "Zero-shot fine-grained entity typing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Type every mention of a dataset and print one decision per line.
    Type {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset JSONL; standard input when omitted.
        input: Option<PathBuf>,
    },
    /// Score decisions against gold types.
    Eval {
        /// Dataset JSONL with gold_types.
        gold: PathBuf,
        /// Decisions JSONL as printed by `type`.
        decisions: PathBuf,
    },
    /// Check an ontology file for structural problems.
    ValidateOntology { path: PathBuf },
    /// Run the pipeline against a live backend, storing every response.
    Record {
        #[command(flatten)]
        run: RunArgs,
        /// Where responses come from.
        #[arg(long, value_enum, default_value_t = RecordSource::Remote)]
        source: RecordSource,
        /// Scripted responses, for `--source script`.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Embedding table served by the scripted source.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Fixture,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RecordSource {
    Remote,
    Script,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub verbalizer: PathBuf,
    /// Hearst patterns, one per line; built-in set when omitted.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendKind::Fixture)]
    pub backend: BackendKind,
    #[arg(long)]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub fixtures_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, default_value_t = DEFAULT_W_CAND)]
    pub w_cand: f64,
    #[arg(long, default_value_t = DEFAULT_W_HEAD)]
    pub w_head: f64,
    #[arg(long, default_value_t = hypertype::candidates::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Defaults to a strict majority of the patterns.
    #[arg(long)]
    pub min_votes: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Rank by candidate support only.
    #[arg(long)]
    pub no_nli: bool,
    #[arg(long)]
    pub no_headword: bool,
    /// Use only the first pattern, with one vote required.
    #[arg(long)]
    pub no_ensemble: bool,
}

/// Everything a run needs besides the backend.
pub struct RunConfig {
    pub ontology: TypeOntology,
    pub verbalizer: Verbalizer,
    pub settings: EngineSettings,
    pub parallelism: usize,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_config_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunArgs {
    pub fn config(&self) -> Result<RunConfig, CliError> {
        let ontology = load_ontology(&read_config_file(&self.ontology)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", self.ontology.display())))?;
        let verbalizer = Verbalizer::from_json(&read_config_file(&self.verbalizer)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", self.verbalizer.display())))?;
        verbalizer.validate(&ontology).map_err(CliError::from_core)?;

        let mut patterns = match &self.patterns {
            Some(path) => load_patterns(&read_config_file(path)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            None => default_patterns(),
        };
        let mut min_votes = self.min_votes;
        if self.no_ensemble {
            patterns.truncate(1);
            min_votes = Some(1);
        }
        if self.parallelism == 0 {
            return Err(CliError::Usage("--parallelism must be at least 1".into()));
        }
        let settings = EngineSettings {
            generation: GenerationSettings {
                patterns,
                top_k: self.top_k,
                min_votes,
                use_head_word: !self.no_headword,
            },
            resolution: ResolutionSettings {
                theta: self.theta,
                weights: Weights {
                    w_cand: self.w_cand,
                    w_head: self.w_head,
                },
                use_nli: !self.no_nli,
            },
        };
        settings.validate().map_err(CliError::from_core)?;
        Ok(RunConfig {
            ontology,
            verbalizer,
            settings,
            parallelism: self.parallelism,
        })
    }

    fn fixtures_dir(&self) -> Result<&Path, CliError> {
        self.fixtures_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("--fixtures-dir is required".into()))
    }

    fn remote(&self) -> Result<RemoteTransport, CliError> {
        let url = self
            .backend_url
            .as_deref()
            .ok_or_else(|| CliError::Usage("--backend-url is required for a remote backend".into()))?;
        RemoteTransport::new(url).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn backend(&self) -> Result<Backend, CliError> {
        match self.backend {
            BackendKind::Fixture => Ok(Backend::new(FixtureStore::new(self.fixtures_dir()?))),
            BackendKind::Remote => Ok(Backend::new(self.remote()?)),
        }
    }
}

/// Mentions of a dataset in file order.
pub fn dataset_mentions(source: &str) -> Result<Vec<(String, CharSpan)>, CliError> {
    let records = load_dataset(source).map_err(CliError::from_core)?;
    Ok(records
        .iter()
        .flat_map(|r| {
            r.mentions
                .iter()
                .map(|m| (r.sentence.clone(), CharSpan::new(m.start, m.end)))
        })
        .collect())
}

fn read_input(input: Option<&Path>, stdin: &mut dyn BufRead) -> Result<String, CliError> {
    match input {
        Some(path) => read_file(path),
        None => {
            let mut s = String::new();
            stdin
                .read_to_string(&mut s)
                .map_err(|e| CliError::Io(format!("stdin: {e}")))?;
            Ok(s)
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(format!("output: {e}"))
}

/// Types every mention and writes decisions in input order. Failed mentions
/// get one diagnostic line each; the first failure decides the error.
pub fn type_dataset(
    config: RunConfig,
    backend: Backend,
    source: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let mentions = dataset_mentions(source)?;
    let engine = Engine::new(config.ontology, &config.verbalizer, config.settings, backend)
        .map_err(CliError::from_core)?;
    let results = engine
        .type_mentions(&mentions, config.parallelism)
        .map_err(CliError::from_core)?;
    let mut first_error = None;
    for ((sentence, span), result) in mentions.iter().zip(results) {
        match result {
            Ok(decision) => writeln!(out, "{}", decision.to_json_line()).map_err(io_err)?,
            Err(e) => {
                writeln!(err, "error: mention {span} of {sentence:?}: {e}").map_err(io_err)?;
                first_error.get_or_insert(CliError::from_core(e));
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

pub fn eval_files(gold: &Path, decisions: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let records = load_dataset(&read_file(gold)?).map_err(CliError::from_core)?;
    let gold = evaluation::labeled_mentions(&records).map_err(CliError::from_core)?;
    let predictions: Vec<Prediction> =
        load_predictions(&read_file(decisions)?).map_err(CliError::from_core)?;
    let report = evaluation::evaluate(&gold, &predictions).map_err(CliError::from_core)?;
    let json = serde_json::to_string(&report).expect("report serializes");
    writeln!(out, "{json}").map_err(io_err)?;
    write!(out, "{}", report.to_table()).map_err(io_err)
}

pub fn validate_file(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let ontology = load_ontology(&read_file(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let violations = validate_ontology(&ontology);
    for v in &violations {
        writeln!(out, "violation [{}] {v}", v.rule()).map_err(io_err)?;
    }
    for a in ontology.advisories() {
        writeln!(out, "advisory {a}").map_err(io_err)?;
    }
    if violations.is_empty() {
        writeln!(out, "ok: {} types", ontology.len()).map_err(io_err)?;
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: {} structural violation(s)",
            path.display(),
            violations.len()
        )))
    }
}

fn scripted_source(script: Option<&Path>, embeddings: Option<&Path>) -> Result<ScriptedTransport, CliError> {
    let script_path =
        script.ok_or_else(|| CliError::Usage("--script is required for --source script".into()))?;
    let script: Script = serde_json::from_str(&read_config_file(script_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", script_path.display())))?;
    let table = embeddings
        .map(|p| {
            EmbeddingTable::parse(&read_config_file(p)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        })
        .transpose()?;
    Ok(ScriptedTransport::new(script, table))
}

/// Runs the dataset through a recorder, discarding the decisions.
pub fn record_dataset<T: Transport + 'static>(
    config: RunConfig,
    live: T,
    dir: &Path,
    source: &str,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let backend = Backend::new(Recorder::new(live, FixtureStore::new(dir)));
    type_dataset(config, backend, source, &mut std::io::sink(), err)
}

pub fn run(
    cli: Cli,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    match cli.command {
        Command::Type { run, input } => {
            let config = run.config()?;
            let backend = run.backend()?;
            let source = read_input(input.as_deref(), stdin)?;
            type_dataset(config, backend, &source, out, err)
        }
        Command::Eval { gold, decisions } => eval_files(&gold, &decisions, out),
        Command::ValidateOntology { path } => validate_file(&path, out),
        Command::Record {
            run,
            source,
            script,
            embeddings,
            input,
        } => {
            let config = run.config()?;
            let dir = run.fixtures_dir()?.to_path_buf();
            let data = read_input(input.as_deref(), stdin)?;
            match source {
                RecordSource::Remote => record_dataset(config, run.remote()?, &dir, &data, err),
                RecordSource::Script => {
                    let live = scripted_source(script.as_deref(), embeddings.as_deref())?;
                    record_dataset(config, live, &dir, &data, err)
                }
            }
        }
    }
}
