//! The `discourse` command line. Results go to stdout as JSON (or CSV for
//! accuracy reports); failures print the error envelope to stderr and exit
//! with a code derived from the envelope's `code`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use discourse_core::config::Config;
use discourse_core::jobs::{JobDescriptor, JobStatus};
use discourse_core::metrics::Selector;
use discourse_core::pipeline::Pipeline;
use discourse_core::prompting::AnnotationTask;
use discourse_core::store::SpeechFilter;
use discourse_core::vizdata::{ChartKind, ChartOptions};
use discourse_core::{Error, ErrorEnvelope};

use crate::api::AppState;

/// Exit status for a command that finished with some items still failing.
pub const EXIT_PARTIAL: i32 = 8;

/// Maps an envelope code onto a process exit status.
pub fn exit_code(code: &str) -> i32 {
    match code {
        "not_found" => 2,
        "validation" => 3,
        "conflict" => 4,
        "finalization_incomplete" => 5,
        "schema_version" => 6,
        "provider" => 7,
        "partial" => EXIT_PARTIAL,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "discourse", version, about = "Annotate political speeches with a language model and human review")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "DISCOURSE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory; overrides `store.path` from the config.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a corpus directory (manifest.json plus speech texts).
    Ingest { dir: PathBuf },
    /// Load an exported bundle into an empty store.
    Import { dir: PathBuf },
    /// Export the whole store as a bundle directory.
    Export { dir: PathBuf },
    /// Translate one speech, or `all`.
    Translate {
        speech: String,
        #[arg(long, default_value = "identity")]
        provider: String,
    },
    /// Annotate one speech, or `all`.
    Annotate {
        speech: String,
        /// Comma-separated tasks, or `all`.
        #[arg(long, default_value = "all")]
        tasks: String,
        #[arg(long, default_value = "stub")]
        provider: String,
    },
    /// Queue, record and inspect human reviews.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Freeze the reviewed annotations of one speech, or `all`.
    Finalize { speech: String },
    /// Accuracy reports.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Aggregate metrics for a selector.
    Summary {
        #[arg(long, default_value = "all")]
        selector: String,
    },
    /// Chart data for the dashboard.
    Viz {
        kind: String,
        #[arg(long, default_value = "all")]
        selector: String,
        #[arg(long, value_enum)]
        topic_scope: Option<TopicScopeArg>,
        #[arg(long, value_enum)]
        intensity_weighting: Option<WeightingArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List stored speeches.
    List {
        #[arg(long)]
        leader: Option<String>,
        #[arg(long)]
        period: Option<String>,
    },
    /// Show a job descriptor.
    Job { id: String },
    /// Run the HTTP API.
    Serve {
        /// Address to listen on; overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Queue reviews for one speech, or `all`.
    Enqueue { speech: String },
    /// Apply a JSONL file of review decisions.
    Apply { file: PathBuf },
    /// Review progress of one speech.
    Status { speech: String },
    /// Entries awaiting a reviewer.
    Queue {
        #[arg(long)]
        reviewer: String,
        #[arg(long)]
        speech: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Per-task accuracy of the machine annotations.
    Accuracy {
        #[arg(long, default_value = "all")]
        selector: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TopicScopeArg {
    All,
    #[value(name = "agenda_only", alias = "agenda-only")]
    AgendaOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Paragraphs,
    Speeches,
}

/// What a command produced.
pub enum Output {
    Json(Value),
    Text(String),
    /// Written to a file; the summary goes to stdout.
    Written(PathBuf, Value),
    /// Finished, but some jobs left failures behind.
    Partial(Value, ErrorEnvelope),
    /// A job ended failed; its stored envelope decides the exit status.
    Failed(Value, ErrorEnvelope),
}

fn json_of<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("output serializes")
}

pub fn load_config(cli: &Cli) -> discourse_core::Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(store) = &cli.store {
        config.store.path = store.clone();
    }
    Ok(config)
}

fn speech_targets(p: &Pipeline, speech: &str) -> discourse_core::Result<Vec<String>> {
    if speech == "all" {
        let ids: Vec<String> = p.store().list_speeches(&SpeechFilter::default()).into_iter().map(|s| s.id).collect();
        if ids.is_empty() {
            return Err(Error::Validation("the store holds no speeches".into()));
        }
        Ok(ids)
    } else {
        p.store().get_speech(speech)?;
        Ok(vec![speech.to_string()])
    }
}

fn parse_selector(s: &str) -> discourse_core::Result<Selector> {
    s.parse().map_err(Error::Metrics)
}

/// Runs jobs in order; a failed job stops the run, partial jobs are
/// reported together at the end.
fn run_jobs(
    ids: Vec<String>,
    mut start: impl FnMut(&str) -> discourse_core::Result<JobDescriptor>,
) -> discourse_core::Result<Output> {
    let mut jobs = Vec::new();
    for id in ids {
        let job = start(&id)?;
        if job.status == JobStatus::Failed {
            let env = job.error.clone().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_else(|| ErrorEnvelope {
                code: "internal".into(),
                message: format!("job {} failed", job.job_id),
                details: Value::Null,
            });
            return Ok(Output::Failed(json!({ "jobs": [job] }), env));
        }
        jobs.push(job);
    }
    let partial: Vec<&JobDescriptor> = jobs.iter().filter(|j| j.status == JobStatus::Partial).collect();
    let out = json!({ "jobs": jobs });
    if partial.is_empty() {
        return Ok(Output::Json(out));
    }
    let failures: usize = partial.iter().map(|j| j.failure_manifest.len()).sum();
    let env = ErrorEnvelope {
        code: "partial".into(),
        message: format!("{failures} items failed in {} jobs; run the command again to fill the gaps", partial.len()),
        details: json!({ "jobs": partial.iter().map(|j| &j.job_id).collect::<Vec<_>>() }),
    };
    Ok(Output::Partial(out, env))
}

/// Executes a non-serve command against an opened pipeline.
pub fn execute(p: &Pipeline, command: &Command) -> discourse_core::Result<Output> {
    Ok(match command {
        Command::Ingest { dir } => Output::Json(json_of(&p.ingest_dir(dir)?)),
        Command::Import { dir } => Output::Json(json_of(&p.store().import_bundle(dir)?)),
        Command::Export { dir } => Output::Json(json_of(&p.store().export_bundle(dir)?)),
        Command::Translate { speech, provider } => {
            let ids = speech_targets(p, speech)?;
            return run_jobs(ids, |id| p.translate(id, provider));
        }
        Command::Annotate { speech, tasks, provider } => {
            let tasks = AnnotationTask::parse_list(tasks).map_err(Error::Validation)?;
            let ids = speech_targets(p, speech)?;
            return run_jobs(ids, |id| p.annotate(id, &tasks, provider));
        }
        Command::Review(ReviewCommand::Enqueue { speech }) => {
            let mut added = serde_json::Map::new();
            for id in speech_targets(p, speech)? {
                added.insert(id.clone(), json!(p.enqueue(&id)?));
            }
            Output::Json(json!({ "added": added }))
        }
        Command::Review(ReviewCommand::Apply { file }) => Output::Json(json_of(&p.apply_decisions_file(file)?)),
        Command::Review(ReviewCommand::Status { speech }) => {
            let all: Vec<Value> = speech_targets(p, speech)?
                .iter()
                .map(|id| p.review_status(id).map(|s| json_of(&s)))
                .collect::<discourse_core::Result<_>>()?;
            Output::Json(if speech == "all" { Value::Array(all) } else { all.into_iter().next().unwrap_or(Value::Null) })
        }
        Command::Review(ReviewCommand::Queue { reviewer, speech }) => {
            Output::Json(json_of(&p.review_queue(reviewer, speech.as_deref())?))
        }
        Command::Finalize { speech } => {
            let mut done = Vec::new();
            for id in speech_targets(p, speech)? {
                let set = p.finalize(&id)?;
                done.push(json!({ "speech_id": id, "version": set.version, "entries": set.entries.len() }));
            }
            Output::Json(json!({ "finalized": done }))
        }
        Command::Report(ReportCommand::Accuracy { selector, format, out }) => {
            let report = p.accuracy(&parse_selector(selector)?)?;
            let text = match format {
                Format::Csv => report.to_csv(),
                Format::Json => format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")),
            };
            match out {
                Some(path) => {
                    write_file(path, text.as_bytes())?;
                    Output::Written(path.clone(), json!({ "rows": report.rows.len() }))
                }
                None => Output::Text(text),
            }
        }
        Command::Summary { selector } => Output::Json(json_of(&p.summary(&parse_selector(selector)?)?)),
        Command::Viz { kind, selector, topic_scope, intensity_weighting, out } => {
            let kind: ChartKind = kind.parse().map_err(Error::Viz)?;
            let mut options = ChartOptions::default();
            if let Some(s) = topic_scope {
                options.topic_scope = serde_json::from_value(json!(s.to_possible_value().unwrap().get_name()))
                    .expect("topic scope names agree");
            }
            if let Some(w) = intensity_weighting {
                options.intensity_weighting = serde_json::from_value(json!(w.to_possible_value().unwrap().get_name()))
                    .expect("weighting names agree");
            }
            let chart = p.chart(kind, &parse_selector(selector)?, options)?;
            match out {
                Some(path) => {
                    let mut bytes = chart.to_json_bytes();
                    bytes.push(b'\n');
                    write_file(path, &bytes)?;
                    Output::Written(
                        path.clone(),
                        json!({ "chart_kind": chart.chart_kind, "source_version": chart.source_version }),
                    )
                }
                None => Output::Json(json_of(&chart)),
            }
        }
        Command::List { leader, period } => {
            let period = period
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(|_| Error::Validation("period must be first or second".into()))?;
            let filter = SpeechFilter { leader: leader.clone(), period, ..Default::default() };
            let items: Vec<Value> = p.store().list_speeches(&filter).iter().map(|s| json_of(&s.manifest())).collect();
            Output::Json(Value::Array(items))
        }
        Command::Job { id } => Output::Json(json_of(&p.store().get_job(id)?)),
        Command::Serve { .. } => return Err(Error::Validation("serve is not a batch command".into())),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> discourse_core::Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn print_json(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn print_envelope(env: &ErrorEnvelope) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", serde_json::to_string(env).expect("envelope serializes"));
}

fn init_tracing(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Entry point: parses nothing, runs `cli`, and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let serving = matches!(cli.command, Command::Serve { .. });
    init_tracing(if serving { "info" } else { "off" });
    let result = load_config(&cli).and_then(|config| {
        if let Command::Serve { bind } = &cli.command {
            return serve(config, bind.clone()).map(|()| Output::Json(Value::Null));
        }
        let p = Pipeline::open(config)?;
        execute(&p, &cli.command)
    });
    match result {
        Ok(Output::Json(Value::Null)) => 0,
        Ok(Output::Json(v)) => {
            print_json(&v);
            0
        }
        Ok(Output::Text(t)) => {
            print!("{t}");
            0
        }
        Ok(Output::Written(path, mut v)) => {
            v["written"] = json!(path);
            print_json(&v);
            0
        }
        Ok(Output::Partial(v, env)) => {
            print_json(&v);
            print_envelope(&env);
            EXIT_PARTIAL
        }
        Ok(Output::Failed(v, env)) => {
            print_json(&v);
            print_envelope(&env);
            exit_code(&env.code)
        }
        Err(e) => {
            let env = e.envelope();
            print_envelope(&env);
            exit_code(&env.code)
        }
    }
}

fn serve(config: Config, bind: Option<String>) -> discourse_core::Result<()> {
    let token = config.server_token().ok_or_else(|| {
        Error::Validation(format!("set {} to the API bearer token before serving", config.server.token_env))
    })?;
    let bind = bind.unwrap_or_else(|| config.server.bind.clone());
    let static_dir = config.server.static_dir.clone();
    let pipeline = Arc::new(Pipeline::open(config)?);
    let recovered = pipeline.recover_interrupted_jobs()?;
    if !recovered.is_empty() {
        tracing::warn!(jobs = ?recovered, "marked interrupted jobs as failed");
    }
    let app = crate::app(AppState::new(pipeline, Some(token)), static_dir.as_deref());

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("starting runtime", e))?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(&bind).await.map_err(|e| Error::io(format!("binding {bind}"), e))?;
        tracing::info!(addr = %bind, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io("serving", e))
    })
}
