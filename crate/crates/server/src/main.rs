use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use dsrag_core::engine::{Engine, EngineConfig, EngineError};
use dsrag_core::eval::load_dataset;
use dsrag_core::gateway::FaultPoint;
use dsrag_core::retriever::RetrievalMode;

const DEFAULT_CONFIG: &str = "dsrag.toml";

#[derive(Parser)]
#[command(name = "dsrag", version, about = "Build, query and evaluate a concept/instance knowledge graph over technical documents")]
struct Cli {
    /// Engine config file. Defaults to ./dsrag.toml, or built-in defaults
    /// when that file does not exist.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Make calls at this point fail (role name, `embed` or `rerank`).
    /// Repeatable. For testing degradation paths.
    #[arg(long = "fault", global = true, value_name = "POINT")]
    faults: Vec<FaultPoint>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add Markdown or JSON documents (a file or a directory) to the corpus.
    Ingest { path: PathBuf },
    /// Build the concept and instance graphs.
    BuildGraph,
    /// Embed all chunks into the vector index.
    Index,
    /// Answer a question.
    Query {
        question: String,
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        show_trace: bool,
        #[arg(long, default_value = "full")]
        mode: RetrievalMode,
    },
    /// Score a JSONL question set under one or more retrieval modes.
    Eval {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "flat,concept_only,full")]
        modes: Vec<RetrievalMode>,
        /// Write `<PREFIX>.json` and `<PREFIX>.md`.
        #[arg(long, value_name = "PREFIX")]
        out: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Show stage states and artifact counts.
    Status,
    /// Print the default config.
    DefaultConfig,
}

fn emit(text: &str) {
    // a closed stdout (e.g. piped into `head`) is not an error
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(v: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("output serializes")));
}

fn open(cli: &Cli) -> Result<Engine, EngineError> {
    match &cli.config {
        Some(p) => Engine::from_config_file(p, &cli.faults),
        None if Path::new(DEFAULT_CONFIG).exists() => Engine::from_config_file(Path::new(DEFAULT_CONFIG), &cli.faults),
        None => {
            let mut cfg = EngineConfig::default();
            cfg.provider.fault_points.extend(cli.faults.iter().copied());
            Engine::open(cfg, ".")
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), EngineError> {
    dsrag_core::store::write_atomic(path, text.as_bytes()).map_err(|e| EngineError::Storage(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, EngineError> {
    if let Command::DefaultConfig = cli.command {
        emit(&EngineConfig::default().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let engine = open(&cli)?;
    match cli.command {
        Command::Ingest { path } => print_json(&engine.ingest_path(&path)?),
        Command::BuildGraph => print_json(&engine.build_graph()?),
        Command::Index => print_json(&engine.build_index()?),
        Command::Status => print_json(&engine.status()?),
        Command::Query {
            question,
            session,
            show_trace,
            mode,
        } => {
            let out = engine.query(&question, session.as_deref(), mode)?;
            let resp = out.response(show_trace);
            print_json(&resp);
            if resp.failed {
                let err = EngineError::Provider(resp.answer);
                eprintln!("error: {}", serde_json::to_string(&err.body()).expect("error serializes"));
                return Ok(ExitCode::from(err.exit_code() as u8));
            }
        }
        Command::Eval { dataset, modes, out } => {
            let samples = load_dataset(&dataset)?;
            let report = engine.eval(&samples, &modes)?;
            if let Some(prefix) = out {
                let mut json = prefix.clone().into_os_string();
                json.push(".json");
                let mut md = prefix.into_os_string();
                md.push(".md");
                write_file(Path::new(&json), &report.to_json())?;
                write_file(Path::new(&md), &report.to_markdown())?;
            }
            emit(&report.to_markdown());
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| engine.config().server.bind.clone());
            let token = match &engine.config().server.bearer_token_env {
                Some(var) => Some(std::env::var(var).map_err(|_| EngineError::Config(format!("bearer token variable {var} is not set")))?),
                None => None,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| EngineError::Storage(e.to_string()))?;
            rt.block_on(dsrag_server::serve(Arc::new(engine), &bind, token))
                .map_err(|e| EngineError::Config(format!("cannot serve on {bind}: {e}")))?;
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", serde_json::to_string(&e.body()).expect("error serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
