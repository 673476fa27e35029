//! memloop command line. Every data-plane command talks HTTP to a memloop
//! service: either one named with --server, or an ephemeral in-process
//! server on a loopback port built from --config.
//!
//! Exit codes: 0 success, 1 pipeline error, 2 usage/config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use memloop_client::{Client, ClientError};
use memloop_core::api::{CompressRequest, EvalRequest, QaRequest, RunRequest};
use memloop_core::eval::EvalReport;
use memloop_core::pipeline::{Mode, PipelineConfig, RunSummary, Stage, StageOptions};
use memloop_core::store::{load_store, save_store, MemoryStore};

#[derive(Parser)]
#[command(
    name = "memloop",
    version,
    about = "Dialogue-to-memory pipeline: extract, complete, verify, retrieve"
)]
struct Cli {
    /// Base URL of a running memloop service; without it, an ephemeral
    /// in-process server is hosted from --config.
    #[arg(long, global = true)]
    server: Option<String>,

    /// Pipeline config file (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,

    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "live" => Ok(Mode::Live),
        "fixture" => Ok(Mode::Fixture),
        other => Err(format!("unknown mode {other:?} (expected live or fixture)")),
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse::<Stage>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Host the memloop HTTP service.
    Serve {
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
    },
    /// Run the full pipeline over a JSONL session corpus.
    Run(RunArgs),
    /// Initial extraction only (the pipeline stopped after stage one).
    Extract {
        #[arg(long)]
        sessions: PathBuf,
        /// Directory for the per-session store files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Answer a question from a saved memory store.
    Qa {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Evaluate saved stores against gold annotations.
    Eval {
        /// Store files (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        stores: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomly drop dialogue tokens at a fixed seed.
    Compress {
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, name = "in")]
        r#in: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    sessions: PathBuf,

    /// Gold annotations (JSONL); enables evaluation.
    #[arg(long)]
    gold: Option<PathBuf>,

    /// Directory for the per-session store files.
    #[arg(long)]
    out_dir: PathBuf,

    /// Write the evaluation report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Stop the pipeline after this stage.
    #[arg(long, value_parser = parse_stage)]
    stop_after: Option<Stage>,

    /// Skip the semantic-matching completion stage.
    #[arg(long)]
    no_completion: bool,

    /// Skip the self-questioning verification stage.
    #[arg(long)]
    no_verification: bool,

    /// Also write per-session alignment reports.
    #[arg(long)]
    emit_alignment: bool,

    /// Also write per-session verification reports.
    #[arg(long)]
    emit_verification: bool,

    /// Session worker pool size (overrides config).
    #[arg(long)]
    workers: Option<usize>,
}

enum CliError {
    Usage(String),
    Pipeline(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<ClientError> for CliError {
    fn from(error: ClientError) -> Self {
        match &error {
            // Bad request = bad input or config on our side.
            ClientError::Api { status, .. } if *status == 400 => CliError::Usage(error.to_string()),
            _ => CliError::Pipeline(error.to_string()),
        }
    }
}

impl From<memloop_core::Error> for CliError {
    fn from(error: memloop_core::Error) -> Self {
        match &error {
            memloop_core::Error::Config(_)
            | memloop_core::Error::Validation(_)
            | memloop_core::Error::Parse { .. }
            | memloop_core::Error::Schema { .. }
            | memloop_core::Error::Io { .. } => CliError::Usage(error.to_string()),
            _ => CliError::Pipeline(error.to_string()),
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Pipeline(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("this command needs --config <path> or --server <url>"))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(mode) = cli.mode {
        config.mode = mode;
        config.validate()?;
    }
    Ok(config)
}

/// A client for --server, or an ephemeral in-process service otherwise.
async fn connect(cli: &Cli, config: Option<PipelineConfig>) -> Result<Client, CliError> {
    if let Some(url) = &cli.server {
        return Ok(Client::new(url.clone()));
    }
    let config = match config {
        Some(config) => config,
        None => load_config(cli)?,
    };
    let state = Arc::new(memloop_server::AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| CliError::Pipeline(format!("binding loopback listener: {e}")))?;
    let addr = listener.local_addr().expect("listener has an address");
    tokio::spawn(async move {
        let _ = memloop_server::serve(listener, state).await;
    });
    Ok(Client::new(format!("http://{addr}")))
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Serve { addr } => {
            let config = load_config(&cli)?;
            let state = Arc::new(memloop_server::AppState::new(config)?);
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .map_err(|e| CliError::usage(format!("cannot bind {addr}: {e}")))?;
            eprintln!(
                "memloop service listening on http://{}",
                listener.local_addr().unwrap()
            );
            memloop_server::serve(listener, state)
                .await
                .map_err(|e| CliError::Pipeline(format!("server terminated: {e}")))
        }
        Command::Run(args) => {
            let client = connect(&cli, None).await?;
            let options = StageOptions {
                stop_after: args.stop_after,
                no_completion: args.no_completion,
                no_verification: args.no_verification,
                emit_alignment: args.emit_alignment,
                emit_verification: args.emit_verification,
                workers: args.workers,
            };
            run_command(&client, args, options).await
        }
        Command::Extract { sessions, out_dir } => {
            let client = connect(&cli, None).await?;
            let args = RunArgs {
                sessions: sessions.clone(),
                gold: None,
                out_dir: out_dir.clone(),
                report: None,
                stop_after: Some(Stage::Extraction),
                no_completion: false,
                no_verification: false,
                emit_alignment: false,
                emit_verification: false,
                workers: None,
            };
            let options = StageOptions {
                stop_after: Some(Stage::Extraction),
                ..Default::default()
            };
            run_command(&client, &args, options).await
        }
        Command::Qa { store, question, k } => {
            let client = connect(&cli, None).await?;
            let store = load_store(store)?;
            let response = client
                .qa(&QaRequest {
                    store,
                    question: question.clone(),
                    k: Some(*k),
                })
                .await?;
            for ranked in &response.retrieved.ranked {
                eprintln!("  {:>7.4}  {}", ranked.score, ranked.annotated_text);
            }
            println!("{}", response.answer);
            Ok(())
        }
        Command::Eval { stores, gold, out } => {
            let client = connect(&cli, None).await?;
            let stores: Vec<MemoryStore> = stores
                .iter()
                .map(|p| load_store(p))
                .collect::<Result<_, _>>()?;
            let gold_jsonl = read_file(gold)?;
            let response = client.eval(&EvalRequest { stores, gold_jsonl }).await?;
            emit_report(&response.report, out.as_deref())?;
            Ok(())
        }
        Command::Compress {
            ratio,
            seed,
            r#in,
            out,
        } => {
            // Compression never touches a backend; without --config or
            // --server an offline default service hosts it.
            let fallback = (cli.config.is_none() && cli.server.is_none())
                .then(PipelineConfig::offline_default);
            let client = connect(&cli, fallback).await?;
            let sessions_jsonl = read_file(r#in)?;
            let response = client
                .compress(&CompressRequest {
                    sessions_jsonl,
                    ratio: *ratio,
                    seed: *seed,
                })
                .await?;
            write_file(out, &response.sessions_jsonl)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

async fn run_command(
    client: &Client,
    args: &RunArgs,
    options: StageOptions,
) -> Result<(), CliError> {
    let sessions_jsonl = read_file(&args.sessions)?;
    let gold_jsonl = args.gold.as_deref().map(read_file).transpose()?;
    let response = client
        .run(&RunRequest {
            sessions_jsonl,
            gold_jsonl,
            options,
        })
        .await?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::usage(format!("creating {}: {e}", args.out_dir.display())))?;
    for artifact in &response.artifacts {
        let stem = sanitize(&artifact.store.owner_id);
        save_store(&artifact.store, &args.out_dir.join(format!("{stem}.json")))?;
        if let Some(alignment) = &artifact.alignment {
            write_pretty_json(
                &args.out_dir.join(format!("{stem}.alignment.json")),
                alignment,
            )?;
        }
        if let Some(verification) = &artifact.verification {
            write_pretty_json(
                &args.out_dir.join(format!("{stem}.verification.json")),
                verification,
            )?;
        }
        for warning in &artifact.warnings {
            eprintln!("warning: {warning}");
        }
    }

    if let Some(report) = &response.eval {
        emit_report(report, args.report.as_deref())?;
    }
    print_summary(&response.summary);

    if response.summary.sessions_failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Pipeline(format!(
            "{} of {} sessions failed",
            response.summary.sessions_failed.len(),
            response.summary.sessions_total
        )))
    }
}

fn print_summary(summary: &RunSummary) {
    eprintln!(
        "sessions: {} ok, {} failed | chat calls: {} | embed requests: {} ({} texts) | payload chars: {}{}",
        summary.sessions_total - summary.sessions_failed.len(),
        summary.sessions_failed.len(),
        summary.calls.chat_calls,
        summary.calls.embed_requests,
        summary.calls.embed_texts,
        summary.calls.payload_chars,
        match summary.calls.reported_tokens {
            Some(tokens) => format!(" | reported tokens: {tokens}"),
            None => String::new(),
        }
    );
    for failure in &summary.sessions_failed {
        eprintln!("failed: {}", failure.error);
    }
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> Result<(), CliError> {
    eprint!("{}", report.render_table());
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    match out {
        Some(path) => write_file(path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::usage(format!("writing {}: {e}", path.display())))
}

fn write_pretty_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value).expect("value serializes");
    json.push('\n');
    write_file(path, &json)
}

fn sanitize(owner_id: &str) -> String {
    owner_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
