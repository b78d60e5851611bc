use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antijam_core::checkpoint::load_checkpoint;
use antijam_core::config::parse_kv;
use antijam_core::insights::{generate_report, save_report, InsightError, LlmEndpointConfig};
use antijam_core::trainer::{FINAL_CHECKPOINT_FILE, RUN_LOG_FILE};
use antijam_core::{evaluate, load_run_log, train, ConfigError, RunStatus, TrainConfig, TrainError, TrainOptions};
use antijam_service::{Service, ServiceConfig};
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

/// Anti-jamming channel selection with a double-DQN agent.
#[derive(Parser)]
#[command(name = "antijam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write its run log and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint's greedy policy.
    Eval(EvalArgs),
    /// Summarize a run log and generate an insight report.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run.log, run.meta and checkpoints.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Override a config key, e.g. `--set switching_cost=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress the per-episode lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Environment to evaluate in; defaults to the checkpoint's own config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    episodes: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    /// key=value file with base_url, model, api_key_env and optional
    /// timeout_ms, max_tokens, temperature.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long)]
    llm_config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_runs: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_kv(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_llm_config(path: Option<&Path>) -> Result<Option<LlmEndpointConfig>, Failure> {
    path.map(|p| LlmEndpointConfig::load(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))))
        .transpose()
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut pairs = match &args.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    if let Some(n) = args.episodes {
        pairs.insert("episodes".into(), n.to_string());
    }
    if let Some(s) = args.seed {
        pairs.insert("seed".into(), s.to_string());
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = TrainConfig::from_kv(&pairs)?;
    let opts = TrainOptions {
        output_dir: Some(args.out.clone()),
        ..TrainOptions::default()
    };
    let quiet = args.quiet;
    let log = train(config, &opts, &mut |r| {
        if !quiet {
            println!(
                "ep={} return={:.2} roll={:.2} eps={:.2}",
                r.index, r.episode_return, r.rolling_average, r.epsilon
            );
        }
    })
    .map_err(|e| match e {
        TrainError::Config(c) => Failure::from(c),
        other => Failure::usage(other.to_string()),
    })?;
    println!(
        "status={} episodes={} log={} checkpoint={}",
        log.status.name(),
        log.records.len(),
        args.out.join(RUN_LOG_FILE).display(),
        args.out.join(FINAL_CHECKPOINT_FILE).display()
    );
    match log.status {
        RunStatus::Failed => Err(Failure::data(log.failure.unwrap_or_else(|| "training failed".into()))),
        _ => Ok(()),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&args.checkpoint).map_err(|e| Failure::data(e.to_string()))?;
    let config = match &args.config {
        Some(p) => TrainConfig::from_kv(&read_config_file(p)?)?,
        None => ckpt.config.clone(),
    };
    let stats = evaluate(&ckpt.agent, &config.env, config.jammer, args.episodes).map_err(|e| match e {
        TrainError::ArchitectureMismatch { .. } | TrainError::EmptyEvaluation | TrainError::Config(_) => {
            Failure::usage(e.to_string())
        }
        other => Failure::data(other.to_string()),
    })?;
    println!(
        "episodes={} mean_return={:.2} std={:.2} jam_rate={:.4} switch_rate={:.4}",
        stats.episodes, stats.mean_return, stats.std, stats.jam_rate, stats.switch_rate
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let llm = load_llm_config(args.llm_config.as_deref())?;
    let log = load_run_log(&args.log).map_err(|e| Failure::data(e.to_string()))?;
    let report = generate_report(&log, llm.as_ref()).map_err(|e| match e {
        InsightError::EmptyLog => Failure::data(format!("{}: no episode records", args.log.display())),
        other => Failure::data(other.to_string()),
    })?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    println!("prompt:\n{}\n", report.prompt);
    let source = match &report.model_name {
        Some(m) => format!("llm, {m}"),
        None => "fallback".into(),
    };
    println!("narrative ({source}):\n{}", report.narrative);
    if let Some(out) = &args.out {
        save_report(&report, out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let llm = load_llm_config(args.llm_config.as_deref())?;
    let svc = Service::open(ServiceConfig {
        data_dir: args.data.clone(),
        llm,
        max_concurrent_runs: args.max_runs,
    })
    .map_err(|e| Failure::data(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::data(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| Failure::data(format!("cannot bind {}: {e}", args.bind)))?;
        let addr = listener.local_addr().map_err(|e| Failure::data(e.to_string()))?;
        println!("listening on http://{addr}");
        tracing::info!("serving {} from {}", addr, args.data.display());
        antijam_service::serve(listener, svc, shutdown_signal())
            .await
            .map_err(|e| Failure::data(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();

    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
