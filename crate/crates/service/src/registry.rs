//! Run registry: one training thread per run, records fanned out to
//! stream subscribers under the same lock that appends them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use antijam_core::insights::{generate_report, save_report, InsightError, InsightReport, LlmEndpointConfig};
use antijam_core::runlog::{load_run_log, save_run_log, write_meta, RunLogError};
use antijam_core::trainer::RUN_LOG_FILE;
use antijam_core::{train, ConfigError, EpisodeRecord, RunLog, RunStatus, TrainConfig, TrainOptions};
use chrono::{DateTime, Utc};
use thiserror::Error;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub llm: Option<LlmEndpointConfig>,
    pub max_concurrent_runs: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            llm: None,
            max_concurrent_runs: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("data directory {path} is not writable: {source}")]
    DataDir { path: String, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("{0} runs already in progress")]
    AtCapacity(usize),
    #[error("cannot start run: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("run has no episode records yet")]
    NoRecords,
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEvent {
    Episode(EpisodeRecord),
    Status(RunStatus),
}

#[derive(Debug)]
struct RunState {
    config: TrainConfig,
    created_at: DateTime<Utc>,
    status: RunStatus,
    failure: Option<String>,
    records: Vec<EpisodeRecord>,
    subscribers: Vec<UnboundedSender<RunEvent>>,
}

#[derive(Debug)]
pub struct Run {
    id: String,
    dir: PathBuf,
    stop: Arc<AtomicBool>,
    state: Mutex<RunState>,
}

/// What a new subscriber sees: every record so far, the status at the time
/// of subscribing and, for live runs, a receiver for what follows.
pub struct Subscription {
    pub snapshot: Vec<EpisodeRecord>,
    pub status: RunStatus,
    pub events: Option<UnboundedReceiver<RunEvent>>,
}

impl Run {
    fn lock(&self) -> MutexGuard<'_, RunState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn status(&self) -> RunStatus {
        self.lock().status
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> RunLog {
        let s = self.lock();
        RunLog {
            run_id: self.id.clone(),
            config: s.config.clone(),
            records: s.records.clone(),
            status: s.status,
            created_at: s.created_at,
            failure: s.failure.clone(),
        }
    }

    pub fn subscribe(&self) -> Subscription {
        let mut s = self.lock();
        let events = if s.status.is_terminal() {
            None
        } else {
            let (tx, rx) = unbounded_channel();
            s.subscribers.push(tx);
            Some(rx)
        };
        Subscription {
            snapshot: s.records.clone(),
            status: s.status,
            events,
        }
    }

    fn publish(&self, record: &EpisodeRecord) {
        let mut s = self.lock();
        s.records.push(*record);
        s.subscribers.retain(|tx| tx.send(RunEvent::Episode(*record)).is_ok());
    }

    fn finish(&self, status: RunStatus, failure: Option<String>) {
        let mut s = self.lock();
        s.status = status;
        s.failure = failure;
        for tx in s.subscribers.drain(..) {
            let _ = tx.send(RunEvent::Status(status));
        }
    }
}

pub struct Service {
    config: ServiceConfig,
    runs: Mutex<BTreeMap<String, Arc<Run>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

fn check_writable(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(format!(".probe-{}", uuid::Uuid::new_v4()));
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(probe)
}

impl Service {
    /// Checks that the data directory is writable and reloads every run
    /// found in it. Runs whose metadata still says `running` were cut short
    /// by a previous process and are recovered as `stopped`.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        check_writable(&config.data_dir).map_err(|source| ServiceError::DataDir {
            path: config.data_dir.display().to_string(),
            source,
        })?;
        let mut runs = BTreeMap::new();
        if let Ok(entries) = std::fs::read_dir(&config.data_dir) {
            for entry in entries.flatten() {
                let dir = entry.path();
                let log_path = dir.join(RUN_LOG_FILE);
                if !log_path.is_file() {
                    continue;
                }
                match recover(&dir, &log_path) {
                    Ok(run) => {
                        runs.insert(run.id.clone(), Arc::new(run));
                    }
                    Err(e) => tracing::warn!("skipping {}: {e}", dir.display()),
                }
            }
        }
        tracing::info!("recovered {} runs from {}", runs.len(), config.data_dir.display());
        Ok(Arc::new(Self {
            config,
            runs: Mutex::new(runs),
            threads: Mutex::new(Vec::new()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn runs(&self) -> MutexGuard<'_, BTreeMap<String, Arc<Run>>> {
        self.runs.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn get(&self, id: &str) -> Option<Arc<Run>> {
        self.runs().get(id).cloned()
    }

    pub fn list(&self) -> Vec<Arc<Run>> {
        let mut v: Vec<_> = self.runs().values().cloned().collect();
        v.sort_by_key(|r| (r.lock().created_at, r.id.clone()));
        v
    }

    /// Validates `pairs` and starts training on a dedicated thread.
    pub fn start_run(self: &Arc<Self>, pairs: &BTreeMap<String, String>) -> Result<Arc<Run>, StartError> {
        let config = TrainConfig::from_kv(pairs)?;
        let run = {
            let mut runs = self.runs();
            let live = runs.values().filter(|r| !r.status().is_terminal()).count();
            if live >= self.config.max_concurrent_runs {
                return Err(StartError::AtCapacity(live));
            }
            let id = uuid::Uuid::new_v4().simple().to_string();
            let dir = self.config.data_dir.join(&id);
            std::fs::create_dir_all(&dir)?;
            let run = Arc::new(Run {
                id: id.clone(),
                dir,
                stop: Arc::new(AtomicBool::new(false)),
                state: Mutex::new(RunState {
                    config: config.clone(),
                    created_at: Utc::now(),
                    status: RunStatus::Running,
                    failure: None,
                    records: Vec::new(),
                    subscribers: Vec::new(),
                }),
            });
            runs.insert(id, run.clone());
            run
        };

        let worker = run.clone();
        let handle = std::thread::Builder::new()
            .name(format!("run-{}", &run.id[..8]))
            .spawn(move || {
                let opts = TrainOptions {
                    output_dir: Some(worker.dir.clone()),
                    run_id: Some(worker.id.clone()),
                    stop: Some(worker.stop.clone()),
                };
                match train(config, &opts, &mut |r| worker.publish(r)) {
                    Ok(log) => worker.finish(log.status, log.failure),
                    Err(e) => {
                        let mut log = worker.snapshot();
                        log.status = RunStatus::Failed;
                        log.failure = Some(e.to_string());
                        let _ = save_run_log(&log, &worker.dir.join(RUN_LOG_FILE));
                        worker.finish(RunStatus::Failed, log.failure);
                    }
                }
                tracing::info!("run {} finished: {}", worker.id, worker.status().name());
            })?;
        let mut threads = self.threads.lock().unwrap_or_else(|p| p.into_inner());
        threads.retain(|h| !h.is_finished());
        threads.push(handle);
        Ok(run)
    }

    /// Builds an insight report over the run's current records and stores
    /// it next to the run log. Blocks on the LLM call when one is configured.
    pub fn explain(&self, run: &Run) -> Result<InsightReport, ExplainError> {
        let log = run.snapshot();
        let report = match generate_report(&log, self.config.llm.as_ref()) {
            Ok(r) => r,
            Err(InsightError::EmptyLog) => return Err(ExplainError::NoRecords),
            Err(other) => unreachable!("generate_report only fails on empty logs: {other}"),
        };
        save_report(&report, &run.dir.join(REPORT_FILE))?;
        Ok(report)
    }

    pub fn stop_all(&self) {
        for run in self.runs().values() {
            run.request_stop();
        }
    }

    /// Stops every live run and waits for its thread to write its final
    /// state.
    pub fn shutdown(&self) {
        self.stop_all();
        let handles: Vec<_> = self
            .threads
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .drain(..)
            .collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

fn recover(dir: &Path, log_path: &Path) -> Result<Run, RunLogError> {
    let mut log = load_run_log(log_path)?;
    if log.run_id.is_empty() || log.run_id == "run" {
        log.run_id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    if !log.status.is_terminal() {
        log.status = RunStatus::Stopped;
        write_meta(log_path, &log).map_err(|source| RunLogError::Io {
            path: log_path.display().to_string(),
            source,
        })?;
    }
    Ok(Run {
        id: log.run_id,
        dir: dir.to_path_buf(),
        stop: Arc::new(AtomicBool::new(true)),
        state: Mutex::new(RunState {
            config: log.config,
            created_at: log.created_at,
            status: log.status,
            failure: log.failure,
            records: log.records,
            subscribers: Vec::new(),
        }),
    })
}
