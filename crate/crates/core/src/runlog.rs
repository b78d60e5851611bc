//! Run-log files.
//!
//! `run.log` holds the canonical config on line 1 and one
//! [`EpisodeRecord`] line per finished episode. Identity metadata (run id,
//! status, creation time) lives in a sibling `.meta` file so two runs with
//! the same config and seed produce byte-identical logs.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::trainer::{EpisodeRecord, RunLog, RunStatus};

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

pub fn meta_path(log_path: &Path) -> PathBuf {
    log_path.with_extension("meta")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunLogError + '_ {
    move |source| RunLogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Appends records to a run log, syncing after every line.
#[derive(Debug)]
pub struct RunLogWriter {
    path: PathBuf,
    file: File,
}

impl RunLogWriter {
    /// Truncates `path`, writes the config header and an initial meta file.
    pub fn create(path: PathBuf, log: &RunLog) -> io::Result<Self> {
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        writeln!(file, "{}", log.config.to_line())?;
        for r in &log.records {
            writeln!(file, "{}", r.to_line())?;
        }
        file.sync_data()?;
        write_meta(&path, log)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> io::Result<()> {
        self.file.write_all(format!("{}\n", record.to_line()).as_bytes())?;
        self.file.sync_data()
    }
}

pub fn write_meta(log_path: &Path, log: &RunLog) -> io::Result<()> {
    let mut text = format!(
        "run_id={}\nstatus={}\ncreated_at={}\n",
        log.run_id,
        log.status.name(),
        log.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    );
    if let Some(f) = &log.failure {
        text.push_str(&format!("failure={}\n", f.replace('\n', " ")));
    }
    let meta = meta_path(log_path);
    let tmp = meta.with_extension("meta.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, meta)
}

pub fn save_run_log(log: &RunLog, path: &Path) -> Result<(), RunLogError> {
    RunLogWriter::create(path.to_path_buf(), log).map_err(io_err(path))?;
    Ok(())
}

/// Parses a run log. Without a meta file the run id defaults to the file
/// stem, the status to `completed` and the creation time to the epoch.
pub fn load_run_log(path: &Path) -> Result<RunLog, RunLogError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, message: String| RunLogError::Malformed {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.split_inclusive('\n');
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file, expected a config header".into()))?;
    let config = TrainConfig::from_text(header.trim_end()).map_err(|e| malformed(1, e.to_string()))?;

    let mut records = Vec::new();
    for (i, raw) in lines.enumerate() {
        let lineno = i + 2;
        if !raw.ends_with('\n') {
            return Err(malformed(lineno, "truncated record (no line terminator)".into()));
        }
        let record = EpisodeRecord::parse_line(raw).map_err(|m| malformed(lineno, m))?;
        if record.index != records.len() as u64 {
            return Err(malformed(
                lineno,
                format!("expected episode index {}, got {}", records.len(), record.index),
            ));
        }
        records.push(record);
    }

    let mut log = RunLog {
        run_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config,
        records,
        status: RunStatus::Completed,
        created_at: DateTime::<Utc>::UNIX_EPOCH,
        failure: None,
    };

    let meta = meta_path(path);
    if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
        let meta_err = |message: String| RunLogError::Malformed {
            path: meta.display().to_string(),
            line: 0,
            message,
        };
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            match k {
                "run_id" => log.run_id = v.to_string(),
                "status" => {
                    log.status =
                        RunStatus::parse(v).ok_or_else(|| meta_err(format!("unknown status {v:?}")))?
                }
                "created_at" => {
                    log.created_at = DateTime::parse_from_rfc3339(v)
                        .map_err(|e| meta_err(format!("bad created_at: {e}")))?
                        .with_timezone(&Utc)
                }
                "failure" => log.failure = Some(v.to_string()),
                _ => {}
            }
        }
    }
    Ok(log)
}
