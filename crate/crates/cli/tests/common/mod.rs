#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use antijam_core::{round2, EpisodeRecord, EpsilonSchedule, RunLog, TrainConfig};

pub const TABLE1_PROMPT: &str = "The graph represents training rewards over 25 episodes. The actual rewards range from 52.10 to 88.10 with an average of 75.50. The rolling average values range from 65.80 to 83.56 with an average of 77.27. The epsilon values decrease from 0.93 to 0.08 over the episodes. The solved threshold is set at 90.00.";

pub fn antijam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_antijam"))
}

/// 25 records whose returns span [52.10, 88.10] with sum 1887.50 and whose
/// rolling averages span [65.80, 83.56] with sum 1931.75, on the linear
/// 0.93 to 0.08 epsilon trace.
pub fn table1_log() -> RunLog {
    let mut returns = vec![76.0; 25];
    returns[3] = 52.10;
    returns[20] = 88.10;
    returns[24] = 75.30;
    let mut rolling = vec![77.50; 25];
    rolling[0] = 65.80;
    rolling[23] = 83.56;
    rolling[24] = 77.39;
    let schedule = EpsilonSchedule::linear(0.93, 0.08, 25);
    let mut log = RunLog::new("table1", TrainConfig::default());
    for i in 0..25 {
        log.records.push(EpisodeRecord {
            index: i as u64,
            episode_return: returns[i],
            rolling_average: rolling[i],
            epsilon: round2(schedule.value(i as u64)),
            steps: 100,
            jam_hits: 0,
            switches: 0,
            wall_time_ms: 0,
        });
    }
    log
}

/// Minimal HTTP/1.1 client: returns status code and body.
pub fn http(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status = raw.split(' ').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

pub struct ServeProcess {
    pub child: Child,
    pub addr: String,
}

impl ServeProcess {
    pub fn spawn(data: &Path, extra: &[&str]) -> Self {
        let mut child = antijam()
            .args(["serve", "--bind", "127.0.0.1:0", "--data"])
            .arg(data)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Self { child, addr }
    }

    /// Sends SIGTERM and waits for the exit status.
    pub fn terminate(mut self) -> std::process::ExitStatus {
        Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status;
            }
            assert!(Instant::now() < deadline, "serve did not exit");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

/// Polls until the run's metadata reports a terminal status.
pub fn wait_for_run(dir: &Path) {
    let meta = dir.join("run.meta");
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        if let Ok(text) = std::fs::read_to_string(&meta) {
            if !text.contains("status=running") {
                return;
            }
        }
        assert!(Instant::now() < deadline, "run in {} did not finish", dir.display());
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Serves one canned chat completion per connection until the process ends.
pub fn mock_llm(text: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = serde_json::json!({"choices": [{"message": {"content": text}}]}).to_string();
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    url
}
