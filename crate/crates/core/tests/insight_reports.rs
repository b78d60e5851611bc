use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use antijam_core::agent::EpsilonSchedule;
use antijam_core::insights::{
    fallback_narrative, generate_report, render_prompt, request_insight, save_report, summarize, InsightError,
    InsightReport, LlmEndpointConfig, ReportSource, SYSTEM_PREAMBLE,
};
use antijam_core::{round2, EpisodeRecord, RunLog, TrainConfig};

const TABLE1_PROMPT: &str = "The graph represents training rewards over 25 episodes. The actual rewards range from 52.10 to 88.10 with an average of 75.50. The rolling average values range from 65.80 to 83.56 with an average of 77.27. The epsilon values decrease from 0.93 to 0.08 over the episodes. The solved threshold is set at 90.00.";

/// 25 records with returns in [52.10, 88.10] summing to 1887.50, rolling
/// averages in [65.80, 83.56] summing to 1931.75, and the default linear
/// epsilon trace.
fn table1_log() -> RunLog {
    let mut returns = vec![76.0; 25];
    returns[3] = 52.10;
    returns[20] = 88.10;
    returns[24] = 75.30;
    let mut rolling = vec![77.50; 25];
    rolling[0] = 65.80;
    rolling[23] = 83.56;
    rolling[24] = 77.39;
    assert!((returns.iter().sum::<f64>() - 1887.5).abs() < 1e-9);
    assert!((rolling.iter().sum::<f64>() - 1931.75).abs() < 1e-9);

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

struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
    handle: thread::JoinHandle<()>,
}

/// Serves one scripted `(status, body, delay)` reply per incoming connection.
fn mock_server(replies: Vec<(u16, String, Duration)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    let handle = thread::spawn(move || {
        for (status, body, delay) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut payload = vec![0u8; content_length];
            reader.read_exact(&mut payload).unwrap();
            head.push_str("\r\n");
            head.push_str(&String::from_utf8_lossy(&payload));
            seen.lock().unwrap().push(head);
            thread::sleep(delay);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    MockServer { url, requests, handle }
}

fn endpoint(url: &str, key_var: &str) -> LlmEndpointConfig {
    LlmEndpointConfig {
        base_url: url.to_string(),
        model_name: "mock-7b".into(),
        api_key_env: key_var.into(),
        timeout_ms: 2_000,
        max_tokens: 64,
        temperature: 0.2,
    }
}

fn chat_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn table1_summary_and_prompt() {
    let log = table1_log();
    let s = summarize(&log).unwrap();
    assert_eq!(s.episode_count, 25);
    assert_eq!((s.reward_min, s.reward_max, s.reward_avg), (52.10, 88.10, 75.50));
    assert_eq!((s.rolling_min, s.rolling_max, s.rolling_avg), (65.80, 83.56, 77.27));
    assert_eq!((s.epsilon_start, s.epsilon_end), (0.93, 0.08));
    assert_eq!(s.solved_threshold, 90.0);
    assert_eq!(render_prompt(&s), TABLE1_PROMPT);
}

#[test]
fn table1_fallback_is_below_threshold() {
    let s = summarize(&table1_log()).unwrap();
    let text = fallback_narrative(&s);
    assert!(text.contains("below solved threshold"), "{text}");
    let report = generate_report(&table1_log(), None).unwrap();
    assert_eq!(report.source, ReportSource::Fallback);
    assert_eq!(report.model_name, None);
    assert_eq!(report.narrative, text);
}

#[test]
fn mock_endpoint_yields_llm_report() {
    std::env::set_var("ANTIJAM_TEST_KEY_OK", "sk-secret-ok-123");
    let server = mock_server(vec![(200, chat_body("Canned analysis."), Duration::ZERO)]);
    let report = generate_report(&table1_log(), Some(&endpoint(&server.url, "ANTIJAM_TEST_KEY_OK"))).unwrap();
    server.handle.join().unwrap();
    assert_eq!(report.narrative, "Canned analysis.");
    assert_eq!(report.source, ReportSource::Llm);
    assert_eq!(report.model_name.as_deref(), Some("mock-7b"));
    assert_eq!(report.warning, None);

    let requests = server.requests.lock().unwrap();
    assert_eq!(requests.len(), 1);
    let req = &requests[0];
    assert!(req.starts_with("POST /v1/chat/completions "));
    assert!(req.to_ascii_lowercase().contains("authorization: bearer sk-secret-ok-123"));
    let body: serde_json::Value = serde_json::from_str(req.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "mock-7b");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["content"], SYSTEM_PREAMBLE);
    assert_eq!(body["messages"][1]["content"], TABLE1_PROMPT);
}

#[test]
fn plain_completion_shape_is_accepted() {
    std::env::set_var("ANTIJAM_TEST_KEY_TEXT", "k");
    let body = serde_json::json!({"choices": [{"text": "Plain text answer."}]}).to_string();
    let server = mock_server(vec![(200, body, Duration::ZERO)]);
    let text = request_insight("p", &endpoint(&server.url, "ANTIJAM_TEST_KEY_TEXT")).unwrap();
    assert_eq!(text, "Plain text answer.");
}

#[test]
fn server_error_twice_is_surfaced_after_one_retry() {
    std::env::set_var("ANTIJAM_TEST_KEY_500", "k");
    let server = mock_server(vec![
        (500, "{}".into(), Duration::ZERO),
        (500, "{}".into(), Duration::ZERO),
    ]);
    let err = request_insight("p", &endpoint(&server.url, "ANTIJAM_TEST_KEY_500")).unwrap_err();
    server.handle.join().unwrap();
    assert!(matches!(err, InsightError::Http { status: 500 }), "{err:?}");
    assert_eq!(server.requests.lock().unwrap().len(), 2);
}

#[test]
fn transient_failure_recovers_on_retry() {
    std::env::set_var("ANTIJAM_TEST_KEY_RETRY", "k");
    let server = mock_server(vec![
        (503, "{}".into(), Duration::ZERO),
        (200, chat_body("Second time lucky."), Duration::ZERO),
    ]);
    let text = request_insight("p", &endpoint(&server.url, "ANTIJAM_TEST_KEY_RETRY")).unwrap();
    assert_eq!(text, "Second time lucky.");
}

#[test]
fn client_error_is_not_retried() {
    std::env::set_var("ANTIJAM_TEST_KEY_401", "k");
    let server = mock_server(vec![(401, "{}".into(), Duration::ZERO)]);
    let err = request_insight("p", &endpoint(&server.url, "ANTIJAM_TEST_KEY_401")).unwrap_err();
    server.handle.join().unwrap();
    assert!(matches!(err, InsightError::Http { status: 401 }));
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn slow_endpoint_times_out() {
    std::env::set_var("ANTIJAM_TEST_KEY_SLOW", "k");
    let slow = Duration::from_millis(800);
    let server = mock_server(vec![(200, chat_body("late"), slow), (200, chat_body("late"), slow)]);
    let mut cfg = endpoint(&server.url, "ANTIJAM_TEST_KEY_SLOW");
    cfg.timeout_ms = 150;
    let err = request_insight("p", &cfg).unwrap_err();
    assert!(matches!(err, InsightError::Timeout), "{err:?}");
}

#[test]
fn unreachable_endpoint_degrades_without_leaking_key() {
    let secret = "sk-very-secret-key-987";
    std::env::set_var("ANTIJAM_TEST_KEY_DOWN", secret);
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/{secret}");
    let cfg = endpoint(&url, "ANTIJAM_TEST_KEY_DOWN");

    let err = request_insight("p", &cfg).unwrap_err();
    assert!(!format!("{err} {err:?}").contains(secret));

    let report = generate_report(&table1_log(), Some(&cfg)).unwrap();
    assert_eq!(report.source, ReportSource::Fallback);
    assert!(report.narrative.contains("below solved threshold"));
    let warning = report.warning.clone().expect("warning recorded");
    assert!(!warning.contains(secret));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    save_report(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains(secret));
    let back: InsightReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

#[test]
fn prompt_is_deterministic_for_same_log_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.log");
    antijam_core::save_run_log(&table1_log(), &path).unwrap();
    let a = antijam_core::load_run_log(&path).unwrap();
    let b = antijam_core::load_run_log(&path).unwrap();
    assert_eq!(
        render_prompt(&summarize(&a).unwrap()),
        render_prompt(&summarize(&b).unwrap())
    );
    assert_eq!(render_prompt(&summarize(&a).unwrap()), TABLE1_PROMPT);
}
