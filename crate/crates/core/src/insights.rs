//! Training summaries, the operator prompt, and narrative reports from an
//! LLM completion endpoint or a deterministic offline template.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_kv, ConfigError};
use crate::trainer::{round2, RunLog};

pub const SYSTEM_PREAMBLE: &str = "You are a network operations analyst. Explain the following DRL training summary for a human operator, noting strengths and potential refinements.";

#[derive(Debug, Error)]
pub enum InsightError {
    #[error("run log has no episode records")]
    EmptyLog,
    #[error("api key environment variable {var} is not set")]
    MissingApiKey { var: String },
    #[error("completion request timed out")]
    Timeout,
    #[error("completion endpoint returned HTTP {status}")]
    Http { status: u16 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected completion response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl InsightError {
    fn is_transient(&self) -> bool {
        match self {
            InsightError::Timeout | InsightError::Transport(_) => true,
            InsightError::Http { status } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// Statistics of a run, every real rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episode_count: usize,
    pub reward_min: f64,
    pub reward_max: f64,
    pub reward_avg: f64,
    pub rolling_min: f64,
    pub rolling_max: f64,
    pub rolling_avg: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub solved_threshold: f64,
}

fn min_max_mean(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = values.clone().count() as f64;
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.sum::<f64>() / n;
    (round2(min), round2(max), round2(mean))
}

pub fn summarize(log: &RunLog) -> Result<TrainingSummary, InsightError> {
    let (first, last) = match (log.records.first(), log.records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(InsightError::EmptyLog),
    };
    let (reward_min, reward_max, reward_avg) = min_max_mean(log.records.iter().map(|r| r.episode_return));
    let (rolling_min, rolling_max, rolling_avg) =
        min_max_mean(log.records.iter().map(|r| r.rolling_average));
    Ok(TrainingSummary {
        episode_count: log.records.len(),
        reward_min,
        reward_max,
        reward_avg,
        rolling_min,
        rolling_max,
        rolling_avg,
        epsilon_start: round2(first.epsilon),
        epsilon_end: round2(last.epsilon),
        solved_threshold: round2(log.config.solved_threshold),
    })
}

pub fn render_prompt(s: &TrainingSummary) -> String {
    format!(
        "The graph represents training rewards over {} episodes. \
The actual rewards range from {:.2} to {:.2} with an average of {:.2}. \
The rolling average values range from {:.2} to {:.2} with an average of {:.2}. \
The epsilon values decrease from {:.2} to {:.2} over the episodes. \
The solved threshold is set at {:.2}.",
        s.episode_count,
        s.reward_min,
        s.reward_max,
        s.reward_avg,
        s.rolling_min,
        s.rolling_max,
        s.rolling_avg,
        s.epsilon_start,
        s.epsilon_end,
        s.solved_threshold
    )
}

fn prompt_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"(-?\d+\.\d{2})";
        Regex::new(&format!(
            r"^The graph represents training rewards over (\d+) episodes\. The actual rewards range from {num} to {num} with an average of {num}\. The rolling average values range from {num} to {num} with an average of {num}\. The epsilon values decrease from {num} to {num} over the episodes\. The solved threshold is set at {num}\.$"
        ))
        .expect("static regex")
    })
}

/// Recovers the summary embedded in a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Option<TrainingSummary> {
    let c = prompt_regex().captures(prompt)?;
    let f = |i: usize| c[i].parse::<f64>().ok();
    Some(TrainingSummary {
        episode_count: c[1].parse().ok()?,
        reward_min: f(2)?,
        reward_max: f(3)?,
        reward_avg: f(4)?,
        rolling_min: f(5)?,
        rolling_max: f(6)?,
        rolling_avg: f(7)?,
        epsilon_start: f(8)?,
        epsilon_end: f(9)?,
        solved_threshold: f(10)?,
    })
}

/// Deterministic narrative used when no completion endpoint is available.
pub fn fallback_narrative(s: &TrainingSummary) -> String {
    let solved = s.rolling_avg >= s.solved_threshold;
    let verdict = if solved {
        "solved".to_string()
    } else {
        format!(
            "below solved threshold by {:.2}",
            s.solved_threshold - s.rolling_avg
        )
    };
    let mut text = format!(
        "Training covered {} episodes. Episode rewards ranged from {:.2} to {:.2} with an average of {:.2}. \
The rolling average ranged from {:.2} to {:.2} and averaged {:.2}. \
Exploration decayed from epsilon {:.2} to {:.2}, so later episodes mostly reflect the learned channel-selection policy. \
Verdict: {} (average rolling reward {:.2} against a threshold of {:.2}).",
        s.episode_count,
        s.reward_min,
        s.reward_max,
        s.reward_avg,
        s.rolling_min,
        s.rolling_max,
        s.rolling_avg,
        s.epsilon_start,
        s.epsilon_end,
        verdict,
        s.rolling_avg,
        s.solved_threshold,
    );
    if solved {
        text.push_str(" The agent reliably avoids the jammed channel; further gains would come from fewer channel switches.");
    } else if s.rolling_max >= s.solved_threshold {
        text.push_str(" The rolling average touched the threshold but did not hold it; a slower exploration decay or more episodes may stabilise the policy.");
    } else {
        text.push_str(" Consider training for more episodes, decaying exploration more slowly, or tuning the learning rate.");
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the api key.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl LlmEndpointConfig {
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        let known = ["base_url", "model", "api_key_env", "timeout_ms", "max_tokens", "temperature"];
        for k in map.keys() {
            if !known.contains(&k.as_str()) {
                errors.push(crate::config::FieldError {
                    field: k.clone(),
                    message: "unknown key".into(),
                });
            }
        }
        let mut need = |k: &str| -> String {
            match map.get(k) {
                Some(v) if !v.is_empty() => v.clone(),
                _ => {
                    errors.push(crate::config::FieldError {
                        field: k.into(),
                        message: "required".into(),
                    });
                    String::new()
                }
            }
        };
        let base_url = need("base_url");
        let model_name = need("model");
        let api_key_env = need("api_key_env");
        let mut num = |k: &str, default: f64| -> f64 {
            match map.get(k).map(|v| v.parse::<f64>()) {
                None => default,
                Some(Ok(v)) => v,
                Some(Err(_)) => {
                    errors.push(crate::config::FieldError {
                        field: k.into(),
                        message: "not a number".into(),
                    });
                    default
                }
            }
        };
        let timeout_ms = num("timeout_ms", 30_000.0);
        let max_tokens = num("max_tokens", 512.0);
        let temperature = num("temperature", 0.7);
        if timeout_ms <= 0.0 {
            errors.push(crate::config::FieldError {
                field: "timeout_ms".into(),
                message: "must be positive".into(),
            });
        }
        if !errors.is_empty() {
            return Err(ConfigError { errors });
        }
        Ok(Self {
            base_url,
            model_name,
            api_key_env,
            timeout_ms: timeout_ms as u64,
            max_tokens: max_tokens as u32,
            temperature,
        })
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_kv(&parse_kv(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::single("llm_config", format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

fn scrub(message: String, secret: &str) -> String {
    if secret.is_empty() {
        message
    } else {
        message.replace(secret, "[redacted]")
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    max_tokens: u32,
    temperature: f64,
}

/// First candidate text of an OpenAI-style response, accepting both chat
/// (`choices[0].message.content`) and plain completion (`choices[0].text`)
/// shapes.
fn extract_text(body: &serde_json::Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(|v| v.as_str())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

fn send_once(agent: &ureq::Agent, url: &str, key: &str, body: &CompletionRequest<'_>) -> Result<String, InsightError> {
    let result = agent
        .post(url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(body);
    let mut resp = match result {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(InsightError::Timeout),
        Err(e) => return Err(InsightError::Transport(scrub(e.to_string(), key))),
    };
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(InsightError::Http { status });
    }
    let value: serde_json::Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| InsightError::BadResponse(scrub(e.to_string(), key)))?;
    extract_text(&value).ok_or_else(|| InsightError::BadResponse("no completion text in response".into()))
}

/// Sends one single-turn completion request, retrying once on a transient
/// failure. The api key is read from the configured environment variable
/// before any network traffic.
pub fn request_insight(prompt: &str, cfg: &LlmEndpointConfig) -> Result<String, InsightError> {
    let key = std::env::var(&cfg.api_key_env)
        .ok()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| InsightError::MissingApiKey {
            var: cfg.api_key_env.clone(),
        })?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = CompletionRequest {
        model: &cfg.model_name,
        messages: [
            ChatMessage {
                role: "system",
                content: SYSTEM_PREAMBLE,
            },
            ChatMessage {
                role: "user",
                content: prompt,
            },
        ],
        max_tokens: cfg.max_tokens,
        temperature: cfg.temperature,
    };
    let url = cfg.endpoint();
    match send_once(&agent, &url, &key, &body) {
        Err(e) if e.is_transient() => send_once(&agent, &url, &key, &body),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    Llm,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightReport {
    pub run_id: String,
    pub prompt: String,
    pub narrative: String,
    pub source: ReportSource,
    pub model_name: Option<String>,
    pub generated_at: DateTime<Utc>,
    /// Why the LLM path was skipped or failed, when it was configured.
    pub warning: Option<String>,
    pub summary: TrainingSummary,
}

/// Summarizes `log`, renders the prompt and asks the endpoint for a
/// narrative, degrading to [`fallback_narrative`] on any LLM failure.
pub fn generate_report(log: &RunLog, cfg: Option<&LlmEndpointConfig>) -> Result<InsightReport, InsightError> {
    let summary = summarize(log)?;
    let prompt = render_prompt(&summary);
    let (narrative, source, model_name, warning) = match cfg {
        None => (fallback_narrative(&summary), ReportSource::Fallback, None, None),
        Some(cfg) => match request_insight(&prompt, cfg) {
            Ok(text) => (text, ReportSource::Llm, Some(cfg.model_name.clone()), None),
            Err(e) => (
                fallback_narrative(&summary),
                ReportSource::Fallback,
                None,
                Some(format!("llm unavailable, used offline summary: {e}")),
            ),
        },
    };
    Ok(InsightReport {
        run_id: log.run_id.clone(),
        prompt,
        narrative,
        source,
        model_name,
        generated_at: Utc::now(),
        warning,
        summary,
    })
}

pub fn save_report(report: &InsightReport, path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n")
}
