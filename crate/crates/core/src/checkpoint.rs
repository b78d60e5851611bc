//! Self-describing text checkpoints: config header, update counter, agent
//! RNG state and both parameter sets.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::DdqnAgent;
use crate::config::TrainConfig;
use crate::nn::Mlp;

const MAGIC: &str = "antijam-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub agent: DdqnAgent,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let rng = self.agent.rng();
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("config {}\n", self.config.to_line()));
        out.push_str(&format!("updates {}\n", self.agent.updates()));
        out.push_str(&format!(
            "rng {} {} {}\n",
            seed,
            rng.get_stream(),
            rng.get_word_pos()
        ));
        out.push_str("online\n");
        out.push_str(&self.agent.online().to_text());
        out.push_str("target\n");
        out.push_str(&self.agent.target().to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let bad = |line: usize, message: String| CheckpointError::Malformed { line, message };
        let mut lines = text.lines();
        let mut lineno = 0usize;
        fn next<'a>(lines: &mut std::str::Lines<'a>, lineno: &mut usize) -> (usize, &'a str) {
            *lineno += 1;
            (*lineno, lines.next().unwrap_or(""))
        }

        let (ln, magic) = next(&mut lines, &mut lineno);
        if magic != MAGIC {
            return Err(bad(ln, format!("expected {MAGIC:?}")));
        }
        let (ln, cfg) = next(&mut lines, &mut lineno);
        let config = cfg
            .strip_prefix("config ")
            .ok_or_else(|| bad(ln, "expected config line".into()))
            .and_then(|s| TrainConfig::from_text(s).map_err(|e| bad(ln, e.to_string())))?;
        let (ln, upd) = next(&mut lines, &mut lineno);
        let updates: u64 = upd
            .strip_prefix("updates ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(ln, "expected `updates <n>`".into()))?;
        let (ln, rng_line) = next(&mut lines, &mut lineno);
        let rng = parse_rng(rng_line).ok_or_else(|| bad(ln, "expected `rng <seed> <stream> <word_pos>`".into()))?;

        let (ln, tag) = next(&mut lines, &mut lineno);
        if tag != "online" {
            return Err(bad(ln, "expected `online`".into()));
        }
        let online = Mlp::from_text_lines(&mut lines, ln + 1).map_err(|e| bad(ln + 1, e.to_string()))?;
        let consumed = 1 + 3 * online.layers().len();
        let tline = ln + consumed + 1;
        if lines.next() != Some("target") {
            return Err(bad(tline, "expected `target`".into()));
        }
        let target = Mlp::from_text_lines(&mut lines, tline + 1).map_err(|e| bad(tline + 1, e.to_string()))?;

        if online.input_dim() != config.env.num_channels {
            return Err(bad(
                ln + 1,
                format!(
                    "network input width {} does not match num_channels {}",
                    online.input_dim(),
                    config.env.num_channels
                ),
            ));
        }
        let agent = DdqnAgent::from_parts(online, target, config.agent.clone(), rng, updates)
            .map_err(|e| bad(tline, e.to_string()))?;
        Ok(Self { config, agent })
    }
}

fn parse_rng(line: &str) -> Option<ChaCha8Rng> {
    let mut parts = line.strip_prefix("rng ")?.split(' ');
    let hex = parts.next()?;
    let stream: u64 = parts.next()?.parse().ok()?;
    let word_pos: u128 = parts.next()?.parse().ok()?;
    if hex.len() != 64 || parts.next().is_some() {
        return None;
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Some(rng)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_text()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_text(&text)
}
