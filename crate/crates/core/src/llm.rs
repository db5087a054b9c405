//! Palettes from content tags: a chat-completion client plus a deterministic
//! offline table.

use std::sync::OnceLock;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{excerpt, Error, Result};
use crate::palette::{Palette, PALETTE_SIZE};

pub const MAX_TAGS: usize = 16;
pub const MAX_TAG_LEN: usize = 64;
pub const PROMPT_VERSION: u32 = 1;
pub const API_KEY_ENV: &str = "PALVID_API_KEY";

/// 1 to 16 non-empty lowercase content tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagList {
    tags: Vec<String>,
}

impl TagList {
    /// Trims and lowercases each tag before validating.
    pub fn new<S: AsRef<str>>(tags: impl IntoIterator<Item = S>) -> Result<Self> {
        let tags: Vec<String> = tags
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .collect();
        if tags.is_empty() || tags.len() > MAX_TAGS {
            return Err(Error::InvalidArgument(format!(
                "expected 1 to {MAX_TAGS} tags, got {}",
                tags.len()
            )));
        }
        if let Some(bad) = tags
            .iter()
            .find(|t| t.is_empty() || t.chars().count() > MAX_TAG_LEN)
        {
            return Err(Error::InvalidArgument(format!(
                "tag {bad:?} must be 1 to {MAX_TAG_LEN} characters"
            )));
        }
        Ok(TagList { tags })
    }

    /// Parses a comma-separated list.
    pub fn parse(text: &str) -> Result<Self> {
        TagList::new(text.split(','))
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

pub fn build_prompt(tags: &TagList) -> String {
    format!(
        "[palette prompt v{PROMPT_VERSION}]\n\
         You are choosing colors for colorizing a video.\n\
         Content tags: {}.\n\
         Reply with exactly 5 RGB colors that suit this content, as a JSON list of \
         exactly 5 [r,g,b] integer triples with each value in 0-255, for example \
         [[r,g,b],[r,g,b],[r,g,b],[r,g,b],[r,g,b]]. Output only that list.",
        tags.tags.join(", ")
    )
}

fn palette_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let triple = r"\[\s*-?\d+\s*,\s*-?\d+\s*,\s*-?\d+\s*\]";
        Regex::new(&format!(r"\[\s*{triple}(?:\s*,\s*{triple}){{4}}\s*\]")).unwrap()
    })
}

/// Finds the first list of exactly five integer triples, clamps to 0-255 and scales to `[0, 1]`.
pub fn parse_palette_response(text: &str) -> Result<Palette> {
    static INTEGER: OnceLock<Regex> = OnceLock::new();
    let list = palette_pattern()
        .find(text)
        .ok_or_else(|| Error::UnparseableColors {
            excerpt: excerpt(text),
        })?;
    let integer = INTEGER.get_or_init(|| Regex::new(r"-?\d+").unwrap());
    let mut colors = [[0.0; 3]; PALETTE_SIZE];
    for (v, m) in colors.iter_mut().flatten().zip(integer.find_iter(list.as_str())) {
        let raw = m.as_str();
        // out-of-range magnitudes saturate instead of overflowing
        let n: i64 = raw
            .parse()
            .unwrap_or(if raw.starts_with('-') { 0 } else { 255 });
        *v = n.clamp(0, 255) as f64 / 255.0;
    }
    Ok(Palette::clamped(colors))
}

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Full URL of a chat-completion endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after a failed request.
    pub retries: u32,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            model: "gpt-4o-mini".into(),
            timeout: Duration::from_secs(30),
            retries: 0,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Request body sent to the endpoint.
pub fn request_body(model: &str, tags: &TagList) -> serde_json::Value {
    let prompt = build_prompt(tags);
    json!({
        "model": model,
        "temperature": 0,
        "messages": [
            ChatMessage { role: "system", content: "You reply with color lists only." },
            ChatMessage { role: "user", content: &prompt },
        ],
    })
}

/// Extracts the assistant text from a chat-completion body; other bodies are used verbatim.
pub fn response_text(body: &str) -> String {
    match serde_json::from_str::<ChatResponse>(body) {
        Ok(resp) => resp
            .choices
            .into_iter()
            .find_map(|c| c.message.content)
            .unwrap_or_default(),
        Err(_) => body.to_string(),
    }
}

/// Asks a chat-completion endpoint for a palette matching `tags`.
pub fn request_colors(config: &LlmConfig, tags: &TagList) -> Result<Palette> {
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| Error::Request(e.to_string()))?;
    let body = request_body(&config.model, tags);
    let mut attempt = 0;
    loop {
        match send_once(&client, config, &body) {
            Ok(text) => return parse_palette_response(&response_text(&text)),
            Err(e) if attempt >= config.retries => return Err(e),
            Err(_) => attempt += 1,
        }
    }
}

fn send_once(
    client: &reqwest::blocking::Client,
    config: &LlmConfig,
    body: &serde_json::Value,
) -> Result<String> {
    let mut req = client.post(&config.endpoint).json(body);
    if let Some(key) = &config.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| Error::Request(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| Error::Request(e.to_string()))?;
    if !status.is_success() {
        return Err(Error::HttpStatus {
            status: status.as_u16(),
            excerpt: excerpt(&text),
        });
    }
    Ok(text)
}

/// Built-in tag colors used when no endpoint is available.
pub const OFFLINE_TABLE: [(&str, [u8; 3]); 12] = [
    ("sky", [135, 206, 235]),
    ("grass", [34, 139, 34]),
    ("sea", [0, 105, 148]),
    ("sand", [244, 164, 96]),
    ("skin", [224, 172, 105]),
    ("wood", [139, 90, 43]),
    ("road", [105, 105, 105]),
    ("sunset", [255, 99, 71]),
    ("snow", [255, 250, 250]),
    ("forest", [1, 68, 33]),
    ("brick", [178, 34, 34]),
    ("night", [25, 25, 112]),
];

/// Table colors for matching tags in order, padded by seeded draws from the table.
pub fn offline_lookup(tags: &TagList, seed: u64) -> Palette {
    let mut colors: Vec<[u8; 3]> = tags
        .tags
        .iter()
        .filter_map(|t| OFFLINE_TABLE.iter().find(|(name, _)| name == t))
        .map(|(_, c)| *c)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while colors.len() < PALETTE_SIZE {
        colors.push(OFFLINE_TABLE[rng.gen_range(0..OFFLINE_TABLE.len())].1);
    }
    let mut out = [[0u8; 3]; PALETTE_SIZE];
    out.copy_from_slice(&colors[..PALETTE_SIZE]);
    Palette::from_bytes(out)
}
