//! Deterministic offline backend.
//!
//! A [`MockBackend`] is a pure function of the request: equal prompts and
//! seeds give equal responses. Stop sequences and the token limit are applied
//! the way a serving engine would apply them.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_stop_sequences, Backend, FinishReason, GenerationRequest, GenerationResponse};
use crate::error::{Error, Result};
use crate::prompt::INPUT_MARKER;

type ScriptFn = dyn Fn(&GenerationRequest) -> std::result::Result<String, String> + Send + Sync;

#[derive(Clone)]
pub struct MockBackend {
    script: Arc<ScriptFn>,
    max_parallel: usize,
    calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("max_parallel", &self.max_parallel)
            .field("calls", &self.calls())
            .finish()
    }
}

impl MockBackend {
    /// `Err` from the script becomes an `Error` response.
    pub fn from_fn<F>(script: F) -> Self
    where
        F: Fn(&GenerationRequest) -> std::result::Result<String, String> + Send + Sync + 'static,
    {
        MockBackend {
            script: Arc::new(script),
            max_parallel: 4,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn from_script(script: MockScript) -> Self {
        Self::from_fn(move |request| script.respond(request))
    }

    /// Task-agnostic stand-in for a model; see [`MockFallback::Simulate`].
    pub fn simulated() -> Self {
        Self::from_script(MockScript::default())
    }

    pub fn with_max_parallel(mut self, max_parallel: usize) -> Self {
        self.max_parallel = max_parallel.max(1);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn generate(&self, request: &GenerationRequest) -> GenerationResponse {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match (self.script)(request) {
            Err(message) => GenerationResponse::failed(message, 1),
            Ok(raw) => {
                let (text, _) = apply_stop_sequences(&raw, &request.stop_sequences);
                let (text, truncated) = limit_tokens(&text, request.max_new_tokens);
                GenerationResponse {
                    text,
                    finish_reason: if truncated {
                        FinishReason::Length
                    } else {
                        FinishReason::Stop
                    },
                    error: None,
                    attempts: 1,
                }
            }
        }
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }
}

/// Keeps at most `max_tokens` whitespace-delimited tokens, preserving the
/// original spacing of what is kept.
fn limit_tokens(text: &str, max_tokens: usize) -> (String, bool) {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > max_tokens {
                return (text[..i].trim_end().to_string(), true);
            }
        }
    }
    (text.to_string(), false)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockScope {
    /// Match anywhere in the prompt.
    #[default]
    Prompt,
    /// Match only the final query input of an annotation prompt.
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub contains: String,
    #[serde(default)]
    pub scope: MockScope,
    #[serde(default)]
    pub reply: Option<String>,
    /// Respond with an error carrying this message instead of a reply.
    #[serde(default)]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    /// Input prompts get a recombined seed input, annotation prompts get the
    /// output of the demonstration sharing the most tokens with the query.
    #[default]
    Simulate,
    /// Repeat the last non-empty line of the prompt.
    Echo,
    Text(String),
    Fail(String),
}

/// Rules are tried in order; the first whose `contains` matches answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub fallback: MockFallback,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::task::decode_json(&text, &path.display().to_string())
    }

    pub fn respond(&self, request: &GenerationRequest) -> std::result::Result<String, String> {
        let query = annotation_query(&request.prompt);
        for rule in &self.rules {
            let haystack = match rule.scope {
                MockScope::Prompt => Some(request.prompt.as_str()),
                MockScope::Query => query,
            };
            if haystack.is_some_and(|h| h.contains(&rule.contains)) {
                if let Some(message) = &rule.fail {
                    return Err(message.clone());
                }
                return Ok(rule.reply.clone().unwrap_or_default());
            }
        }
        match &self.fallback {
            MockFallback::Simulate => Ok(simulate(request)),
            MockFallback::Echo => Ok(request
                .prompt
                .lines()
                .rev()
                .find(|l| !l.trim().is_empty())
                .unwrap_or_default()
                .to_string()),
            MockFallback::Text(text) => Ok(text.clone()),
            MockFallback::Fail(message) => Err(message.clone()),
        }
    }
}

const QUERY_OPEN: &str = "USER: [input] =\n";
const QUERY_CLOSE: &str = "\nASSISTANT:";
const TURN_OPEN: &str = "USER : [input] ";
const TURN_REPLY: &str = "\nASSISTANT : ";
const HIGH_QUALITY_OPEN: &str = "Some high-quality [input]:\n\n";
const LOW_QUALITY_OPEN: &str = "Some low-quality [input]:\n\n";
const SECTION_CLOSE: &str = "\n\nThese are some additional";
const LOW_SECTION_CLOSE: &str = "\n\nAfter seeing example inputs";

/// Final query input of an annotation prompt, if the prompt is one.
fn annotation_query(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(QUERY_OPEN)? + QUERY_OPEN.len();
    let rest = &prompt[start..];
    let end = rest.rfind(QUERY_CLOSE)?;
    Some(&rest[..end])
}

fn annotation_demos(prompt: &str) -> Vec<(&str, &str)> {
    prompt
        .split(TURN_OPEN)
        .skip(1)
        .filter_map(|turn| {
            let turn = ["=\n", ":", "\n\n"]
                .iter()
                .find_map(|c| turn.strip_prefix(c))
                .unwrap_or(turn);
            let (input, rest) = turn.split_once(TURN_REPLY)?;
            let output = rest.split('\n').next().unwrap_or_default();
            Some((input, output))
        })
        .collect()
}

fn section<'a>(prompt: &'a str, open: &str, close: &str) -> Vec<&'a str> {
    let Some(start) = prompt.find(open).map(|i| i + open.len()) else {
        return Vec::new();
    };
    let body = &prompt[start..];
    let body = body.find(close).map_or(body, |end| &body[..end]);
    body.split(INPUT_MARKER)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Stable 64-bit digest of the prompt and seed.
fn request_hash(request: &GenerationRequest) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(request.prompt.as_bytes());
    hasher.update(request.seed.unwrap_or(0).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// splitmix64 step.
fn next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const VOCABULARY: [&str; 48] = [
    "river", "market", "winter", "engine", "garden", "signal", "teacher", "forest", "planet", "doctor", "window",
    "bridge", "harvest", "family", "storm", "village", "letter", "painting", "machine", "ocean", "student", "city",
    "mountain", "kitchen", "battery", "library", "festival", "island", "copper", "compass", "morning", "soldier",
    "camera", "desert", "factory", "violin", "lantern", "meadow", "harbor", "pilot", "recipe", "castle", "robot",
    "valley", "journal", "orchard", "canyon", "glacier",
];

fn simulate(request: &GenerationRequest) -> String {
    let mut state = request_hash(request);
    let prompt = &request.prompt;

    let high = section(prompt, HIGH_QUALITY_OPEN, SECTION_CLOSE);
    if !high.is_empty() {
        let low = section(prompt, LOW_QUALITY_OPEN, LOW_SECTION_CLOSE);
        let pool: Vec<&str> = high.iter().chain(low.iter()).copied().collect();
        let base = pool[(next(&mut state) % pool.len() as u64) as usize];
        let mut tokens: Vec<&str> = base.split_whitespace().collect();
        if tokens.is_empty() {
            return base.to_string();
        }
        let edits = 1 + (next(&mut state) % 2) as usize;
        for _ in 0..edits.min(tokens.len()) {
            let at = (next(&mut state) % tokens.len() as u64) as usize;
            tokens[at] = VOCABULARY[(next(&mut state) % VOCABULARY.len() as u64) as usize];
        }
        return tokens.join(" ");
    }

    if let Some(query) = annotation_query(prompt) {
        let demos = annotation_demos(prompt);
        if demos.is_empty() {
            return query.to_string();
        }
        let query_tokens: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
        let overlap = |input: &str| {
            input
                .split_whitespace()
                .filter(|t| query_tokens.contains(&t.to_lowercase()))
                .count()
        };
        let best = demos
            .iter()
            .enumerate()
            .max_by_key(|(i, (input, _))| (overlap(input), std::cmp::Reverse(*i)))
            .map(|(_, (_, output))| *output)
            .unwrap_or_default();
        return best.to_string();
    }

    prompt
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default()
        .to_string()
}
