//! Few-shot conversation prompts for fixing a reported issue, and adapters
//! for sending them to a model service.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{FixSample, Split};

/// System instruction without the reduction note.
pub const SYSTEM_PREFIX: &str = "Assistant is a code assistant designed to fix issues in given code snippets. Instructions: Do not generate additional text or code. Output only the fixed code snippet. Do not generate explanations, comments, notes.";

/// Appended when the code shown is a reduced snippet rather than a full file.
/// The spelling is kept as the model was prompted.
pub const REDUCTION_NOTE: &str = " Note that the code we provide is incomplete, it is intentionally reduced to a smaller snippet, do not try to complete it in anyway. Leave evertything as it is and just apply the changes related to the fix.";

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub fn system_text(include_reduction_note: bool) -> String {
    if include_reduction_note {
        format!("{SYSTEM_PREFIX}{REDUCTION_NOTE}")
    } else {
        SYSTEM_PREFIX.to_owned()
    }
}

pub fn user_text(rule: &str, description: &str, code: &str) -> String {
    format!("Generate the fixed code for the bug {rule} with the error message {description}. {code}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub pre: String,
    pub post: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    /// Alternating user/assistant turns ending with the query.
    pub turns: Vec<Turn>,
    pub rule: String,
    pub description: String,
    pub query_code: String,
    pub shots: Vec<Shot>,
}

impl PromptBundle {
    /// Chat messages including the system turn, in the usual wire shape.
    pub fn messages(&self) -> Value {
        let mut msgs = vec![json!({"role": "system", "content": self.system})];
        msgs.extend(self.turns.iter().map(|t| json!({"role": t.role, "content": t.content})));
        Value::Array(msgs)
    }

    /// Plain-text rendering, one `ROLE:` block per turn.
    pub fn render(&self) -> String {
        let mut out = format!("SYSTEM: {}\n", self.system);
        for t in &self.turns {
            let role = match t.role {
                Role::User => "USER",
                Role::Assistant => "ASSISTANT",
            };
            out.push_str(&format!("{role}: {}\n", t.content));
        }
        out
    }
}

pub fn build_prompt(
    rule: &str,
    description: &str,
    shots: &[Shot],
    query: &str,
    include_reduction_note: bool,
) -> PromptBundle {
    let mut turns = Vec::with_capacity(2 * shots.len() + 1);
    for s in shots {
        turns.push(Turn {
            role: Role::User,
            content: user_text(rule, description, &s.pre),
        });
        turns.push(Turn {
            role: Role::Assistant,
            content: s.post.clone(),
        });
    }
    turns.push(Turn {
        role: Role::User,
        content: user_text(rule, description, query),
    });
    PromptBundle {
        system: system_text(include_reduction_note),
        turns,
        rule: rule.to_owned(),
        description: description.to_owned(),
        query_code: query.to_owned(),
        shots: shots.to_vec(),
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no training examples for rule {0}")]
    NoShotsAvailable(String),
    #[error("at least one completion must be requested")]
    ZeroCompletions,
    #[error("model endpoint not configured: set {0}")]
    NotConfigured(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Option<Duration> },
    #[error("unexpected model response: {0}")]
    BadResponse(String),
    #[error("no recorded response for this request")]
    NotRecorded,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pick `count` training shots of `rule`, chosen by `seed` and kept in pool
/// order. Fewer are returned when the pool is smaller.
pub fn select_shots(pool: &[FixSample], rule: &str, count: usize, seed: u64) -> Result<Vec<Shot>, PromptError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let eligible: Vec<&FixSample> = pool
        .iter()
        .filter(|s| s.split == Split::Train && s.rule == rule)
        .collect();
    if eligible.is_empty() {
        return Err(PromptError::NoShotsAvailable(rule.to_owned()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, eligible.len(), count.min(eligible.len())).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| Shot {
            pre: eligible[i].pre.text(),
            post: eligible[i].post.text(),
        })
        .collect())
}

/// A model that turns a conversation into `n` ranked completions.
pub trait ModelService: Send + Sync {
    fn complete(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Result<Vec<String>, PromptError>;
}

impl<M: ModelService + ?Sized> ModelService for Box<M> {
    fn complete(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Result<Vec<String>, PromptError> {
        (**self).complete(bundle, n, temperature)
    }
}

/// Returns the query code unchanged; for dry runs and tests.
pub struct EchoModel;

impl ModelService for EchoModel {
    fn complete(&self, bundle: &PromptBundle, n: usize, _temperature: f64) -> Result<Vec<String>, PromptError> {
        if n == 0 {
            return Err(PromptError::ZeroCompletions);
        }
        Ok(vec![bundle.query_code.clone(); n])
    }
}

/// Chat-completions style HTTP endpoint configured by `MODEL_URL`,
/// `MODEL_KEY` and `MODEL_NAME`.
pub struct HttpModel {
    url: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
    pub max_retries: u32,
}

impl HttpModel {
    pub fn new(url: String, key: Option<String>, model: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            url,
            key,
            model,
            agent: ureq::Agent::new_with_config(config),
            max_retries: 3,
        }
    }

    pub fn from_env() -> Result<Self, PromptError> {
        let url = std::env::var("MODEL_URL").map_err(|_| PromptError::NotConfigured("MODEL_URL"))?;
        let model = std::env::var("MODEL_NAME").map_err(|_| PromptError::NotConfigured("MODEL_NAME"))?;
        let key = std::env::var("MODEL_KEY").ok();
        Ok(Self::new(url, key, model, Duration::from_secs(120)))
    }

    fn request_body(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Value {
        json!({
            "model": self.model,
            "messages": bundle.messages(),
            "n": n,
            "temperature": temperature,
        })
    }

    fn send_once(&self, body: &str) -> Result<Vec<String>, PromptError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| PromptError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(PromptError::RateLimited { retry_after });
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PromptError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(PromptError::Transport(format!("HTTP {status}: {text}")));
        }
        parse_choices(&text)
    }
}

/// `choices[].message.content` of a chat-completions response.
pub fn parse_choices(text: &str) -> Result<Vec<String>, PromptError> {
    let v: Value = serde_json::from_str(text).map_err(|e| PromptError::BadResponse(e.to_string()))?;
    let choices = v
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| PromptError::BadResponse("missing `choices`".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| PromptError::BadResponse("choice without message content".into()))
        })
        .collect()
}

impl ModelService for HttpModel {
    fn complete(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Result<Vec<String>, PromptError> {
        if n == 0 {
            return Err(PromptError::ZeroCompletions);
        }
        let body = self.request_body(bundle, n, temperature).to_string();
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Err(PromptError::RateLimited { retry_after }) if attempt < self.max_retries => {
                    let wait = retry_after.unwrap_or(Duration::from_secs(1 << attempt));
                    log::warn!("rate limited; waiting {wait:?}");
                    thread::sleep(wait);
                }
                Err(PromptError::Transport(e)) if attempt < self.max_retries => {
                    log::warn!("transport error, retrying: {e}");
                    thread::sleep(Duration::from_millis(250 << attempt));
                }
                other => return other,
            }
            attempt += 1;
        }
    }
}

/// One recorded exchange; the request is the full logical request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Recording {
    request: Value,
    completions: Vec<String>,
}

fn logical_request(bundle: &PromptBundle, n: usize, temperature: f64) -> Value {
    json!({"messages": bundle.messages(), "n": n, "temperature": temperature})
}

/// Replays completions recorded in a JSONL file; unknown requests fail.
pub struct ReplayModel {
    recordings: Vec<Recording>,
}

impl ReplayModel {
    pub fn open(path: &Path) -> Result<Self, PromptError> {
        let mut recordings = Vec::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            recordings.push(serde_json::from_str(&line).map_err(|e| PromptError::BadResponse(e.to_string()))?);
        }
        Ok(Self { recordings })
    }
}

impl ModelService for ReplayModel {
    fn complete(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Result<Vec<String>, PromptError> {
        if n == 0 {
            return Err(PromptError::ZeroCompletions);
        }
        let req = logical_request(bundle, n, temperature);
        self.recordings
            .iter()
            .find(|r| r.request == req)
            .map(|r| r.completions.clone())
            .ok_or(PromptError::NotRecorded)
    }
}

/// Forwards to another service and appends every exchange to a JSONL file.
pub struct RecordingModel<M> {
    inner: M,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<M: ModelService> RecordingModel<M> {
    pub fn new(inner: M, path: PathBuf) -> Self {
        Self {
            inner,
            path,
            lock: Mutex::new(()),
        }
    }
}

impl<M: ModelService> ModelService for RecordingModel<M> {
    fn complete(&self, bundle: &PromptBundle, n: usize, temperature: f64) -> Result<Vec<String>, PromptError> {
        let completions = self.inner.complete(bundle, n, temperature)?;
        let rec = Recording {
            request: logical_request(bundle, n, temperature),
            completions: completions.clone(),
        };
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&rec).expect("recordings serialize"))?;
        Ok(completions)
    }
}

pub type Completion = Result<Vec<String>, PromptError>;

/// Complete many bundles with at most `max_in_flight` concurrent requests.
/// Results keep the input order.
pub fn complete_all(
    service: &dyn ModelService,
    bundles: &[PromptBundle],
    n: usize,
    temperature: f64,
    max_in_flight: usize,
) -> Vec<Completion> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Completion>>> = Mutex::new((0..bundles.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..max_in_flight.clamp(1, bundles.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= bundles.len() {
                    break;
                }
                let r = service.complete(&bundles[i], n, temperature);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every bundle is completed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Flavor, LicenseClass};
    use crate::oracle::RuleCategory;
    use crate::source::SourceText;

    fn shot_sample(i: usize, rule: &str, license: LicenseClass) -> FixSample {
        FixSample {
            id: format!("s{i}"),
            repo: format!("r{i}"),
            license_class: license,
            split: license.split(),
            rule: rule.into(),
            category: RuleCategory::SecurityFlow,
            message: String::new(),
            line: 1,
            flavor: Flavor::CodeReduced,
            pre: SourceText::new(&format!("pre{i}\n")),
            post: SourceText::new(&format!("post{i}\n")),
            mapping: None,
        }
    }

    #[test]
    fn structure() {
        let b = build_prompt("PT", "desc", &[], "code", true);
        assert_eq!(b.turns.len(), 1);
        assert!(b.system.ends_with("related to the fix."));
        let shots = vec![
            Shot { pre: "a".into(), post: "b".into() },
            Shot { pre: "c".into(), post: "d".into() },
        ];
        let b = build_prompt("PT", "desc", &shots, "code", false);
        assert_eq!(b.turns.len(), 5);
        assert_eq!(b.turns.last().unwrap().role, Role::User);
        assert_eq!(b.turns.iter().filter(|t| t.role == Role::Assistant).count(), 2);
        assert_eq!(b.system, SYSTEM_PREFIX);
        assert_eq!(
            b.turns[0].content,
            "Generate the fixed code for the bug PT with the error message desc. a"
        );
    }

    #[test]
    fn shot_selection_is_seeded_and_train_only() {
        let mut pool: Vec<FixSample> = (0..10).map(|i| shot_sample(i, "PT", LicenseClass::Permissive)).collect();
        pool.push(shot_sample(10, "PT", LicenseClass::Restrictive));
        pool.push(shot_sample(11, "SQLi", LicenseClass::Permissive));
        let a = select_shots(&pool, "PT", 3, 7).unwrap();
        let b = select_shots(&pool, "PT", 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|s| s.pre != "pre10\n" && s.pre != "pre11\n"));
        assert_eq!(select_shots(&pool, "SQLi", 5, 1).unwrap().len(), 1);
        assert!(matches!(
            select_shots(&pool, "DuplicateKey", 1, 1),
            Err(PromptError::NoShotsAvailable(_))
        ));
        assert!(select_shots(&pool, "DuplicateKey", 0, 1).unwrap().is_empty());
    }

    #[test]
    fn echo_and_replay() {
        let b = build_prompt("PT", "d", &[], "q", true);
        assert_eq!(EchoModel.complete(&b, 3, 0.2).unwrap(), vec!["q"; 3]);
        assert!(matches!(EchoModel.complete(&b, 0, 0.2), Err(PromptError::ZeroCompletions)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let rec = RecordingModel::new(EchoModel, path.clone());
        let live = rec.complete(&b, 2, 0.2).unwrap();
        let replay = ReplayModel::open(&path).unwrap();
        assert_eq!(replay.complete(&b, 2, 0.2).unwrap(), live);
        assert!(matches!(replay.complete(&b, 1, 0.2), Err(PromptError::NotRecorded)));
    }

    #[test]
    fn bounded_parallel_completion_keeps_order() {
        let bundles: Vec<PromptBundle> = (0..9).map(|i| build_prompt("R", "d", &[], &i.to_string(), true)).collect();
        let out = complete_all(&EchoModel, &bundles, 1, DEFAULT_TEMPERATURE, DEFAULT_MAX_IN_FLIGHT);
        let firsts: Vec<String> = out.into_iter().map(|r| r.unwrap().remove(0)).collect();
        assert_eq!(firsts, (0..9).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn choices_parsing() {
        let text = r#"{"choices":[{"message":{"role":"assistant","content":"x"}},{"message":{"content":"y"}}]}"#;
        assert_eq!(parse_choices(text).unwrap(), vec!["x", "y"]);
        assert!(parse_choices("{}").is_err());
    }
}
