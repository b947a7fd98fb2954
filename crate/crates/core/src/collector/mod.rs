//! Collects steered LLM answers for (question, subgroup) pairs from an
//! OpenAI-compatible chat endpoint, appending every reply to a JSONL file so
//! an interrupted run can resume where it stopped.

mod client;
mod mock;
mod parse;
mod prompt;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{Dataset, QuestionSpec, ResponseSample, Source, Subgroup, Tally};

pub use client::{CallError, ChatClient, HttpChatClient, Throttle};
pub use mock::{MockReply, MockScript, MockServer};
pub use parse::parse_choice;
pub use prompt::{build_prompt, PromptTemplates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    /// Full URL of the chat completions route.
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    /// Parsed answers wanted per (question, subgroup).
    pub samples_per_pair: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts per answer slot when the reply is not a single letter.
    pub max_retries: u32,
    /// Retries per request after HTTP 429 / 5xx / transport errors.
    pub max_http_retries: u32,
    /// Client-side rate limit; 0 disables it.
    pub requests_per_second: f64,
    pub concurrency: usize,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-3.5-turbo".into(),
            samples_per_pair: 100,
            temperature: 1.0,
            max_tokens: 4,
            max_retries: 3,
            max_http_retries: 8,
            requests_per_second: 5.0,
            concurrency: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 60,
        }
    }
}

impl CollectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_pair == 0 {
            return Err(Error::Config("samples_per_pair must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.requests_per_second < 0.0 || self.requests_per_second.is_nan() {
            return Err(Error::Config("requests_per_second must be >= 0".into()));
        }
        Ok(())
    }

    /// HTTP client for the configured endpoint with the key from the environment.
    pub fn http_client(&self) -> Result<HttpChatClient> {
        let key = HttpChatClient::api_key_from_env(&self.api_key_env)?;
        Ok(self.http_client_with_key(Some(key)))
    }

    pub fn http_client_with_key(&self, key: Option<String>) -> HttpChatClient {
        HttpChatClient::new(
            self.endpoint_url.clone(),
            key,
            self.model.clone(),
            self.temperature,
            self.max_tokens,
            Duration::from_secs(self.timeout_secs.max(1)),
        )
    }
}

/// One reply, as stored in the JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedResponse {
    pub question_id: String,
    pub subgroup: Subgroup,
    /// Which of the `samples_per_pair` answers this reply is for.
    pub slot: u32,
    /// 1-based attempt within the slot.
    pub attempt: u32,
    pub raw_text: String,
    pub parsed_option: Option<usize>,
    pub option_label: Option<String>,
    pub model: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectTarget {
    pub question: QuestionSpec,
    pub subgroup: Subgroup,
}

/// Every question crossed with every subgroup.
pub fn cross_targets(questions: &[QuestionSpec], subgroups: &[Subgroup]) -> Vec<CollectTarget> {
    questions
        .iter()
        .flat_map(|q| {
            subgroups.iter().map(move |s| CollectTarget {
                question: q.clone(),
                subgroup: s.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct CollectOptions {
    /// Stop after issuing this many HTTP requests in this run.
    pub request_budget: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CollectSummary {
    /// HTTP requests issued in this run, including rate-limited ones.
    pub requests: u64,
    pub parsed: u64,
    /// Replies that were not a single option letter.
    pub unparsed: u64,
    pub rate_limited: u64,
    pub transient_errors: u64,
    /// Slots already answered in the file before this run.
    pub resumed_slots: u64,
    /// Slots that used up every attempt without a parsable reply.
    pub exhausted_slots: u64,
    /// Slots still unanswered when the run ended.
    pub remaining_slots: u64,
    pub interrupted: bool,
}

type SlotKey = (String, Subgroup, u32);

/// Reads a JSONL response file. A trailing partial line (from a killed run)
/// is ignored; a bad line elsewhere is an error.
pub fn read_responses(path: impl AsRef<Path>) -> Result<Vec<CollectedResponse>> {
    Ok(scan_responses(path.as_ref())?.0)
}

/// Returns the parsed records and the byte length of the valid prefix.
fn scan_responses(path: &Path) -> Result<(Vec<CollectedResponse>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut valid = 0u64;
    let mut line = String::new();
    let mut lineno = 0u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            if complete {
                valid += n as u64;
            }
            continue;
        }
        match serde_json::from_str::<CollectedResponse>(line.trim_end()) {
            Ok(r) if complete => {
                out.push(r);
                valid += n as u64;
            }
            _ if !complete => break,
            Ok(_) => unreachable!(),
            Err(e) => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok((out, valid))
}

#[derive(Default, Clone, Copy)]
struct SlotState {
    attempts: u32,
    done: bool,
}

struct Work {
    target: usize,
    slot: u32,
    first_attempt: u32,
}

struct Shared<'a> {
    config: &'a CollectorConfig,
    client: &'a dyn ChatClient,
    throttle: Throttle,
    budget: Option<u64>,
    requests: AtomicU64,
    rate_limited: AtomicU64,
    transient: AtomicU64,
    parsed: AtomicU64,
    unparsed: AtomicU64,
    exhausted: AtomicU64,
    stop: AtomicBool,
    interrupted: AtomicBool,
    out: Mutex<File>,
    path: &'a Path,
}

impl Shared<'_> {
    fn reserve_request(&self) -> bool {
        if self.stop.load(Ordering::SeqCst) {
            return false;
        }
        if let Some(b) = self.budget {
            if self.requests.fetch_add(1, Ordering::SeqCst) >= b {
                self.requests.fetch_sub(1, Ordering::SeqCst);
                self.interrupted.store(true, Ordering::SeqCst);
                self.stop.store(true, Ordering::SeqCst);
                return false;
            }
        } else {
            self.requests.fetch_add(1, Ordering::SeqCst);
        }
        true
    }

    /// One reply, retrying 429 / 5xx with exponential backoff. `Ok(None)`
    /// means the run is stopping.
    fn call(&self, prompt: &str, context: &str) -> Result<Option<String>> {
        let max = Duration::from_millis(self.config.max_backoff_ms);
        let mut delay = Duration::from_millis(self.config.initial_backoff_ms).min(max);
        let mut failures = 0u32;
        loop {
            if !self.reserve_request() {
                return Ok(None);
            }
            self.throttle.wait();
            let wait = match self.client.complete(prompt) {
                Ok(text) => return Ok(Some(text)),
                Err(CallError::RateLimited { retry_after }) => {
                    self.rate_limited.fetch_add(1, Ordering::SeqCst);
                    retry_after.unwrap_or(delay)
                }
                Err(CallError::Transient(_)) => {
                    self.transient.fetch_add(1, Ordering::SeqCst);
                    delay
                }
                Err(CallError::Fatal(msg)) => {
                    return Err(Error::Upstream {
                        context: context.to_string(),
                        msg,
                    })
                }
            };
            failures += 1;
            if failures > self.config.max_http_retries {
                return Err(Error::Upstream {
                    context: context.to_string(),
                    msg: format!("giving up after {failures} failed requests"),
                });
            }
            std::thread::sleep(wait.min(max));
            delay = (delay * 2).min(max);
        }
    }

    fn append(&self, record: &CollectedResponse) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = self.out.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes()).map_err(|e| Error::io(self.path, e))?;
        f.flush().map_err(|e| Error::io(self.path, e))
    }

    fn run_slot(&self, target: &CollectTarget, prompt: &str, work: &Work) -> Result<()> {
        let context = format!("{} / {}", target.question.question_id(), target.subgroup);
        let last = self.config.max_retries + 1;
        for attempt in work.first_attempt..=last {
            let Some(raw_text) = self.call(prompt, &context)? else {
                return Ok(());
            };
            let parsed_option = parse_choice(&raw_text, &target.question);
            let record = CollectedResponse {
                question_id: target.question.question_id().to_string(),
                subgroup: target.subgroup.clone(),
                slot: work.slot,
                attempt,
                option_label: parsed_option.map(|i| target.question.options()[i].clone()),
                parsed_option,
                raw_text,
                model: self.config.model.clone(),
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            };
            self.append(&record)?;
            if parsed_option.is_some() {
                self.parsed.fetch_add(1, Ordering::SeqCst);
                return Ok(());
            }
            self.unparsed.fetch_add(1, Ordering::SeqCst);
        }
        self.exhausted.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

/// Fills every target up to `samples_per_pair` parsed answers, appending to
/// `output`. Slots already answered in `output` are not requested again.
pub fn collect(
    targets: &[CollectTarget],
    config: &CollectorConfig,
    templates: &PromptTemplates,
    client: &dyn ChatClient,
    output: impl AsRef<Path>,
    options: &CollectOptions,
) -> Result<CollectSummary> {
    config.validate()?;
    let output = output.as_ref();
    let prompts: Vec<String> = targets
        .iter()
        .map(|t| build_prompt(&t.question, &t.subgroup, templates))
        .collect::<Result<_>>()?;

    let (existing, valid_len) = scan_responses(output)?;
    let mut state: BTreeMap<SlotKey, SlotState> = BTreeMap::new();
    for r in &existing {
        let s = state.entry((r.question_id.clone(), r.subgroup.clone(), r.slot)).or_default();
        s.attempts = s.attempts.max(r.attempt);
        s.done |= r.parsed_option.is_some();
    }

    let mut summary = CollectSummary::default();
    let mut queue = VecDeque::new();
    for (ti, t) in targets.iter().enumerate() {
        for slot in 0..config.samples_per_pair {
            let s = state
                .get(&(t.question.question_id().to_string(), t.subgroup.clone(), slot))
                .copied()
                .unwrap_or_default();
            if s.done {
                summary.resumed_slots += 1;
            } else if s.attempts > config.max_retries {
                summary.exhausted_slots += 1;
            } else {
                queue.push_back(Work {
                    target: ti,
                    slot,
                    first_attempt: s.attempts + 1,
                });
            }
        }
    }

    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(output)
        .map_err(|e| Error::io(output, e))?;
    // Drop a torn last line before appending.
    file.set_len(valid_len).map_err(|e| Error::io(output, e))?;
    let mut file = file;
    std::io::Seek::seek(&mut file, std::io::SeekFrom::End(0)).map_err(|e| Error::io(output, e))?;

    let total = queue.len();
    let shared = Shared {
        config,
        client,
        throttle: Throttle::new(config.requests_per_second),
        budget: options.request_budget,
        requests: AtomicU64::new(0),
        rate_limited: AtomicU64::new(0),
        transient: AtomicU64::new(0),
        parsed: AtomicU64::new(0),
        unparsed: AtomicU64::new(0),
        exhausted: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        interrupted: AtomicBool::new(false),
        out: Mutex::new(file),
        path: output,
    };
    let queue = Mutex::new(queue);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.concurrency.min(total.max(1)) {
            scope.spawn(|| loop {
                if shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Some(work) = queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front() else {
                    break;
                };
                if let Err(e) = shared.run_slot(&targets[work.target], &prompts[work.target], &work) {
                    shared.stop.store(true, Ordering::SeqCst);
                    first_error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }

    summary.requests = shared.requests.load(Ordering::SeqCst);
    summary.parsed = shared.parsed.load(Ordering::SeqCst);
    summary.unparsed = shared.unparsed.load(Ordering::SeqCst);
    summary.rate_limited = shared.rate_limited.load(Ordering::SeqCst);
    summary.transient_errors = shared.transient.load(Ordering::SeqCst);
    let newly_exhausted = shared.exhausted.load(Ordering::SeqCst);
    summary.exhausted_slots += newly_exhausted;
    summary.remaining_slots = total as u64 - summary.parsed - newly_exhausted;
    summary.interrupted = shared.interrupted.load(Ordering::SeqCst);
    Ok(summary)
}

/// Builds the LLM side of a dataset from collected replies: one tally per
/// answered slot. Unparsed replies are dropped.
pub fn responses_to_dataset(responses: &[CollectedResponse], questions: &[QuestionSpec]) -> Result<Dataset> {
    let by_id: BTreeMap<&str, &QuestionSpec> = questions.iter().map(|q| (q.question_id(), q)).collect();
    let mut seen: BTreeSet<(&str, &Subgroup, u32)> = BTreeSet::new();
    let mut counts: BTreeMap<(&str, &Subgroup, usize), u64> = BTreeMap::new();
    let mut used: BTreeMap<&str, QuestionSpec> = BTreeMap::new();
    for r in responses {
        let q = by_id
            .get(r.question_id.as_str())
            .ok_or_else(|| Error::UnknownQuestion(r.question_id.clone()))?;
        used.insert(q.question_id(), (*q).clone());
        let Some(opt) = r.parsed_option else { continue };
        if opt >= q.k() {
            return Err(Error::InvalidQuestion {
                question: r.question_id.clone(),
                reason: format!("parsed option {opt} out of range for k = {}", q.k()),
            });
        }
        if seen.insert((&r.question_id, &r.subgroup, r.slot)) {
            *counts.entry((&r.question_id, &r.subgroup, opt)).or_default() += 1;
        }
    }
    let tallies = counts
        .into_iter()
        .map(|((qid, sg, opt), count)| Tally {
            sample: ResponseSample {
                question_id: qid.to_string(),
                source: Source::Llm,
                subgroup: sg.clone(),
                option_index: opt,
            },
            count,
        })
        .collect();
    Dataset::new(used.into_values().collect(), tallies)
}
