//! Prompt construction, response parsing and completion providers.
//!
//! Providers take a [`Prompt`] and return raw text. The [`MockProvider`] reads
//! the structured [`PromptContext`] attached to each prompt and synthesizes
//! policies from mined hints, so the whole training loop runs offline. The
//! [`HttpProvider`] sends only the rendered text to a chat-completion endpoint.

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{render_profile, FounderRecord, Vocabulary};
use crate::policy::{parse_rule_line, serialize_policy, CalibrationStatus, Direction, Policy};
use crate::statistics::{CalibrationReport, Hints, MinedRule, FAILURE_PRUNE_FLOOR, SUCCESS_PRUNE_FLOOR};

pub const API_KEY_ENV: &str = "LLMAR_API_KEY";
pub const BASE_URL_ENV: &str = "LLMAR_BASE_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("no policy block found in response")]
    Extraction { raw: String },
    #[error("{kind} prompt is missing context: {what}")]
    MissingContext { kind: PromptKind, what: &'static str },
    #[error("provider {provider} failed after {attempts} attempts: {message}")]
    Provider {
        provider: String,
        attempts: usize,
        message: String,
    },
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Insight,
    Summarize,
    Reflect,
    Evaluate,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Insight => "insight",
            PromptKind::Summarize => "summarize",
            PromptKind::Reflect => "reflect",
            PromptKind::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated policy in a checkpoint window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub iteration: u32,
    pub policy: Policy,
    pub f_score: f64,
}

/// Structured inputs a prompt was rendered from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub hints: Option<Hints>,
    pub calibrated: Option<Policy>,
    pub report: Option<CalibrationReport>,
    pub window: Option<Vec<WindowEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
    pub batch_id: Option<usize>,
    pub iteration: u32,
    #[serde(skip)]
    pub context: PromptContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 2048,
            seed: 0,
        }
    }
}

const INSIGHT_TEMPLATE: &str = "You are a VC anaylst trying to predict the success of a startup based on some information about the founders.

Given the following founder's background and startup idea:
    Founder Profile (LinkedIn followed by Crunchbase): {founder_profile}
This startup was eventually {success_text}.
Clearly explain the most important reasons why this startup {success_verb}. Try to use simple vocabulary";

const SUMMARY_TEMPLATE: &str = "You are a VC analyst building a policy of logical prediction rules for founder success.

Below are insights explaining why individual founders in one batch succeeded or failed:

{insights}

Your current policy is:

{current_policy}

Summarize the aggregated insights into a list of logical prediction rules of the form:
IF condition_1 AND condition_2
THEN success/failure.
Assign a probability (confidence score) to each rule.
Use only these feature names, prefixing a feature with not_ to negate it: {features}

Return only the rules, in exactly this format:
Success rules:
feature_a AND feature_b,0.40

Failure rules:
not_feature_c AND not_feature_d,0.90";

const REFLECTION_TEMPLATE: &str = "You are a venture capital analyst evaluating startup success patterns.

You previously created intuitive logical rules about how founder attributes relate to success.

Now, compare those intuitive rules to empirical data, assess consistency, and revise the rules to better reflect observed probabilities.

Below are your original intuitive rules:

{logical_statements}

Here are the same rules with probabilities estimated from real data:

{calibrated_statements}

You are also optionally given:
- A few **high-probability success rules** discovered from the data:
  {success_rule_hints}

- One **high-probability failure rule** discovered from the data:
  {failure_rule_hints}

You may incorporate these hints only if they fit coherently within your revised logic.
---

### **Reasoning & Update Instructions**
1. **Compare** your intuitive probabilities with the data-calibrated ones.
2. If they differ, reason about *why*:
   - Were your intuitions biased or based on rare/outlier cases?
   - Is there insufficient data (\"not enough samples\")? If so, treat that rule as unreliable.
3. **Prune or adjust rules** as follows:
   - Remove rules with success probability < 0.1 (too low relative to random baseline 0.1).
   - Remove rules with failure probability < 0.9 (too low relative to random baseline 0.9).
   - Modify probabilities or logic as needed to align with the data.
4. You may **delete or modify** existing rules, but **must not create entirely new ones**.
5. Ensure all features follow the required naming format.

---

### **Output Requirements**
Return only your **final, modified rules** in exactly the same format as the original rules.
Double-check that all deletions and adjustments are correctly applied.
Do not include explanations or commentary-only the updated rules.";

const EVALUATION_TEMPLATE: &str = "You are a venture capital analyst reviewing how a prediction policy evolved during training.

Below are the policies of the most recent iterations, in order, each with its F_{beta} score on held-out founders:

{window}

Examine how the rules and the performance evolved over time, identify which modifications improved or degraded performance, and generate an updated policy accordingly.

Return only the updated policy, in exactly this format:
Success rules:
feature_a AND feature_b,0.40

Failure rules:
not_feature_c AND not_feature_d,0.90";

pub fn build_insight_prompt(record: &FounderRecord, label: Direction, batch_id: Option<usize>, iteration: u32) -> Prompt {
    let (success_text, success_verb) = match label {
        Direction::Success => ("successful", "succeeded"),
        Direction::Failure => ("unsuccessful", "failed"),
    };
    let profile = format!("\n{}", render_profile(record).trim_end());
    let text = INSIGHT_TEMPLATE
        .replace("{founder_profile}", &profile)
        .replace("{success_text}", success_text)
        .replace("{success_verb}", success_verb);
    Prompt {
        kind: PromptKind::Insight,
        text,
        batch_id,
        iteration,
        context: PromptContext::default(),
    }
}

fn hint_line(rule: &MinedRule) -> String {
    format!("{},{:.2}", rule.body_text(), rule.confidence)
}

fn hint_block(rules: &[MinedRule]) -> String {
    if rules.is_empty() {
        "(none provided)".into()
    } else {
        rules.iter().map(hint_line).collect::<Vec<_>>().join("\n  ")
    }
}

/// Summarization prompt over one batch of insights. The hints ride along in the
/// context for providers that synthesize rules from data.
pub fn build_summary_prompt(
    insights: &[String],
    current: &Policy,
    vocabulary: &Vocabulary,
    hints: &Hints,
    batch_id: Option<usize>,
    iteration: u32,
) -> Prompt {
    let insights = insights
        .iter()
        .enumerate()
        .map(|(i, s)| format!("Founder {}:\n{}", i + 1, s.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let current = if current.is_empty() {
        "(no rules yet)".to_string()
    } else {
        serialize_policy(current).trim_end().to_string()
    };
    let text = SUMMARY_TEMPLATE
        .replace("{insights}", &insights)
        .replace("{current_policy}", &current)
        .replace("{features}", &vocabulary.names().join(", "));
    Prompt {
        kind: PromptKind::Summarize,
        text,
        batch_id,
        iteration,
        context: PromptContext {
            hints: Some(hints.clone()),
            ..Default::default()
        },
    }
}

/// Calibrated rules rendered with their data flags.
pub fn calibrated_statements(calibrated: &Policy) -> String {
    let mut out = String::from("Success rules:\n");
    for direction in [Direction::Success, Direction::Failure] {
        if direction == Direction::Failure {
            out.push_str("\nFailure rules:\n");
        }
        for rule in calibrated.rules(direction) {
            out.push_str(&rule.to_string());
            if rule.calibration == CalibrationStatus::InsufficientSamples {
                out.push_str(" (not enough samples)");
            }
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

pub fn build_reflection_prompt(
    original: &Policy,
    calibrated: &Policy,
    report: &CalibrationReport,
    hints: &Hints,
    iteration: u32,
) -> Prompt {
    let text = REFLECTION_TEMPLATE
        .replace("{logical_statements}", serialize_policy(original).trim_end())
        .replace("{calibrated_statements}", &calibrated_statements(calibrated))
        .replace("{success_rule_hints}", &hint_block(&hints.success))
        .replace("{failure_rule_hints}", &hint_block(&hints.failure));
    Prompt {
        kind: PromptKind::Reflect,
        text,
        batch_id: None,
        iteration,
        context: PromptContext {
            hints: Some(hints.clone()),
            calibrated: Some(calibrated.clone()),
            report: Some(report.clone()),
            window: None,
        },
    }
}

pub fn build_evaluation_prompt(window: &[WindowEntry], beta: f64, iteration: u32) -> Prompt {
    let rendered = window
        .iter()
        .map(|e| {
            format!(
                "Iteration {} (F_{beta} = {:.1}%):\n{}",
                e.iteration,
                e.f_score * 100.0,
                serialize_policy(&e.policy).trim_end()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let text = EVALUATION_TEMPLATE
        .replace("{beta}", &beta.to_string())
        .replace("{window}", &rendered);
    Prompt {
        kind: PromptKind::Evaluate,
        text,
        batch_id: None,
        iteration,
        context: PromptContext {
            window: Some(window.to_vec()),
            ..Default::default()
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub policy: Policy,
    pub warnings: Vec<String>,
}

fn clean_line(line: &str) -> &str {
    line.trim().trim_matches(|c: char| c == '*' || c == '#' || c == '`' || c.is_whitespace())
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    line
}

fn header(line: &str) -> Option<Direction> {
    match clean_line(line).to_ascii_lowercase().as_str() {
        "success rules:" | "success rules" => Some(Direction::Success),
        "failure rules:" | "failure rules" => Some(Direction::Failure),
        _ => None,
    }
}

fn looks_like_rule(line: &str) -> bool {
    line.rsplit_once(',')
        .map(|(_, p)| p.trim().trim_end_matches('.').parse::<f64>().is_ok())
        .unwrap_or(false)
}

/// Extracts the first policy block from free-form model output.
///
/// The block starts at the first section header and ends where a second block
/// would begin. Prose lines inside it are ignored. Rule-shaped lines that fail
/// to parse, repeat a body, or use features outside `vocabulary` are dropped
/// with a warning. Never panics.
pub fn parse_policy_response(text: &str, vocabulary: Option<&Vocabulary>) -> Result<ParsedResponse, LlmError> {
    let mut policy = Policy::default();
    let mut warnings = Vec::new();
    let mut section: Option<Direction> = None;
    let mut seen_failure_header = false;
    for (i, raw) in text.lines().enumerate() {
        if let Some(dir) = header(raw) {
            if section.is_some() && seen_failure_header && dir == Direction::Success {
                break;
            }
            seen_failure_header |= dir == Direction::Failure;
            section = Some(dir);
            continue;
        }
        let Some(direction) = section else { continue };
        let line = strip_bullet(clean_line(raw)).trim_end_matches('.');
        if line.is_empty() || !looks_like_rule(line) {
            continue;
        }
        let rule = match parse_rule_line(line, direction) {
            Ok(rule) => rule,
            Err(e) => {
                warnings.push(format!("line {}: dropped {line:?}: {e}", i + 1));
                continue;
            }
        };
        if let Some(vocab) = vocabulary {
            let unknown: Vec<&str> = rule.atoms().filter(|a| !vocab.contains(a)).collect();
            if !unknown.is_empty() {
                warnings.push(format!(
                    "line {}: dropped {line:?}: unknown feature {}",
                    i + 1,
                    unknown.join(", ")
                ));
                continue;
            }
        }
        if let Err(e) = policy.push(rule) {
            warnings.push(format!("line {}: dropped {line:?}: {e}", i + 1));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if policy.is_empty() {
        return Err(LlmError::Extraction { raw: text.to_string() });
    }
    Ok(ParsedResponse { policy, warnings })
}

/// Text-in, text-out completion. Implementations must tolerate concurrent calls.
pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, LlmError>;
}

/// Deterministic offline provider driven by the prompt context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockProvider {
    pub max_success_rules: usize,
    pub max_failure_rules: usize,
}

impl Default for MockProvider {
    fn default() -> Self {
        MockProvider {
            max_success_rules: 3,
            max_failure_rules: 2,
        }
    }
}

impl MockProvider {
    /// Completion for `prompt`; identical (prompt, seed) always give identical text.
    pub fn mock_complete(&self, prompt: &Prompt, seed: u64) -> Result<String, LlmError> {
        let missing = |what| LlmError::MissingContext { kind: prompt.kind, what };
        match prompt.kind {
            PromptKind::Insight => Ok(self.insight(prompt, seed)),
            PromptKind::Summarize => {
                let hints = prompt.context.hints.as_ref().ok_or_else(|| missing("hints"))?;
                let mut policy = Policy::default();
                for rule in hints.success.iter().chain(&hints.failure) {
                    // rendering at 2 decimals can only collide on identical bodies
                    let _ = policy.push(rule.to_rule());
                }
                Ok(serialize_policy(&policy))
            }
            PromptKind::Reflect => {
                let hints = prompt.context.hints.as_ref().ok_or_else(|| missing("hints"))?;
                let calibrated = prompt.context.calibrated.as_ref().ok_or_else(|| missing("calibrated policy"))?;
                Ok(format!("Modified rules:\n\n{}", serialize_policy(&self.reflect(calibrated, hints))))
            }
            PromptKind::Evaluate => {
                let window = prompt.context.window.as_ref().ok_or_else(|| missing("policy window"))?;
                let best = window
                    .iter()
                    .max_by(|a, b| a.f_score.total_cmp(&b.f_score))
                    .ok_or_else(|| missing("nonempty policy window"))?;
                Ok(format!(
                    "Iteration {} performed best; keeping its rules.\n\n{}",
                    best.iteration,
                    serialize_policy(&best.policy)
                ))
            }
        }
    }

    fn insight(&self, prompt: &Prompt, seed: u64) -> String {
        let outcome = if prompt.text.contains("eventually successful") {
            "succeeded"
        } else {
            "failed"
        };
        let traits: Vec<&str> = prompt
            .text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .collect();
        let mut out = format!("Here are the key reasons why this startup {outcome}:\n");
        if !traits.is_empty() {
            let start = (seed as usize) % traits.len();
            for (k, t) in traits.iter().cycle().skip(start).take(3.min(traits.len())).enumerate() {
                out.push_str(&format!("{}. The founder {t}.\n", k + 1));
            }
        }
        out
    }

    /// Prunes the calibrated policy with the reflection floors, adopts hints
    /// that are not already present, and keeps the strongest rules per direction.
    pub fn reflect(&self, calibrated: &Policy, hints: &Hints) -> Policy {
        let mut out = Policy::default();
        for direction in [Direction::Success, Direction::Failure] {
            let floor = match direction {
                Direction::Success => SUCCESS_PRUNE_FLOOR,
                Direction::Failure => FAILURE_PRUNE_FLOOR,
            };
            let mut rules: Vec<_> = calibrated
                .rules(direction)
                .iter()
                .filter(|r| r.calibration != CalibrationStatus::InsufficientSamples && r.probability >= floor)
                .cloned()
                .collect();
            for hint in hints.get(direction) {
                let rule = hint.to_rule();
                if rule.probability >= floor && !rules.iter().any(|r| r.body_key() == rule.body_key()) {
                    rules.push(rule);
                }
            }
            rules.sort_by(|a, b| b.probability.total_cmp(&a.probability));
            let cap = match direction {
                Direction::Success => self.max_success_rules,
                Direction::Failure => self.max_failure_rules,
            };
            rules.truncate(cap);
            for rule in rules {
                let _ = out.push(rule);
            }
        }
        out
    }
}

impl CompletionProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, LlmError> {
        self.mock_complete(prompt, params.seed)
    }
}

/// Chat-completion client for OpenAI-compatible JSON endpoints.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: usize,
    pub initial_backoff: Duration,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

impl HttpProvider {
    /// Reads the endpoint and key from `LLMAR_BASE_URL` / `LLMAR_API_KEY`.
    pub fn from_env(model: &str) -> Result<Self, LlmError> {
        let base_url = std::env::var(BASE_URL_ENV)
            .map_err(|_| LlmError::Config(format!("{BASE_URL_ENV} is not set")))?;
        Ok(HttpProvider {
            base_url,
            api_key: std::env::var(API_KEY_ENV).ok(),
            model: model.to_string(),
            timeout: Duration::from_secs(120),
            max_retries: 4,
            initial_backoff: Duration::from_millis(500),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, agent: &ureq::Agent, body: &ChatRequest<'_>) -> Result<String, (bool, String)> {
        let mut req = agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| {
            let retryable = match &e {
                ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
                _ => true,
            };
            (retryable, e.to_string())
        })?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| (false, "response has no choices".to_string()))
    }
}

impl CompletionProvider for HttpProvider {
    fn id(&self) -> &str {
        "remote"
    }

    fn complete(&self, prompt: &Prompt, params: &DecodingParams) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &prompt.text,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let mut backoff = self.initial_backoff;
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&agent, &body) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    log::warn!("{} attempt {attempt}/{attempts} failed: {message}", self.endpoint());
                    last = message;
                    if !retryable {
                        return Err(LlmError::Provider {
                            provider: self.id().into(),
                            attempts: attempt,
                            message: last,
                        });
                    }
                    if attempt < attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LlmError::Provider {
            provider: self.id().into(),
            attempts,
            message: last,
        })
    }
}

/// Runs each `(prompt, params)` job through `provider` with at most
/// `max_in_flight` concurrent requests. Results come back in input order.
pub fn complete_all(
    provider: &dyn CompletionProvider,
    jobs: &[(Prompt, DecodingParams)],
    max_in_flight: usize,
) -> Vec<Result<String, LlmError>> {
    let width = max_in_flight.max(1);
    let mut out = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(width) {
        if let [(prompt, params)] = chunk {
            out.push(provider.complete(prompt, params));
            continue;
        }
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(p, params)| s.spawn(move || provider.complete(p, params)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(LlmError::Provider {
                            provider: provider.id().into(),
                            attempts: 1,
                            message: "worker panicked".into(),
                        })
                    })
                })
                .collect()
        });
        out.extend(results);
    }
    out
}
