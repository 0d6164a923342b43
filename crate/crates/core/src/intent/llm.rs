//! LLM extractor: few-shot template rendering, transport, and JSON
//! response parsing.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    check_prompt, timed, Diagnostics, Direction, Extraction, ExtractorKind, IntentError, IntentExtractor,
    LabeledSample, UpdateMarker,
};

const EXAMPLE_SLOT: &str = "{{example}}";
const PROMPT_SLOT: &str = "{{prompt}}";

fn cpu_word(d: Direction) -> &'static str {
    match d {
        Direction::Increase => "increase",
        Direction::Decrease => "decrease",
        Direction::Keep => "none",
    }
}

fn latency_word(d: Direction) -> &'static str {
    match d {
        Direction::Increase => "ease",
        Direction::Decrease => "reduce",
        Direction::Keep => "none",
    }
}

fn cpu_from_word(w: &str) -> Option<Direction> {
    match w.trim().to_ascii_lowercase().as_str() {
        "increase" => Some(Direction::Increase),
        "decrease" => Some(Direction::Decrease),
        "none" => Some(Direction::Keep),
        _ => None,
    }
}

fn latency_from_word(w: &str) -> Option<Direction> {
    match w.trim().to_ascii_lowercase().as_str() {
        "ease" => Some(Direction::Increase),
        "reduce" => Some(Direction::Decrease),
        "none" => Some(Direction::Keep),
        _ => None,
    }
}

/// The fenced JSON block for a marker, in the response format the template asks for.
pub fn marker_block(m: &UpdateMarker) -> String {
    format!(
        "```\n{{\n    \"cpu\": \"{}\",\n    \"latencybound\": \"{}\"\n}}\n```",
        cpu_word(m.cpu),
        latency_word(m.latency_bound)
    )
}

/// Fills the template: each example becomes a `Prompt:` line followed by its
/// fenced marker, and the user prompt replaces `{{prompt}}` verbatim.
pub fn render_llm_input(template: &str, examples: &[LabeledSample], prompt: &str) -> Result<String, IntentError> {
    if !template.contains(EXAMPLE_SLOT) {
        return Err(IntentError::MissingPlaceholder(EXAMPLE_SLOT));
    }
    if !template.contains(PROMPT_SLOT) {
        return Err(IntentError::MissingPlaceholder(PROMPT_SLOT));
    }
    let block = examples
        .iter()
        .map(|e| format!("Prompt: {}\n{}", e.prompt, marker_block(&e.marker)))
        .collect::<Vec<_>>()
        .join("\n\n");
    // Substitute the prompt last so a prompt containing "{{example}}" stays verbatim.
    let (head, tail) = template.split_once(PROMPT_SLOT).expect("checked above");
    let head = head.replacen(EXAMPLE_SLOT, &block, 1);
    let tail = tail.replacen(EXAMPLE_SLOT, &block, 1);
    Ok(format!("{head}{prompt}{tail}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError;

impl std::fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("no valid marker object in response")
    }
}

/// Byte ranges of balanced `{...}` spans, skipping braces inside strings.
fn object_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(end) => {
                spans.push((open, end + 1));
                start = open + 1;
            }
            None => break,
        }
    }
    spans
}

fn marker_from_value(v: &Value) -> Option<UpdateMarker> {
    let obj = v.as_object()?;
    let cpu = cpu_from_word(obj.get("cpu")?.as_str()?)?;
    let lb = latency_from_word(obj.get("latencybound")?.as_str()?)?;
    Some(UpdateMarker::new(cpu, lb))
}

/// Extracts the marker from a free-form response. Every JSON object in the
/// text is a candidate (fenced or bare); the last one carrying legal `cpu`
/// and `latencybound` values wins.
pub fn parse_llm_response(text: &str) -> Result<UpdateMarker, SyntaxError> {
    object_spans(text)
        .into_iter()
        .rev()
        .filter_map(|(a, b)| serde_json::from_str::<Value>(&text[a..b]).ok())
        .find_map(|v| marker_from_value(&v))
        .ok_or(SyntaxError)
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

pub trait LlmClient: Send + Sync {
    fn complete(&self, input: &str) -> Result<String, IntentError>;
}

/// Client used when no endpoint is configured; every call is unavailable.
pub struct UnconfiguredClient;

impl LlmClient for UnconfiguredClient {
    fn complete(&self, _input: &str) -> Result<String, IntentError> {
        Err(IntentError::Unavailable("VNET_LLM_ENDPOINT is not set".into()))
    }
}

/// Counting semaphore bounding in-flight requests.
struct InflightLimit {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl InflightLimit {
    fn new(max: usize) -> Self {
        InflightLimit {
            used: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut used = self.used.lock().unwrap();
            while *used >= self.max {
                used = self.freed.wait(used).unwrap();
            }
            *used += 1;
        }
        let out = f();
        *self.used.lock().unwrap() -= 1;
        self.freed.notify_one();
        out
    }
}

/// Request shape on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireFormat {
    /// `{"model", "prompt", "temperature"}` → `{"text"}`.
    Simple,
    /// OpenAI-style `/chat/completions`.
    ChatCompletions,
}

/// HTTP client for the LLM endpoint. URLs ending in `/chat/completions`
/// use the chat-completion wire format; others use the simple shape.
pub struct HttpLlmClient {
    url: String,
    model: String,
    api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    wire: WireFormat,
    agent: ureq::Agent,
    limit: InflightLimit,
}

#[derive(Deserialize)]
struct SimpleResponse {
    text: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpLlmClient {
    pub fn new(url: String, model: String, api_key: Option<String>) -> Self {
        let wire = if url.trim_end_matches('/').ends_with("/chat/completions") {
            WireFormat::ChatCompletions
        } else {
            WireFormat::Simple
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpLlmClient {
            url,
            model,
            api_key,
            temperature: 0.0,
            max_tokens: 512,
            wire,
            agent,
            limit: InflightLimit::new(4),
        }
    }

    pub fn with_max_inflight(mut self, n: usize) -> Self {
        self.limit = InflightLimit::new(n);
        self
    }

    pub fn wire_format(&self) -> WireFormat {
        self.wire
    }

    fn body(&self, input: &str) -> Value {
        match self.wire {
            WireFormat::Simple => serde_json::json!({
                "model": self.model,
                "prompt": input,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            }),
            WireFormat::ChatCompletions => serde_json::json!({
                "model": self.model,
                "messages": [{"role": "user", "content": input}],
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            }),
        }
    }

    fn request(&self, input: &str) -> Result<String, IntentError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.body(input))
            .map_err(|e| IntentError::Transport(e.to_string()))?;
        let body = resp.body_mut();
        match self.wire {
            WireFormat::Simple => body
                .read_json::<SimpleResponse>()
                .map(|r| r.text)
                .map_err(|e| IntentError::Transport(e.to_string())),
            WireFormat::ChatCompletions => body
                .read_json::<ChatResponse>()
                .map_err(|e| IntentError::Transport(e.to_string()))?
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| IntentError::Transport("response has no choices".into())),
        }
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, input: &str) -> Result<String, IntentError> {
        self.limit.run(|| self.request(input))
    }
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

pub struct LlmExtractor {
    client: Arc<dyn LlmClient>,
    template: String,
    examples: Vec<LabeledSample>,
    /// Extra attempts after a transport failure.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub rendered_input: String,
    pub raw_response: Option<String>,
    pub parsed: Result<UpdateMarker, SyntaxError>,
    pub elapsed_s: f64,
}

impl LlmExtractor {
    pub fn new(client: Arc<dyn LlmClient>, template: &str, examples: Vec<LabeledSample>) -> Result<Self, IntentError> {
        // Validate placeholders up front.
        render_llm_input(template, &[], "")?;
        Ok(LlmExtractor {
            client,
            template: template.to_string(),
            examples,
            retries: 1,
        })
    }

    /// Runs one prompt through the model. `Err` only on transport failure
    /// after the retry budget.
    pub fn exchange(&self, prompt: &str) -> Result<LlmExchange, (String, IntentError)> {
        let rendered = render_llm_input(&self.template, &self.examples, prompt).map_err(|e| (String::new(), e))?;
        let (result, elapsed) = timed(|| {
            let mut last = None;
            for _ in 0..=self.retries {
                match self.client.complete(&rendered) {
                    Ok(text) => return Ok(text),
                    Err(e @ IntentError::Unavailable(_)) => return Err(e),
                    Err(e) => {
                        log::warn!("llm request failed: {e}");
                        last = Some(e);
                    }
                }
            }
            Err(last.expect("at least one attempt"))
        });
        match result {
            Ok(text) => Ok(LlmExchange {
                parsed: parse_llm_response(&text),
                rendered_input: rendered,
                raw_response: Some(text),
                elapsed_s: elapsed,
            }),
            Err(e) => Err((rendered, e)),
        }
    }
}

impl IntentExtractor for LlmExtractor {
    fn kind(&self) -> ExtractorKind {
        ExtractorKind::Llm
    }

    fn extract(&self, prompt: &str) -> Result<Extraction, IntentError> {
        check_prompt(prompt)?;
        let mut diagnostics = Diagnostics {
            extractor: Some(ExtractorKind::Llm),
            ..Default::default()
        };
        let (result, elapsed) = timed(|| self.exchange(prompt));
        diagnostics.elapsed_s = elapsed;
        let marker = match result {
            Ok(x) => {
                diagnostics.raw_response = x.raw_response;
                match x.parsed {
                    Ok(m) => m,
                    Err(SyntaxError) => {
                        diagnostics.syntax_error = true;
                        UpdateMarker::NONE
                    }
                }
            }
            Err((_, e)) => {
                diagnostics.unavailable = Some(e.to_string());
                UpdateMarker::NONE
            }
        };
        Ok(Extraction { marker, diagnostics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const TEMPLATE: &str = "### Example\n{{example}}\n### Prompt\n{{prompt}}\n";

    fn m(cpu: i8, lb: i8) -> UpdateMarker {
        UpdateMarker::from_i8(cpu, lb).unwrap()
    }

    #[test]
    fn zero_shot_render() {
        let out = render_llm_input(TEMPLATE, &[], "Get more CPUs").unwrap();
        assert_eq!(out, "### Example\n\n### Prompt\nGet more CPUs\n");
        assert!(!out.contains("Prompt: "));
    }

    #[test]
    fn one_example_render() {
        let ex = [LabeledSample::new("I want more CPU", m(1, 0))];
        let out = render_llm_input(TEMPLATE, &ex, "hi").unwrap();
        assert!(out.contains("Prompt: I want more CPU\n```\n{"));
        assert!(out.contains("\"cpu\": \"increase\""));
        assert!(out.contains("\"latencybound\": \"none\""));
    }

    #[test]
    fn prompt_is_verbatim() {
        let out = render_llm_input(TEMPLATE, &[], "weird {{example}} text").unwrap();
        assert!(out.ends_with("weird {{example}} text\n"));
    }

    #[test]
    fn missing_placeholders() {
        assert!(matches!(
            render_llm_input("{{prompt}}", &[], "x"),
            Err(IntentError::MissingPlaceholder(EXAMPLE_SLOT))
        ));
        assert!(matches!(
            render_llm_input("{{example}}", &[], "x"),
            Err(IntentError::MissingPlaceholder(PROMPT_SLOT))
        ));
    }

    #[test]
    fn parse_bare_and_fenced() {
        assert_eq!(parse_llm_response(r#"{"cpu":"decrease","latencybound":"ease"}"#), Ok(m(-1, 1)));
        let text = "thinking...\n```json\n{\n \"cpu\": \"none\", \"latencybound\": \"reduce\"\n}\n```";
        assert_eq!(parse_llm_response(text), Ok(m(0, -1)));
    }

    #[test]
    fn parse_last_legal_candidate_wins() {
        let text = r#"first {"cpu":"increase","latencybound":"none"} then {"cpu":"decrease","latencybound":"none"} and {"cpu":"bogus","latencybound":"none"}"#;
        assert_eq!(parse_llm_response(text), Ok(m(-1, 0)));
    }

    #[test]
    fn parse_failures() {
        assert_eq!(parse_llm_response("no json here"), Err(SyntaxError));
        assert_eq!(parse_llm_response(r#"{"cpu":"increase"}"#), Err(SyntaxError));
        assert_eq!(parse_llm_response(r#"{"cpu":"more","latencybound":"none"}"#), Err(SyntaxError));
        assert_eq!(parse_llm_response("{ unterminated"), Err(SyntaxError));
    }

    #[test]
    fn braces_inside_strings() {
        let text = r#"{"note":"a } brace","cpu":"increase","latencybound":"ease"}"#;
        assert_eq!(parse_llm_response(text), Ok(m(1, 1)));
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
        reply: String,
    }

    impl LlmClient for Flaky {
        fn complete(&self, _input: &str) -> Result<String, IntentError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(IntentError::Transport("connection reset".into()))
            } else {
                Ok(self.reply.clone())
            }
        }
    }

    fn flaky(fail_first: usize, reply: &str) -> Arc<Flaky> {
        Arc::new(Flaky {
            calls: AtomicUsize::new(0),
            fail_first,
            reply: reply.into(),
        })
    }

    #[test]
    fn one_retry_then_success() {
        let client = flaky(1, r#"{"cpu":"increase","latencybound":"none"}"#);
        let x = LlmExtractor::new(client.clone(), TEMPLATE, vec![]).unwrap();
        let out = x.extract("more cpu").unwrap();
        assert_eq!(out.marker, m(1, 0));
        assert_eq!(client.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn degrades_after_retry_budget() {
        let client = flaky(5, "");
        let x = LlmExtractor::new(client.clone(), TEMPLATE, vec![]).unwrap();
        let out = x.extract("more cpu").unwrap();
        assert_eq!(out.marker, UpdateMarker::NONE);
        assert!(out.diagnostics.unavailable.is_some());
        assert_eq!(client.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn syntax_error_maps_to_none() {
        let x = LlmExtractor::new(flaky(0, "I refuse."), TEMPLATE, vec![]).unwrap();
        let out = x.extract("more cpu").unwrap();
        assert_eq!(out.marker, UpdateMarker::NONE);
        assert!(out.diagnostics.syntax_error);
        assert!(out.diagnostics.unavailable.is_none());
    }

    #[test]
    fn unconfigured_is_unavailable_without_retry() {
        let x = LlmExtractor::new(Arc::new(UnconfiguredClient), TEMPLATE, vec![]).unwrap();
        let out = x.extract("more cpu").unwrap();
        assert!(out.diagnostics.unavailable.unwrap().contains("VNET_LLM_ENDPOINT"));
    }

    #[test]
    fn wire_format_detection() {
        let c = HttpLlmClient::new("http://h/v1/chat/completions".into(), "m".into(), None);
        assert_eq!(c.wire_format(), WireFormat::ChatCompletions);
        let c = HttpLlmClient::new("http://h/generate".into(), "m".into(), None);
        assert_eq!(c.wire_format(), WireFormat::Simple);
        assert_eq!(c.body("x")["prompt"], "x");
        assert_eq!(c.body("x")["temperature"], 0.0);
    }
}
