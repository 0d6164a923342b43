//! Prompt → update marker extraction.
//!
//! Three interchangeable extractors share the [`IntentExtractor`] contract:
//! a keyword rule table ([`keyword`]), an embedding + linear classifier
//! pipeline ([`svm`]), and an LLM with a few-shot template ([`llm`]).
//! Extractors never fail on service outages; they degrade to the no-change
//! marker and record why in [`Diagnostics`].

pub mod embed;
pub mod keyword;
pub mod llm;
pub mod svm;

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbeddingProvider, HashingEmbedder, HttpEmbedder};
pub use keyword::{keyword_extract, KeywordExtractor};
pub use llm::{parse_llm_response, render_llm_input, HttpLlmClient, LlmClient, LlmExtractor, SyntaxError};
pub use svm::{classify, train_classifier, ClassifierModel, SvmExtractor, TrainConfig};

/// Update direction for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Direction {
    Decrease,
    #[default]
    Keep,
    Increase,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Decrease, Direction::Keep, Direction::Increase];

    pub fn as_i8(self) -> i8 {
        match self {
            Direction::Decrease => -1,
            Direction::Keep => 0,
            Direction::Increase => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Direction::Decrease),
            0 => Some(Direction::Keep),
            1 => Some(Direction::Increase),
            _ => None,
        }
    }

    pub fn is_change(self) -> bool {
        self != Direction::Keep
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Direction::from_i8(v).ok_or_else(|| serde::de::Error::custom(format!("direction must be -1, 0 or 1, got {v}")))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Decrease => write!(f, "-1"),
            Direction::Keep => write!(f, "0"),
            Direction::Increase => write!(f, "+1"),
        }
    }
}

/// Per-prompt update directions for the CPU parameter and the latency bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct UpdateMarker {
    pub cpu: Direction,
    #[serde(rename = "lb")]
    pub latency_bound: Direction,
}

impl UpdateMarker {
    pub const NONE: UpdateMarker = UpdateMarker {
        cpu: Direction::Keep,
        latency_bound: Direction::Keep,
    };

    pub fn new(cpu: Direction, latency_bound: Direction) -> Self {
        UpdateMarker { cpu, latency_bound }
    }

    pub fn from_i8(cpu: i8, lb: i8) -> Option<Self> {
        Some(UpdateMarker {
            cpu: Direction::from_i8(cpu)?,
            latency_bound: Direction::from_i8(lb)?,
        })
    }

    pub fn get(&self, topic: Topic) -> Direction {
        match topic {
            Topic::Cpu => self.cpu,
            Topic::LatencyBound => self.latency_bound,
        }
    }

    /// All nine markers.
    pub fn all() -> impl Iterator<Item = UpdateMarker> {
        Direction::ALL
            .into_iter()
            .flat_map(|c| Direction::ALL.into_iter().map(move |b| UpdateMarker::new(c, b)))
    }
}

impl fmt::Display for UpdateMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.cpu, self.latency_bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Cpu,
    LatencyBound,
}

impl Topic {
    pub const ALL: [Topic; 2] = [Topic::Cpu, Topic::LatencyBound];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub prompt: String,
    pub marker: UpdateMarker,
}

impl LabeledSample {
    pub fn new(prompt: impl Into<String>, marker: UpdateMarker) -> Self {
        LabeledSample {
            prompt: prompt.into(),
            marker,
        }
    }
}

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("embedding dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream unavailable: {0}")]
    Unavailable(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// Which extractor produced a marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Keyword,
    Svm,
    Llm,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Keyword => "keyword",
            ExtractorKind::Svm => "svm",
            ExtractorKind::Llm => "llm",
        }
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keyword" => Ok(ExtractorKind::Keyword),
            "svm" => Ok(ExtractorKind::Svm),
            "llm" => Ok(ExtractorKind::Llm),
            other => Err(format!("unknown extractor '{other}' (expected keyword, svm or llm)")),
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub extractor: Option<ExtractorKind>,
    /// Wall-clock seconds spent in `extract`.
    pub elapsed_s: f64,
    #[serde(default)]
    pub syntax_error: bool,
    /// Set when an external service could not be reached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
    /// Per-topic classification seconds (cpu, latency bound).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_time_s: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub marker: UpdateMarker,
    pub diagnostics: Diagnostics,
}

/// Common contract of all extractors.
pub trait IntentExtractor: Send + Sync {
    fn kind(&self) -> ExtractorKind;

    fn extract(&self, prompt: &str) -> Result<Extraction, IntentError>;
}

pub(crate) fn check_prompt(prompt: &str) -> Result<(), IntentError> {
    if prompt.trim().is_empty() {
        Err(IntentError::EmptyPrompt)
    } else {
        Ok(())
    }
}

pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// Dataset file
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
struct DatasetRow {
    prompt: String,
    delta_cpu: String,
    delta_lb: String,
}

fn parse_delta(s: &str) -> Option<Direction> {
    match s.trim() {
        "+1" | "1" => Some(Direction::Increase),
        "0" | "+0" | "-0" => Some(Direction::Keep),
        "-1" => Some(Direction::Decrease),
        _ => None,
    }
}

/// Reads the tab-separated dataset format (`prompt\tdelta_cpu\tdelta_lb`).
pub fn load_dataset(bytes: &[u8]) -> Result<Vec<LabeledSample>, IntentError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(bytes);
    let headers = rdr.headers().map_err(|e| IntentError::Dataset(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["prompt", "delta_cpu", "delta_lb"] {
        return Err(IntentError::Dataset("expected header prompt\\tdelta_cpu\\tdelta_lb".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DatasetRow>().enumerate() {
        let row = row.map_err(|e| IntentError::Dataset(format!("row {}: {e}", i + 2)))?;
        let bad = || IntentError::Dataset(format!("row {}: markers must be -1, 0 or +1", i + 2));
        let cpu = parse_delta(&row.delta_cpu).ok_or_else(bad)?;
        let lb = parse_delta(&row.delta_lb).ok_or_else(bad)?;
        if row.prompt.trim().is_empty() {
            return Err(IntentError::Dataset(format!("row {}: empty prompt", i + 2)));
        }
        out.push(LabeledSample::new(row.prompt, UpdateMarker::new(cpu, lb)));
    }
    Ok(out)
}

pub fn write_dataset(samples: &[LabeledSample]) -> String {
    let mut s = String::from("prompt\tdelta_cpu\tdelta_lb\n");
    for sample in samples {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            sample.prompt, sample.marker.cpu, sample.marker.latency_bound
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Construction from configuration
// ---------------------------------------------------------------------------

/// Endpoint configuration read from `VNET_*` environment variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Endpoints {
    pub llm_endpoint: Option<String>,
    pub llm_api_key: Option<String>,
    pub llm_model: Option<String>,
    pub embed_endpoint: Option<String>,
}

impl Endpoints {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Endpoints {
            llm_endpoint: var("VNET_LLM_ENDPOINT"),
            llm_api_key: var("VNET_LLM_API_KEY"),
            llm_model: var("VNET_LLM_MODEL"),
            embed_endpoint: var("VNET_EMBED_ENDPOINT"),
        }
    }

    pub fn llm_client(&self) -> Option<HttpLlmClient> {
        self.llm_endpoint.as_ref().map(|url| {
            HttpLlmClient::new(
                url.clone(),
                self.llm_model.clone().unwrap_or_else(|| "default".into()),
                self.llm_api_key.clone(),
            )
        })
    }

    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.embed_endpoint {
            Some(url) => Arc::new(HttpEmbedder::new(url.clone())),
            None => Arc::new(HashingEmbedder::default()),
        }
    }
}

/// Builds an extractor of the given kind.
///
/// `training` feeds the classifier (svm) or the few-shot example list (llm).
/// An llm extractor without a configured endpoint is still built; every call
/// degrades to the no-change marker with an "unavailable" diagnostic.
pub fn build_extractor(
    kind: ExtractorKind,
    training: &[LabeledSample],
    endpoints: &Endpoints,
) -> Result<Arc<dyn IntentExtractor>, IntentError> {
    Ok(match kind {
        ExtractorKind::Keyword => Arc::new(KeywordExtractor),
        ExtractorKind::Svm => Arc::new(SvmExtractor::train(endpoints.embedder(), training, &TrainConfig::default())?),
        ExtractorKind::Llm => {
            let client: Arc<dyn LlmClient> = match endpoints.llm_client() {
                Some(c) => Arc::new(c),
                None => Arc::new(llm::UnconfiguredClient),
            };
            Arc::new(LlmExtractor::new(client, crate::fixtures::LLM_TEMPLATE, training.to_vec())?)
        }
    })
}
