//! Text embedding providers.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::IntentError;

pub trait EmbeddingProvider: Send + Sync {
    /// Stable provider name, recorded alongside trained models.
    fn name(&self) -> String;

    fn embed(&self, text: &str) -> Result<Vec<f64>, IntentError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, IntentError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Offline fallback: signed feature hashing of unigrams and bigrams,
/// L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 512 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Lowercased word tokens with a crude plural strip ("cpus" -> "cpu").
pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(|t| {
            let t = t.strip_suffix("'s").unwrap_or(t);
            if t.len() > 3 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

impl HashingEmbedder {
    fn add(&self, v: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn name(&self) -> String {
        format!("hashing-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, IntentError> {
        let toks = tokens(text);
        let mut v = vec![0.0; self.dim];
        for t in &toks {
            self.add(&mut v, t);
        }
        for pair in toks.windows(2) {
            self.add(&mut v, &format!("{} {}", pair[0], pair[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote provider: `POST {"texts": [..]}` → `{"vectors": [[..]]}`.
pub struct HttpEmbedder {
    url: String,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(url: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpEmbedder { url, agent }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> String {
        format!("http:{}", self.url)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, IntentError> {
        self.embed_batch(&[text])?
            .pop()
            .ok_or_else(|| IntentError::Transport("empty embedding response".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, IntentError> {
        let resp: EmbedResponse = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| IntentError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| IntentError::Transport(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(IntentError::Transport(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        Ok(resp.vectors)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
