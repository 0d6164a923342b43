//! Embedding + linear classifier extractor.
//!
//! One classifier per topic, each a one-vs-rest set of three linear SVMs
//! (classes -1, 0, +1) trained with Pegasos-style hinge-loss subgradient
//! descent. The bias is learned as the weight of a constant feature and is
//! regularized with the rest of the vector.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_prompt, timed, Diagnostics, Direction, EmbeddingProvider, Extraction, ExtractorKind, IntentError,
    IntentExtractor, LabeledSample, Topic, UpdateMarker,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            epochs: 200,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub topic: Topic,
    /// Class order is always [-1, 0, +1].
    pub weights: [Vec<f64>; 3],
    pub biases: [f64; 3],
    pub dim: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ClassifierModel {
    pub fn zeros(topic: Topic, dim: usize) -> Self {
        ClassifierModel {
            topic,
            weights: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            biases: [0.0; 3],
            dim,
            warnings: Vec::new(),
        }
    }

    pub fn scores(&self, e: &[f64]) -> Result<[f64; 3], IntentError> {
        if e.len() != self.dim {
            return Err(IntentError::DimensionMismatch {
                expected: self.dim,
                got: e.len(),
            });
        }
        let mut s = [0.0; 3];
        for (k, w) in self.weights.iter().enumerate() {
            s[k] = w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() + self.biases[k];
        }
        Ok(s)
    }
}

/// Argmax of the class scores. Ties go to 0 first, then to -1.
pub fn classify(model: &ClassifierModel, e: &[f64]) -> Result<Direction, IntentError> {
    let s = model.scores(e)?;
    // Preference order for ties: Keep, Decrease, Increase.
    let order = [(1usize, Direction::Keep), (0, Direction::Decrease), (2, Direction::Increase)];
    let mut best = order[0];
    for cand in &order[1..] {
        if s[cand.0] > s[best.0] {
            best = *cand;
        }
    }
    Ok(best.1)
}

fn class_index(d: Direction) -> usize {
    (d.as_i8() + 1) as usize
}

/// Trains the one-vs-rest classifier for `topic` from pre-embedded samples.
///
/// A class with no samples gets a zero weight vector and bias -1 (the
/// decision value of a class that is never positive) plus a warning.
pub fn train_on_embeddings(
    embeddings: &[Vec<f64>],
    labels: &[Direction],
    topic: Topic,
    config: &TrainConfig,
) -> Result<ClassifierModel, IntentError> {
    if embeddings.is_empty() {
        return Err(IntentError::EmptyTrainingSet);
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(IntentError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut model = ClassifierModel::zeros(topic, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..embeddings.len()).collect();

    for (k, class) in Direction::ALL.into_iter().enumerate() {
        if !labels.contains(&class) {
            model.biases[k] = -1.0;
            model.warnings.push(format!("no samples for class {class} in topic {topic:?}"));
        }
    }
    let present: Vec<usize> = Direction::ALL
        .into_iter()
        .enumerate()
        .filter(|(_, c)| labels.contains(c))
        .map(|(k, _)| k)
        .collect();

    // Weight vectors carry the bias as a trailing coordinate.
    let mut w: Vec<Vec<f64>> = vec![vec![0.0; dim + 1]; 3];
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = 1.0 / (config.lambda * step as f64);
            let shrink = 1.0 - eta * config.lambda;
            let x = &embeddings[i];
            for &k in &present {
                let y = if class_index(labels[i]) == k { 1.0 } else { -1.0 };
                let wk = &mut w[k];
                let margin = y * (wk[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wk[dim]);
                wk.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (v, xi) in wk[..dim].iter_mut().zip(x) {
                        *v += eta * y * xi;
                    }
                    wk[dim] += eta * y;
                }
            }
        }
    }
    for &k in &present {
        model.biases[k] = w[k][dim];
        w[k].truncate(dim);
        model.weights[k] = std::mem::take(&mut w[k]);
    }
    Ok(model)
}

/// Embeds the samples and trains the classifier for one topic.
pub fn train_classifier(
    embedder: &dyn EmbeddingProvider,
    samples: &[LabeledSample],
    topic: Topic,
    config: &TrainConfig,
) -> Result<ClassifierModel, IntentError> {
    if samples.is_empty() {
        return Err(IntentError::EmptyTrainingSet);
    }
    let texts: Vec<&str> = samples.iter().map(|s| s.prompt.as_str()).collect();
    let embeddings = embedder.embed_batch(&texts)?;
    let labels: Vec<Direction> = samples.iter().map(|s| s.marker.get(topic)).collect();
    train_on_embeddings(&embeddings, &labels, topic, config)
}

pub struct SvmExtractor {
    embedder: Arc<dyn EmbeddingProvider>,
    pub cpu: ClassifierModel,
    pub latency_bound: ClassifierModel,
}

impl SvmExtractor {
    pub fn new(embedder: Arc<dyn EmbeddingProvider>, cpu: ClassifierModel, latency_bound: ClassifierModel) -> Self {
        SvmExtractor {
            embedder,
            cpu,
            latency_bound,
        }
    }

    pub fn train(
        embedder: Arc<dyn EmbeddingProvider>,
        samples: &[LabeledSample],
        config: &TrainConfig,
    ) -> Result<Self, IntentError> {
        if samples.is_empty() {
            return Err(IntentError::EmptyTrainingSet);
        }
        let texts: Vec<&str> = samples.iter().map(|s| s.prompt.as_str()).collect();
        let embeddings = embedder.embed_batch(&texts)?;
        let labels = |topic| samples.iter().map(|s| s.marker.get(topic)).collect::<Vec<_>>();
        let cpu = train_on_embeddings(&embeddings, &labels(Topic::Cpu), Topic::Cpu, config)?;
        let lb = train_on_embeddings(&embeddings, &labels(Topic::LatencyBound), Topic::LatencyBound, config)?;
        Ok(SvmExtractor::new(embedder, cpu, lb))
    }

    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.cpu.warnings.iter().chain(&self.latency_bound.warnings)
    }
}

impl IntentExtractor for SvmExtractor {
    fn kind(&self) -> ExtractorKind {
        ExtractorKind::Svm
    }

    fn extract(&self, prompt: &str) -> Result<Extraction, IntentError> {
        check_prompt(prompt)?;
        let mut diagnostics = Diagnostics {
            extractor: Some(ExtractorKind::Svm),
            ..Default::default()
        };
        let (result, elapsed) = timed(|| -> Result<_, IntentError> {
            let e = self.embedder.embed(prompt)?;
            let (cpu, t_cpu) = timed(|| classify(&self.cpu, &e));
            let (lb, t_lb) = timed(|| classify(&self.latency_bound, &e));
            Ok((UpdateMarker::new(cpu?, lb?), (t_cpu, t_lb)))
        });
        diagnostics.elapsed_s = elapsed;
        let marker = match result {
            Ok((marker, times)) => {
                diagnostics.topic_time_s = Some(times);
                marker
            }
            Err(e) => {
                diagnostics.unavailable = Some(e.to_string());
                UpdateMarker::NONE
            }
        };
        Ok(Extraction { marker, diagnostics })
    }
}
