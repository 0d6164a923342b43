//! Extractor evaluation: stratified splits, confusion-matrix metrics, and
//! sweeps over training-set sizes.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{
    build_extractor, Direction, Endpoints, ExtractorKind, IntentError, IntentExtractor, LabeledSample, SyntaxError,
    Topic, UpdateMarker,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("train size {size} out of range 0..={len}")]
    TrainSizeOutOfRange { size: usize, len: usize },
    #[error("empty-test-set: train size {0} leaves no test samples")]
    EmptyTestSet(usize),
    #[error("no predictions")]
    NoPredictions,
    #[error("upstream unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
}

/// Binarized change label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binary {
    Positive,
    Negative,
}

pub fn binarize_change(d: Direction) -> Binary {
    if d.is_change() {
        Binary::Positive
    } else {
        Binary::Negative
    }
}

/// Deterministic stratified draw of `train_size` samples.
///
/// Strata are the full marker classes. Each class gets its proportional
/// share rounded down; leftover slots go to the largest fractional parts,
/// ties to the earlier class. Members of a class are drawn after a seeded
/// shuffle. Both halves keep dataset order.
pub fn split_dataset(
    samples: &[LabeledSample],
    train_size: usize,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>), EvalError> {
    let n = samples.len();
    if train_size > n {
        return Err(EvalError::TrainSizeOutOfRange { size: train_size, len: n });
    }
    if train_size == n {
        return Err(EvalError::EmptyTestSet(train_size));
    }
    let mut classes: BTreeMap<(i8, i8), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        classes
            .entry((s.marker.cpu.as_i8(), s.marker.latency_bound.as_i8()))
            .or_default()
            .push(i);
    }
    let mut quotas: Vec<(usize, f64)> = classes
        .values()
        .map(|members| {
            let exact = members.len() as f64 * train_size as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|a, b| quotas[*b].1.total_cmp(&quotas[*a].1).then(a.cmp(b)));
    for &k in by_remainder.iter().take(train_size - assigned) {
        quotas[k].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (members, (quota, _)) in classes.values().zip(&quotas) {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        for &i in m.iter().take(*quota) {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.iter().zip(in_train) {
        if t { &mut train } else { &mut test }.push(s.clone());
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub truth: UpdateMarker,
    pub predicted: Result<UpdateMarker, SyntaxError>,
    pub elapsed_s: f64,
    pub topic_time_s: Option<(f64, f64)>,
}

/// A (cpu, latency bound) pair; `None` marks an undefined ratio.
pub type Pair = (Option<f64>, Option<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_time_s: Option<(f64, f64)>,
    pub precision: Pair,
    pub recall: Pair,
    pub balanced_accuracy: Pair,
    pub syntax_error_pct: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub extractor: String,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

struct TopicScores {
    precision: Option<f64>,
    recall: Option<f64>,
    balanced_accuracy: Option<f64>,
}

fn topic_scores(pairs: &[(Direction, Direction)]) -> TopicScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (t, p) in pairs {
        match (binarize_change(*t), binarize_change(*p)) {
            (Binary::Positive, Binary::Positive) => tp += 1,
            (Binary::Negative, Binary::Positive) => fp += 1,
            (Binary::Positive, Binary::Negative) => fn_ += 1,
            (Binary::Negative, Binary::Negative) => {}
        }
    }
    let recalls: Vec<f64> = [Direction::Decrease, Direction::Increase]
        .into_iter()
        .filter_map(|d| {
            let total = pairs.iter().filter(|(t, _)| *t == d).count();
            let hit = pairs.iter().filter(|(t, p)| *t == d && *p == d).count();
            ratio(hit, total)
        })
        .collect();
    TopicScores {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        balanced_accuracy: (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
    }
}

/// Precision and recall on binarized labels, balanced accuracy over the
/// true-change samples, and syntax error rate. Syntax errors count as the
/// no-change prediction.
pub fn compute_metrics(predictions: &[Prediction]) -> Result<Metrics, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let n = predictions.len();
    let scores: Vec<TopicScores> = Topic::ALL
        .iter()
        .map(|&topic| {
            let pairs: Vec<(Direction, Direction)> = predictions
                .iter()
                .map(|p| {
                    let pred = p.predicted.as_ref().map_or(Direction::Keep, |m| m.get(topic));
                    (p.truth.get(topic), pred)
                })
                .collect();
            topic_scores(&pairs)
        })
        .collect();
    let syntax = 100.0 * predictions.iter().filter(|p| p.predicted.is_err()).count() as f64 / n as f64;
    let timed: Vec<(f64, f64)> = predictions.iter().filter_map(|p| p.topic_time_s).collect();
    let topic_time_s = (!timed.is_empty()).then(|| {
        let k = timed.len() as f64;
        (
            timed.iter().map(|t| t.0).sum::<f64>() / k,
            timed.iter().map(|t| t.1).sum::<f64>() / k,
        )
    });
    Ok(Metrics {
        mean_time_s: predictions.iter().map(|p| p.elapsed_s).sum::<f64>() / n as f64,
        topic_time_s,
        precision: (scores[0].precision, scores[1].precision),
        recall: (scores[0].recall, scores[1].recall),
        balanced_accuracy: (scores[0].balanced_accuracy, scores[1].balanced_accuracy),
        syntax_error_pct: (syntax, syntax),
    })
}

/// Runs `extractor` over `test`. Fails if any call could not reach its
/// upstream service.
pub fn predict_all(extractor: &dyn IntentExtractor, test: &[LabeledSample]) -> Result<Vec<Prediction>, EvalError> {
    test.iter()
        .map(|s| {
            let ex = extractor.extract(&s.prompt)?;
            if let Some(reason) = ex.diagnostics.unavailable {
                return Err(EvalError::Unavailable(reason));
            }
            Ok(Prediction {
                truth: s.marker,
                predicted: if ex.diagnostics.syntax_error {
                    Err(SyntaxError)
                } else {
                    Ok(ex.marker)
                },
                elapsed_s: ex.diagnostics.elapsed_s,
                topic_time_s: ex.diagnostics.topic_time_s,
            })
        })
        .collect()
}

pub type ExtractorFactory<'a> = dyn Fn(&[LabeledSample]) -> Result<Arc<dyn IntentExtractor>, IntentError> + 'a;

/// One row per train size, largest first. `factory` builds an extractor
/// from each size's training split.
pub fn run_sweep_with(
    dataset: &[LabeledSample],
    name: &str,
    train_sizes: &[usize],
    seed: u64,
    factory: &ExtractorFactory<'_>,
) -> Result<Vec<MetricsRow>, EvalError> {
    let mut sizes = train_sizes.to_vec();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    let mut rows = Vec::with_capacity(sizes.len());
    for size in sizes {
        let (train, test) = split_dataset(dataset, size, seed)?;
        let extractor = factory(&train)?;
        let predictions = predict_all(extractor.as_ref(), &test)?;
        rows.push(MetricsRow {
            extractor: name.to_string(),
            train_size: size,
            test_size: test.len(),
            metrics: compute_metrics(&predictions)?,
        });
    }
    Ok(rows)
}

pub fn run_sweep(
    dataset: &[LabeledSample],
    kind: ExtractorKind,
    train_sizes: &[usize],
    seed: u64,
    endpoints: &Endpoints,
) -> Result<Vec<MetricsRow>, EvalError> {
    if kind == ExtractorKind::Llm && endpoints.llm_endpoint.is_none() {
        return Err(EvalError::Unavailable("VNET_LLM_ENDPOINT is not set".into()));
    }
    run_sweep_with(dataset, kind.name(), train_sizes, seed, &|train| {
        build_extractor(kind, train, endpoints)
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn fmt_pair(p: Pair) -> String {
    format!("{}/{}", fmt_opt(p.0), fmt_opt(p.1))
}

/// Tab-separated table, one line per row, cpu/latency-bound slash pairs.
/// Wall-clock columns are included only with `timing`, so the default
/// output is reproducible byte for byte.
pub fn rows_to_tsv(rows: &[MetricsRow], timing: bool) -> String {
    let mut s = String::from("extractor\ttrain_size\ttest_size\t");
    if timing {
        s.push_str("mean_time_s\ttopic_time_s\t");
    }
    s.push_str("precision\trecall\tbalanced_accuracy\tsyntax_error_pct\n");
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!("{}\t{}\t{}\t", r.extractor, r.train_size, r.test_size));
        if timing {
            let topic = m
                .topic_time_s
                .map_or_else(|| "n/a".to_string(), |(a, b)| format!("{a:.6}/{b:.6}"));
            s.push_str(&format!("{:.6}\t{topic}\t", m.mean_time_s));
        }
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.1}/{:.1}\n",
            fmt_pair(m.precision),
            fmt_pair(m.recall),
            fmt_pair(m.balanced_accuracy),
            m.syntax_error_pct.0,
            m.syntax_error_pct.1,
        ));
    }
    s
}

pub fn rows_to_json(rows: &[MetricsRow], timing: bool) -> String {
    let mut v = serde_json::to_value(rows).expect("rows serialize");
    if !timing {
        for row in v.as_array_mut().into_iter().flatten() {
            if let Some(obj) = row.as_object_mut() {
                obj.remove("mean_time_s");
                obj.remove("topic_time_s");
            }
        }
    }
    serde_json::to_string_pretty(&v).expect("rows serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::intent::KeywordExtractor;

    fn mk(c: i8, b: i8) -> UpdateMarker {
        UpdateMarker::from_i8(c, b).unwrap()
    }

    fn pred(truth: UpdateMarker, p: UpdateMarker) -> Prediction {
        Prediction {
            truth,
            predicted: Ok(p),
            elapsed_s: 0.5,
            topic_time_s: None,
        }
    }

    #[test]
    fn binarize() {
        assert_eq!(binarize_change(Direction::Decrease), Binary::Positive);
        assert_eq!(binarize_change(Direction::Keep), Binary::Negative);
        assert_eq!(binarize_change(Direction::Increase), Binary::Positive);
    }

    #[test]
    fn hand_confusion_set() {
        // cpu: 2 TP, 1 FP, 1 FN, 2 TN
        let preds = vec![
            pred(mk(1, 0), mk(1, 0)),
            pred(mk(-1, 0), mk(-1, 0)),
            pred(mk(0, 0), mk(1, 0)),
            pred(mk(1, 0), mk(0, 0)),
            pred(mk(0, 0), mk(0, 0)),
            pred(mk(0, 0), mk(0, 0)),
        ];
        let m = compute_metrics(&preds).unwrap();
        assert!((m.precision.0.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall.0.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.balanced_accuracy.0, Some(0.75));
        assert_eq!(m.precision.1, None);
        assert_eq!(m.recall.1, None);
        assert_eq!(m.mean_time_s, 0.5);
    }

    #[test]
    fn all_syntax_errors() {
        let preds: Vec<Prediction> = (0..4)
            .map(|_| Prediction {
                truth: mk(1, 0),
                predicted: Err(SyntaxError),
                elapsed_s: 0.0,
                topic_time_s: None,
            })
            .collect();
        let m = compute_metrics(&preds).unwrap();
        assert_eq!(m.syntax_error_pct, (100.0, 100.0));
        assert_eq!(m.recall.0, Some(0.0));
        assert_eq!(m.precision.0, None);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = fixtures::appendix_a();
        let (train, test) = split_dataset(&d, 0, 1).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 33);
        let a = split_dataset(&d, 5, 7).unwrap();
        assert_eq!(a, split_dataset(&d, 5, 7).unwrap());
        assert_eq!(a.0.len(), 5);
        assert_eq!(a.1.len(), 28);
        assert!(matches!(split_dataset(&d, 33, 1), Err(EvalError::EmptyTestSet(_))));
        assert!(matches!(split_dataset(&d, 34, 1), Err(EvalError::TrainSizeOutOfRange { .. })));
    }

    #[test]
    fn keyword_rows_identical_rates() {
        let d = fixtures::appendix_a();
        let rows = run_sweep_with(&d, "keyword", &[3, 30, 10], 42, &|_| Ok(Arc::new(KeywordExtractor))).unwrap();
        assert_eq!(rows.iter().map(|r| r.train_size).collect::<Vec<_>>(), [30, 10, 3]);
        let tsv = rows_to_tsv(&rows, false);
        assert_eq!(tsv, rows_to_tsv(&rows, false));
        assert!(rows_to_tsv(&rows, true).contains("mean_time_s"));
        assert_eq!(tsv.lines().count(), 4);
    }

    #[test]
    fn llm_sweep_needs_endpoint() {
        let d = fixtures::appendix_a();
        assert!(matches!(
            run_sweep(&d, ExtractorKind::Llm, &[3], 1, &Endpoints::default()),
            Err(EvalError::Unavailable(_))
        ));
    }
}
