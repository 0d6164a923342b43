//! Rule-table extractor used as an offline, deterministic baseline.
//!
//! The prompt is lowercased, split into clauses at sentence punctuation and
//! at "and"/"but", and each clause is tokenized. A topic is triggered by its
//! trigger words; its direction comes from cue words in the triggering
//! clauses. Multi-word cues outrank single-word cues, and among cues of the
//! same rank the last one wins ("more than I can afford" reads as a decrease).

use super::{check_prompt, timed, Diagnostics, Direction, Extraction, ExtractorKind, IntentError, IntentExtractor, UpdateMarker};

struct Cue {
    words: &'static [&'static str],
    direction: Direction,
}

const fn cue(words: &'static [&'static str], direction: Direction) -> Cue {
    Cue { words, direction }
}

const CPU_TRIGGERS: &[&str] = &["cpu", "cpus"];
const LATENCY_TRIGGERS: &[&str] = &["latency", "late", "speed"];

const CPU_CUES: &[Cue] = &[
    cue(&["more"], Direction::Increase),
    cue(&["upgrade"], Direction::Increase),
    cue(&["increase"], Direction::Increase),
    cue(&["insufficient"], Direction::Increase),
    cue(&["underperforming"], Direction::Increase),
    cue(&["not", "sufficient"], Direction::Increase),
    cue(&["not", "enough"], Direction::Increase),
    cue(&["less"], Direction::Decrease),
    cue(&["fewer"], Direction::Decrease),
    cue(&["reduce"], Direction::Decrease),
    cue(&["decrease"], Direction::Decrease),
    cue(&["afford"], Direction::Decrease),
    cue(&["free", "up"], Direction::Decrease),
    cue(&["no", "longer"], Direction::Decrease),
];

const LATENCY_CUES: &[Cue] = &[
    cue(&["reduce"], Direction::Decrease),
    cue(&["lower"], Direction::Decrease),
    cue(&["less"], Direction::Decrease),
    cue(&["late"], Direction::Decrease),
    cue(&["ease"], Direction::Increase),
    cue(&["don't", "need"], Direction::Increase),
    cue(&["don't", "want"], Direction::Increase),
    cue(&["do", "not", "need"], Direction::Increase),
    cue(&["do", "not", "want"], Direction::Increase),
    cue(&["too", "reduced"], Direction::Increase),
];

fn clauses(prompt: &str) -> Vec<Vec<String>> {
    let lower = prompt.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    let mut out = Vec::new();
    for part in lower.split(['.', ',', ';', '!', '?', ':']) {
        let mut current = Vec::new();
        for tok in part
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .map(|t| t.trim_matches('\''))
            .filter(|t| !t.is_empty())
        {
            if tok == "and" || tok == "but" {
                out.push(std::mem::take(&mut current));
            } else {
                current.push(tok.to_string());
            }
        }
        out.push(current);
    }
    out.retain(|c| !c.is_empty());
    out
}

fn topic_direction(clauses: &[Vec<String>], triggers: &[&str], cues: &[Cue]) -> Direction {
    // (rank, position) of the winning cue; position counts across clauses.
    let mut best: Option<((usize, usize), Direction)> = None;
    let mut offset = 0;
    for clause in clauses {
        if clause.iter().any(|t| triggers.contains(&t.as_str())) {
            for c in cues {
                let n = c.words.len();
                for start in 0..clause.len().saturating_sub(n - 1) {
                    if clause[start..start + n].iter().zip(c.words).all(|(a, b)| a == b) {
                        let key = (n, offset + start);
                        if best.is_none_or(|(k, _)| key > k) {
                            best = Some((key, c.direction));
                        }
                    }
                }
            }
        }
        offset += clause.len();
    }
    best.map_or(Direction::Keep, |(_, d)| d)
}

/// Applies the rule table to a prompt. Prompts without any trigger map to
/// the no-change marker.
pub fn keyword_extract(prompt: &str) -> UpdateMarker {
    let clauses = clauses(prompt);
    UpdateMarker {
        cpu: topic_direction(&clauses, CPU_TRIGGERS, CPU_CUES),
        latency_bound: topic_direction(&clauses, LATENCY_TRIGGERS, LATENCY_CUES),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordExtractor;

impl IntentExtractor for KeywordExtractor {
    fn kind(&self) -> ExtractorKind {
        ExtractorKind::Keyword
    }

    fn extract(&self, prompt: &str) -> Result<Extraction, IntentError> {
        check_prompt(prompt)?;
        let (marker, elapsed) = timed(|| keyword_extract(prompt));
        Ok(Extraction {
            marker,
            diagnostics: Diagnostics {
                extractor: Some(ExtractorKind::Keyword),
                elapsed_s: elapsed,
                ..Default::default()
            },
        })
    }
}
