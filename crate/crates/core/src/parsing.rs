//! Mapping free-form completions to task classes.
//!
//! Rules are tried in order and the first that decides wins:
//!
//! 1. the whole normalized text is a class synonym;
//! 2. the text after the last `Answer:` anchor names exactly one class;
//! 3. the first sentence naming any class names exactly one class.
//!
//! A synonym preceded by a negation word (`not severe`, `isn't an attempt`)
//! never counts. Two distinct classes at the deciding rule make the outcome
//! ambiguous, which is scored the same as unparseable.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{ClassLabel, TaskSpec};
use crate::prompt::StrategyCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    Unparseable,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    Exact,
    AnswerAnchor,
    Scan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub label: Option<ClassLabel>,
    pub status: ParseStatus,
    pub matched_span: String,
    pub rule: Option<ParseRule>,
}

impl ParseOutcome {
    fn unparseable() -> Self {
        ParseOutcome {
            label: None,
            status: ParseStatus::Unparseable,
            matched_span: String::new(),
            rule: None,
        }
    }

    pub fn is_parsed(&self) -> bool {
        self.status == ParseStatus::Parsed
    }
}

const NEGATIONS: &[&str] = &["not", "no", "never", "neither", "nor", "without", "hardly"];

/// Lowercase, NFC, collapsed whitespace, trailing punctuation removed.
pub fn normalize(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| !c.is_alphanumeric())
        .trim_end()
        .to_string()
}

/// Word tokens: runs of alphanumerics and apostrophes.
fn words(text: &str) -> Vec<String> {
    text.replace('\u{2019}', "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn is_negation(word: &str) -> bool {
    NEGATIONS.contains(&word) || word.ends_with("n't")
}

/// Whether the word at `i` follows a negation, optionally with one article
/// in between (`not severe`, `not an attempt`).
fn negated(tokens: &[String], i: usize) -> bool {
    match i {
        0 => false,
        1 => is_negation(&tokens[0]),
        _ => {
            is_negation(&tokens[i - 1])
                || (matches!(tokens[i - 1].as_str(), "a" | "an" | "the") && is_negation(&tokens[i - 2]))
        }
    }
}

/// Synonym table for one task, tokenized.
struct Matcher<'a> {
    task: &'a TaskSpec,
    synonyms: Vec<(usize, Vec<String>, String)>,
}

impl<'a> Matcher<'a> {
    fn new(task: &'a TaskSpec, catalog: &StrategyCatalog) -> Self {
        let mut synonyms = Vec::new();
        for class in &task.classes {
            for s in catalog.synonyms_for(&class.name) {
                let norm = normalize(&s);
                synonyms.push((class.ordinal, words(&norm), norm));
            }
        }
        Matcher { task, synonyms }
    }

    fn exact(&self, normalized: &str) -> Option<usize> {
        self.synonyms.iter().find(|(_, _, s)| s == normalized).map(|(o, _, _)| *o)
    }

    /// Non-negated matches in a word sequence, in order: (position, ordinal, synonym).
    fn matches(&self, tokens: &[String]) -> Vec<(usize, usize, String)> {
        let mut found = Vec::new();
        for i in 0..tokens.len() {
            for (ordinal, syn, text) in &self.synonyms {
                if syn.is_empty() || i + syn.len() > tokens.len() {
                    continue;
                }
                if tokens[i..i + syn.len()] != syn[..] {
                    continue;
                }
                if negated(tokens, i) {
                    continue;
                }
                found.push((i, *ordinal, text.clone()));
            }
        }
        found
    }

    /// Decides a segment: one class, several, or none.
    fn decide(&self, segment: &str, rule: ParseRule) -> Option<ParseOutcome> {
        let tokens = words(segment);
        let found = self.matches(&tokens);
        let first = found.first()?;
        let mut distinct: Vec<usize> = found.iter().map(|m| m.1).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() > 1 {
            return Some(ParseOutcome {
                label: None,
                status: ParseStatus::Ambiguous,
                matched_span: segment.trim().to_string(),
                rule: Some(rule),
            });
        }
        Some(ParseOutcome {
            label: Some(self.task.classes[first.1].clone()),
            status: ParseStatus::Parsed,
            matched_span: first.2.clone(),
            rule: Some(rule),
        })
    }
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';', '\n']).filter(|s| !s.trim().is_empty())
}

pub fn parse_label(text: &str, task: &TaskSpec, catalog: &StrategyCatalog) -> ParseOutcome {
    let matcher = Matcher::new(task, catalog);
    let normalized = normalize(text);
    if normalized.is_empty() {
        return ParseOutcome::unparseable();
    }

    if let Some(ordinal) = matcher.exact(&normalized) {
        return ParseOutcome {
            label: Some(task.classes[ordinal].clone()),
            status: ParseStatus::Parsed,
            matched_span: normalized,
            rule: Some(ParseRule::Exact),
        };
    }

    if let Some(pos) = normalized.rfind("answer:") {
        let after = &normalized[pos + "answer:".len()..];
        if let Some(segment) = sentences(after).next() {
            if let Some(outcome) = matcher.decide(segment, ParseRule::AnswerAnchor) {
                return outcome;
            }
        }
    }

    for sentence in sentences(&normalized) {
        if let Some(outcome) = matcher.decide(sentence, ParseRule::Scan) {
            return outcome;
        }
    }
    ParseOutcome::unparseable()
}
