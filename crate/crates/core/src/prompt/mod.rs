//! Prompt composition.
//!
//! A zero-shot prompt is four newline-joined segments, in this order: the
//! post text, the optional strategy sentence (blank for `basic`), the task
//! question with the state word filled in, and the output constraint.
//! Few-shot prompts prepend `M` solved zero-shot prompts, each followed by an
//! `Answer: <Label>` line, with blank lines between blocks.

mod catalog;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{Part1Variants, Part2Variants, Strategy, StrategyCatalog, DEFAULT_CATALOG, STATE_WORD};

use crate::corpus::tokens::{HeuristicCounter, TokenCounter};
use crate::corpus::{Arity, ClassLabel, Record, TaskSpec};

pub const SEGMENT_SEPARATOR: &str = "\n";
pub const BLOCK_SEPARATOR: &str = "\n\n";
pub const ANSWER_PREFIX: &str = "Answer: ";
pub const COT_SUFFIX: &str = "Provide reasons step by step.";
/// Input limit of the evaluated models.
pub const DEFAULT_TOKEN_BUDGET: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid catalog: {0}")]
    Catalog(String),
    #[error("record {0} has empty text")]
    EmptyText(String),
    #[error("variant ({part1}, {part2}) out of range for strategy {strategy}")]
    VariantOutOfRange { strategy: Strategy, part1: usize, part2: usize },
    #[error("few-shot prompt needs at least one exemplar")]
    NoExemplars,
    #[error("exemplar {0} is the query record")]
    ExemplarCollision(String),
    #[error("prompt needs {estimate} tokens, budget is {budget}")]
    BudgetExceeded { estimate: usize, budget: usize },
}

/// Indices into the part-1 and part-2 variant lists of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantKey {
    pub part1: usize,
    pub part2: usize,
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}q{}", self.part1, self.part2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PromptMode {
    ZeroShot,
    FewShot { m: usize },
    Cot,
}

/// Experiment mode, without per-mode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ZeroShot,
    FewShot,
    Cot,
    /// Constant predictors such as the majority baseline.
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero_shot",
            Mode::FewShot => "few_shot",
            Mode::Cot => "cot",
            Mode::Baseline => "baseline",
        }
    }

    /// Short tag used in table row labels.
    pub fn tag(self) -> &'static str {
        match self {
            Mode::ZeroShot => "ZS",
            Mode::FewShot => "FS",
            Mode::Cot => "CoT",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl PromptMode {
    pub fn kind(self) -> Mode {
        match self {
            PromptMode::ZeroShot => Mode::ZeroShot,
            PromptMode::FewShot { .. } => Mode::FewShot,
            PromptMode::Cot => Mode::Cot,
        }
    }
}

/// A fully resolved prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub task: TaskSpec,
    pub strategy: Strategy,
    pub variant: VariantKey,
    pub mode: PromptMode,
    pub exemplars: Vec<(Record, ClassLabel)>,
    pub rendered: String,
    pub token_estimate: usize,
}

/// Joins class display names: `A or B`, `A, B, or C`.
fn enumerate_classes(task: &TaskSpec) -> String {
    let mut names: Vec<String> = task.classes.iter().map(ClassLabel::display).collect();
    // Binary tasks list the positive class first ("Yes or No").
    if task.arity == Arity::Binary {
        names.reverse();
    }
    match names.len() {
        0 => String::new(),
        1 => names.remove(0),
        2 => format!("{} or {}", names[0], names[1]),
        n => format!("{}, or {}", names[..n - 1].join(", "), names[n - 1]),
    }
}

pub fn build_output_constraint(task: &TaskSpec) -> String {
    format!("Only return {}.", enumerate_classes(task))
}

pub fn build_cot_constraint(task: &TaskSpec) -> String {
    format!("Return {}. {COT_SUFFIX}", enumerate_classes(task))
}

/// Default number of few-shot exemplars: one per class.
pub fn default_shots(task: &TaskSpec) -> usize {
    task.classes.len()
}

/// Builds prompts from a catalog. Cheap to clone and share across threads.
#[derive(Clone)]
pub struct PromptEngine {
    catalog: Arc<StrategyCatalog>,
    counter: Arc<dyn TokenCounter>,
}

impl fmt::Debug for PromptEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptEngine").field("catalog", &self.catalog).finish_non_exhaustive()
    }
}

impl Default for PromptEngine {
    fn default() -> Self {
        PromptEngine::new(StrategyCatalog::builtin())
    }
}

impl PromptEngine {
    pub fn new(catalog: StrategyCatalog) -> Self {
        PromptEngine {
            catalog: Arc::new(catalog),
            counter: Arc::new(HeuristicCounter::for_budget()),
        }
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn catalog(&self) -> &StrategyCatalog {
        &self.catalog
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.counter.count(text)
    }

    /// All (part1, part2) index pairs for a strategy, part1-major.
    pub fn enumerate_variants(&self, task: &TaskSpec, strategy: Strategy) -> Vec<VariantKey> {
        let n1 = self.catalog.part1_variants(strategy).len();
        let n2 = self.catalog.questions_for(task).len();
        (0..n1)
            .flat_map(|part1| (0..n2).map(move |part2| VariantKey { part1, part2 }))
            .collect()
    }

    fn segments(
        &self,
        text: &str,
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
        constraint: String,
    ) -> Result<Vec<String>, PromptError> {
        let out_of_range = || PromptError::VariantOutOfRange {
            strategy,
            part1: variant.part1,
            part2: variant.part2,
        };
        let part1 = self
            .catalog
            .part1_variants(strategy)
            .get(variant.part1)
            .ok_or_else(out_of_range)?;
        let question = self
            .catalog
            .questions_for(task)
            .get(variant.part2)
            .ok_or_else(out_of_range)?;
        let mut segments = vec![text.to_string()];
        if !part1.is_empty() {
            segments.push(part1.clone());
        }
        segments.push(question.replace(STATE_WORD, &task.state_word));
        segments.push(constraint);
        Ok(segments)
    }

    /// Renders the zero-shot text for arbitrary post text.
    pub fn render_zero_shot(
        &self,
        text: &str,
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
    ) -> Result<String, PromptError> {
        Ok(self
            .segments(text, task, strategy, variant, build_output_constraint(task))?
            .join(SEGMENT_SEPARATOR))
    }

    pub fn build_zero_shot(
        &self,
        record: &Record,
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
    ) -> Result<PromptPlan, PromptError> {
        check_text(record)?;
        let rendered = self.render_zero_shot(&record.text, task, strategy, variant)?;
        Ok(self.plan(task, strategy, variant, PromptMode::ZeroShot, Vec::new(), rendered))
    }

    pub fn build_cot(
        &self,
        record: &Record,
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
    ) -> Result<PromptPlan, PromptError> {
        check_text(record)?;
        let rendered = self
            .segments(&record.text, task, strategy, variant, build_cot_constraint(task))?
            .join(SEGMENT_SEPARATOR);
        Ok(self.plan(task, strategy, variant, PromptMode::Cot, Vec::new(), rendered))
    }

    /// Prepends solved exemplars to the query prompt. Exemplar text is never
    /// truncated; exceeding `token_budget` is an error.
    pub fn build_few_shot(
        &self,
        record: &Record,
        exemplars: &[(Record, ClassLabel)],
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
        token_budget: usize,
    ) -> Result<PromptPlan, PromptError> {
        check_text(record)?;
        if exemplars.is_empty() {
            return Err(PromptError::NoExemplars);
        }
        let mut blocks = Vec::with_capacity(exemplars.len() + 1);
        for (exemplar, label) in exemplars {
            if exemplar.id == record.id {
                return Err(PromptError::ExemplarCollision(exemplar.id.clone()));
            }
            check_text(exemplar)?;
            let sample = self.render_zero_shot(&exemplar.text, task, strategy, variant)?;
            blocks.push(format!("{sample}{SEGMENT_SEPARATOR}{ANSWER_PREFIX}{}", label.display()));
        }
        blocks.push(self.render_zero_shot(&record.text, task, strategy, variant)?);
        let rendered = blocks.join(BLOCK_SEPARATOR);
        let estimate = self.counter.count(&rendered);
        if estimate > token_budget {
            return Err(PromptError::BudgetExceeded {
                estimate,
                budget: token_budget,
            });
        }
        Ok(self.plan(
            task,
            strategy,
            variant,
            PromptMode::FewShot { m: exemplars.len() },
            exemplars.to_vec(),
            rendered,
        ))
    }

    fn plan(
        &self,
        task: &TaskSpec,
        strategy: Strategy,
        variant: VariantKey,
        mode: PromptMode,
        exemplars: Vec<(Record, ClassLabel)>,
        rendered: String,
    ) -> PromptPlan {
        PromptPlan {
            task: task.clone(),
            strategy,
            variant,
            mode,
            exemplars,
            token_estimate: self.counter.count(&rendered),
            rendered,
        }
    }
}

fn check_text(record: &Record) -> Result<(), PromptError> {
    if record.text.trim().is_empty() {
        Err(PromptError::EmptyText(record.id.clone()))
    } else {
        Ok(())
    }
}
