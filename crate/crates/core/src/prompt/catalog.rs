//! Strategy and question templates, plus the answer synonym tables used by the
//! parser. Loaded from a TOML file; the default ships inside the binary.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::{Arity, Category, TaskSpec};

/// The checked-in default catalog.
pub const DEFAULT_CATALOG: &str = include_str!("../../catalog/strategies.toml");

/// Placeholder substituted with the task's state word.
pub const STATE_WORD: &str = "{state_word}";

/// Part-1 enhancement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Basic,
    Context,
    Mh,
    Both,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Basic, Strategy::Context, Strategy::Mh, Strategy::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::Context => "context",
            Strategy::Mh => "mh",
            Strategy::Both => "both",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(Strategy::Basic),
            "context" => Ok(Strategy::Context),
            "mh" => Ok(Strategy::Mh),
            "both" => Ok(Strategy::Both),
            other => Err(PromptError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part1Variants {
    pub basic: Vec<String>,
    pub context: Vec<String>,
    pub mh: Vec<String>,
    pub both: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part2Variants {
    pub mental_state_binary: Vec<String>,
    pub mental_state_multiclass: Vec<String>,
    pub critical_action_binary: Vec<String>,
    pub critical_action_multiclass: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyCatalog {
    pub part1: Part1Variants,
    pub part2: Part2Variants,
    /// Class name to the normalized answer strings that mean that class.
    pub synonyms: BTreeMap<String, Vec<String>>,
}

impl StrategyCatalog {
    pub fn builtin() -> StrategyCatalog {
        StrategyCatalog::from_toml(DEFAULT_CATALOG).expect("default catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<StrategyCatalog, PromptError> {
        let catalog: StrategyCatalog = toml::from_str(text).map_err(|e| PromptError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<StrategyCatalog, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("catalog serializes")
    }

    fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::Catalog(m));
        if self.part1.basic != [String::new()] {
            return bad("basic strategy must have exactly one empty variant".into());
        }
        for s in &Strategy::ALL[1..] {
            let v = self.part1_variants(*s);
            if v.is_empty() || v.iter().any(|t| t.trim().is_empty()) {
                return bad(format!("strategy {s} needs non-empty variants"));
            }
        }
        for (cat, arity) in [
            (Category::MentalState, Arity::Binary),
            (Category::MentalState, Arity::Multiclass),
            (Category::CriticalAction, Arity::Binary),
            (Category::CriticalAction, Arity::Multiclass),
        ] {
            let q = self.part2_variants(cat, arity);
            if q.len() != 3 {
                return bad(format!("{cat:?}/{arity:?} needs 3 questions, has {}", q.len()));
            }
            for t in q {
                let rest = t.replace(STATE_WORD, "");
                if rest.contains('{') || rest.contains('}') {
                    return bad(format!("unresolved placeholder in {t:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn part1_variants(&self, strategy: Strategy) -> &[String] {
        match strategy {
            Strategy::Basic => &self.part1.basic,
            Strategy::Context => &self.part1.context,
            Strategy::Mh => &self.part1.mh,
            Strategy::Both => &self.part1.both,
        }
    }

    pub fn part2_variants(&self, category: Category, arity: Arity) -> &[String] {
        match (category, arity) {
            (Category::MentalState, Arity::Binary) => &self.part2.mental_state_binary,
            (Category::MentalState, Arity::Multiclass) => &self.part2.mental_state_multiclass,
            (Category::CriticalAction, Arity::Binary) => &self.part2.critical_action_binary,
            (Category::CriticalAction, Arity::Multiclass) => &self.part2.critical_action_multiclass,
        }
    }

    pub fn questions_for(&self, task: &TaskSpec) -> &[String] {
        self.part2_variants(task.category, task.arity)
    }

    /// Synonyms for a class; falls back to the bare class name.
    pub fn synonyms_for(&self, class_name: &str) -> Vec<String> {
        match self.synonyms.get(class_name) {
            Some(s) if !s.is_empty() => s.clone(),
            _ => vec![class_name.to_string()],
        }
    }
}
