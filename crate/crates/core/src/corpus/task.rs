//! Task definitions: class sets, question category and granularity.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use super::CorpusError;

/// Identifier of a prediction task. The six built-in tasks use `"1"`..`"6"`;
/// anything else is an external tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<u8> for TaskId {
    fn from(n: u8) -> Self {
        TaskId(n.to_string())
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

// Accept both `"task_id": 3` and `"task_id": "3"`.
impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        Ok(match Raw::deserialize(deserializer)? {
            Raw::Num(n) => TaskId(n.to_string()),
            Raw::Str(s) => TaskId(s),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MentalState,
    CriticalAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Post,
    User,
}

/// A class of a task. `name` is the canonical lowercase label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    pub name: String,
    pub ordinal: usize,
}

impl ClassLabel {
    /// Title-cased display form used in prompts and exported outputs.
    pub fn display(&self) -> String {
        title_case(&self.name)
    }
}

pub(crate) fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub category: Category,
    pub arity: Arity,
    pub classes: Vec<ClassLabel>,
    pub granularity: Granularity,
    pub state_word: String,
}

impl TaskSpec {
    /// Builds and validates a task from class names in ordinal order.
    pub fn new(
        task_id: impl Into<TaskId>,
        category: Category,
        arity: Arity,
        class_names: &[&str],
        granularity: Granularity,
        state_word: &str,
    ) -> Result<Self, CorpusError> {
        let classes = class_names
            .iter()
            .enumerate()
            .map(|(ordinal, name)| ClassLabel {
                name: normalize_label(name),
                ordinal,
            })
            .collect();
        let task = TaskSpec {
            task_id: task_id.into(),
            category,
            arity,
            classes,
            granularity,
            state_word: state_word.to_string(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| CorpusError::InvalidTask {
            task: self.task_id.to_string(),
            message: msg,
        };
        match self.arity {
            Arity::Binary if self.classes.len() != 2 => {
                return Err(bad(format!("binary task has {} classes", self.classes.len())))
            }
            Arity::Multiclass if !matches!(self.classes.len(), 4 | 5) => {
                return Err(bad(format!(
                    "multiclass task must have 4 or 5 classes, got {}",
                    self.classes.len()
                )))
            }
            _ => {}
        }
        if self.state_word.trim().is_empty() {
            return Err(bad("empty state_word".into()));
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.ordinal != i {
                return Err(bad(format!("class {} has ordinal {}, expected {i}", class.name, class.ordinal)));
            }
            if self.classes[..i].iter().any(|c| c.name == class.name) {
                return Err(bad(format!("duplicate class {}", class.name)));
            }
        }
        Ok(())
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ClassLabel> {
        let key = normalize_label(name);
        self.classes.iter().find(|c| c.name == key)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// The six built-in tasks.
    pub fn builtin(id: u8) -> Option<TaskSpec> {
        use Arity::*;
        use Category::*;
        use Granularity::*;
        let task = match id {
            1 => TaskSpec::new(1, MentalState, Binary, &["no", "yes"], Post, "stressed"),
            2 => TaskSpec::new(2, MentalState, Binary, &["no", "yes"], Post, "depressed"),
            3 => TaskSpec::new(
                3,
                MentalState,
                Multiclass,
                &["minimal", "mild", "moderate", "severe"],
                Post,
                "depressed",
            ),
            4 => TaskSpec::new(4, CriticalAction, Binary, &["no", "yes"], Post, "suicide"),
            5 => TaskSpec::new(5, CriticalAction, Binary, &["no", "yes"], User, "suicide"),
            6 => TaskSpec::new(
                6,
                CriticalAction,
                Multiclass,
                &["supportive", "indicator", "ideation", "behavior", "attempt"],
                User,
                "suicide",
            ),
            _ => return None,
        };
        Some(task.expect("built-in task definitions are valid"))
    }

    pub fn all_builtin() -> Vec<TaskSpec> {
        (1..=6).filter_map(TaskSpec::builtin).collect()
    }

    /// Resolves `"1"`..`"6"` to a built-in task.
    pub fn builtin_by_id(id: &TaskId) -> Option<TaskSpec> {
        id.as_str().parse::<u8>().ok().and_then(TaskSpec::builtin)
    }
}

/// Canonical on-disk label form: trimmed, lowercase.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}
