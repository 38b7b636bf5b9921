//! Prompting, evaluation and finetuning-data tooling for LLM-based
//! mental-health text classification.

pub mod corpus;
pub mod prompt;
pub mod parsing;
pub mod metrics;
pub mod backends;
pub mod finetune;
pub mod runner;
