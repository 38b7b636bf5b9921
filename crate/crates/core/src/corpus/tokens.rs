//! Token-count proxies.
//!
//! Exact BPE counts depend on the serving backend, so prompt budgets and
//! dataset statistics go through the [`TokenCounter`] trait.

/// Counts tokens in a text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace + punctuation heuristic: every run of alphanumeric characters
/// is one token and every other non-space character is one token. The raw
/// count is multiplied by `safety_factor` and rounded up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicCounter {
    pub safety_factor: f64,
}

impl HeuristicCounter {
    /// Budget safety factor applied when checking prompt length limits.
    pub const BUDGET_FACTOR: f64 = 1.3;

    /// Unscaled counts, used for dataset statistics.
    pub fn raw() -> Self {
        HeuristicCounter { safety_factor: 1.0 }
    }

    /// Scaled by [`Self::BUDGET_FACTOR`], used for prompt budgets.
    pub fn for_budget() -> Self {
        HeuristicCounter {
            safety_factor: Self::BUDGET_FACTOR,
        }
    }

    pub fn raw_count(text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

impl Default for HeuristicCounter {
    fn default() -> Self {
        Self::for_budget()
    }
}

impl TokenCounter for HeuristicCounter {
    fn count(&self, text: &str) -> usize {
        let raw = Self::raw_count(text);
        if self.safety_factor == 1.0 {
            raw
        } else {
            (raw as f64 * self.safety_factor).ceil() as usize
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_and_punctuation() {
        assert_eq!(HeuristicCounter::raw_count("one two three four five"), 5);
        assert_eq!(HeuristicCounter::raw_count("hello, world."), 4);
        assert_eq!(HeuristicCounter::raw_count("can't"), 3);
        assert_eq!(HeuristicCounter::raw_count(""), 0);
        assert_eq!(HeuristicCounter::raw_count("  \n\t "), 0);
    }

    #[test]
    fn budget_factor_rounds_up() {
        let c = HeuristicCounter::for_budget();
        assert_eq!(c.count("a b c d e f g h i j"), 13);
        assert_eq!(c.count("a"), 2);
        assert_eq!(HeuristicCounter::raw().count("a b c"), 3);
    }
}
