//! Token estimation and the result-budget rule.

/// Combined token limit for (query, question, result rows) before results
/// are withheld from the model and only the CSV location is passed on.
pub const RESULT_TOKEN_BUDGET: usize = 6000;

/// Something that can count tokens in a piece of text.
///
/// Implementations must be deterministic and monotone under concatenation.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Default estimator: `ceil(bytes / 3)`.
///
/// Common BPE tokenizers average closer to four bytes per token on English and
/// SPARQL text, so this over-counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenCounter for ByteEstimator {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(3)
    }
}

/// Counts tokens with the default estimator.
pub fn count_tokens(text: &str) -> usize {
    ByteEstimator.count(text)
}

/// True iff the three strings together fit in [`RESULT_TOKEN_BUDGET`].
///
/// Must be called with the exact strings that would be placed in a prompt.
pub fn within_result_budget(
    counter: &dyn TokenCounter,
    query: &str,
    question: &str,
    result_rows: &str,
) -> bool {
    counter.count(query) + counter.count(question) + counter.count(result_rows)
        <= RESULT_TOKEN_BUDGET
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_zero_tokens() {
        assert_eq!(count_tokens(""), 0);
    }

    #[test]
    fn three_thousand_bytes_is_one_thousand_tokens() {
        assert_eq!(count_tokens(&"a".repeat(3000)), 1000);
        assert_eq!(count_tokens(&"a".repeat(3001)), 1001);
    }

    #[test]
    fn budget_boundary() {
        let c = ByteEstimator;
        // 1 + 1 + 5998 = 6000
        assert!(within_result_budget(&c, "abc", "abc", &"x".repeat(5998 * 3)));
        // 1 + 1 + 5999 = 6001
        assert!(!within_result_budget(&c, "abc", "abc", &"x".repeat(5999 * 3)));
        assert!(within_result_budget(&c, "SELECT ?x WHERE {}", "q", ""));
    }

    proptest! {
        #[test]
        fn concatenation_bounds(x in ".{0,200}", y in ".{0,200}") {
            let joined = format!("{x}{y}");
            prop_assert!(count_tokens(&x) + count_tokens(&y) + 1 >= count_tokens(&joined));
            prop_assert!(count_tokens(&joined) >= count_tokens(&x));
        }
    }
}
