//! Token counting under a pluggable tokenizer.
//!
//! The default `unicode_words` mode counts word-boundary segments and keeps
//! every test hermetic; `chars_div4` is a cheap approximation; `external`
//! defers to a deployed model's tokenizer over HTTP.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    #[default]
    UnicodeWords,
    CharsDiv4,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_endpoint: Option<String>,
}

impl TokenizerConfig {
    pub fn unicode_words() -> Self {
        Self { mode: TokenizerMode::UnicodeWords, external_endpoint: None }
    }

    pub fn chars_div4() -> Self {
        Self { mode: TokenizerMode::CharsDiv4, external_endpoint: None }
    }

    /// Endpoint must be present exactly when mode is `external`.
    pub fn validate(&self) -> Result<(), TokenizerError> {
        match (self.mode, &self.external_endpoint) {
            (TokenizerMode::External, None) => Err(TokenizerError::MissingEndpoint),
            (TokenizerMode::External, Some(_)) => Ok(()),
            (_, Some(_)) => Err(TokenizerError::UnexpectedEndpoint),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("external tokenizer endpoint unreachable: {0}")]
    TokenizerUnavailable(String),
    #[error("tokenizer mode is external but no endpoint is configured")]
    MissingEndpoint,
    #[error("external_endpoint set but tokenizer mode is not external")]
    UnexpectedEndpoint,
}

/// Counts tokens in `text` under the given config. Deterministic for fixed
/// config; only the `external` mode can fail.
pub fn count_tokens(text: &str, cfg: &TokenizerConfig) -> Result<usize, TokenizerError> {
    match cfg.mode {
        TokenizerMode::UnicodeWords => Ok(count_unicode_words(text)),
        TokenizerMode::CharsDiv4 => Ok(text.chars().count().div_ceil(4)),
        TokenizerMode::External => {
            let endpoint = cfg
                .external_endpoint
                .as_deref()
                .ok_or(TokenizerError::MissingEndpoint)?;
            count_external(text, endpoint)
        }
    }
}

/// Word-boundary segments that carry alphanumeric content, per UAX-29.
pub fn count_unicode_words(text: &str) -> usize {
    text.unicode_words().count()
}

/// Lowercased word tokens, shared by the lexical index and the embedder.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

#[derive(Serialize)]
struct CountRequest<'a> {
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct CountResponse {
    counts: Vec<usize>,
}

fn count_external(text: &str, endpoint: &str) -> Result<usize, TokenizerError> {
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(endpoint)
        .json(&CountRequest { input: vec![text] })
        .send()
        .map_err(|e| TokenizerError::TokenizerUnavailable(e.to_string()))?;
    let body: CountResponse = resp
        .json()
        .map_err(|e| TokenizerError::TokenizerUnavailable(e.to_string()))?;
    body.counts
        .first()
        .copied()
        .ok_or_else(|| TokenizerError::TokenizerUnavailable("empty counts".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_counts_zero() {
        assert_eq!(count_tokens("", &TokenizerConfig::unicode_words()).unwrap(), 0);
        assert_eq!(count_tokens("", &TokenizerConfig::chars_div4()).unwrap(), 0);
    }

    #[test]
    fn chars_div4_rounds_up() {
        // "aaaa bbbb" is 9 chars
        assert_eq!(count_tokens("aaaa bbbb", &TokenizerConfig::chars_div4()).unwrap(), 3);
        assert_eq!(count_tokens("abcd", &TokenizerConfig::chars_div4()).unwrap(), 1);
        assert_eq!(count_tokens("abcde", &TokenizerConfig::chars_div4()).unwrap(), 2);
    }

    #[test]
    fn unicode_words_matches_whitespace_oracle_on_plain_text() {
        // Synthetic 1,000-word text of simple space-separated words: an
        // independent whitespace segmentation oracle must agree exactly.
        let words: Vec<String> = (0..1000).map(|i| format!("word{i}")).collect();
        let text = words.join(" ");
        let oracle = text.split_whitespace().count();
        assert_eq!(oracle, 1000);
        assert_eq!(count_tokens(&text, &TokenizerConfig::unicode_words()).unwrap(), oracle);
    }

    #[test]
    fn punctuation_carries_no_words() {
        assert_eq!(count_unicode_words("... !!! ---"), 0);
        assert_eq!(count_unicode_words("one, two; three."), 3);
    }

    #[test]
    fn external_mode_requires_endpoint() {
        let cfg = TokenizerConfig { mode: TokenizerMode::External, external_endpoint: None };
        assert!(cfg.validate().is_err());
        assert!(matches!(
            count_tokens("x", &cfg),
            Err(TokenizerError::MissingEndpoint)
        ));
    }

    #[test]
    fn word_tokens_lowercase() {
        assert_eq!(word_tokens("Flower EXPO Kunming"), vec!["flower", "expo", "kunming"]);
    }
}
