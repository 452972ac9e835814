//! Token-probability language model contract.
//!
//! The decoder only needs next-token log-probabilities for a prefix, so any
//! backend that can produce them plugs in through [`LanguageModel`]. Two
//! implementations ship here: an add-one smoothed n-gram model used as a
//! deterministic reference, and an HTTP client for remote backends.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod ngram;
pub mod remote;
pub mod server;

pub use ngram::{train_ngram, NgramLm, EOS_TOKEN, UNK_TOKEN};
pub use remote::{remote_next_logits, RemoteLm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Next-token distribution in natural-log space.
///
/// Entries are sorted by token id. Tokens absent from a truncated step have
/// log-probability negative infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct LmStep {
    logits: Vec<(TokenId, f64)>,
    truncated: bool,
}

impl LmStep {
    pub fn new(mut logits: Vec<(TokenId, f64)>, truncated: bool) -> Self {
        logits.sort_by_key(|&(t, _)| t);
        logits.dedup_by_key(|&mut (t, _)| t);
        LmStep { logits, truncated }
    }

    /// Dense distribution over the whole vocabulary, indexed by token id.
    pub fn dense(logprobs: Vec<f64>) -> Self {
        let logits = logprobs
            .into_iter()
            .enumerate()
            .map(|(i, lp)| (TokenId(i as u32), lp))
            .collect();
        LmStep {
            logits,
            truncated: false,
        }
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.logits
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.logits[i].1)
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.logits.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// The `k` most likely tokens, ties broken by lower token id.
    pub fn top_k(&self, k: usize) -> LmStep {
        let mut sorted = self.logits.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let truncated = self.truncated || sorted.len() > k;
        sorted.truncate(k);
        LmStep::new(sorted, truncated)
    }
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("token {0} is outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, LmError>;

/// Everything the decoder needs from a model.
pub trait LanguageModel {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;
    fn next_logits(&self, prefix: &[TokenId]) -> Result<LmStep>;
    fn eos(&self) -> TokenId;
    fn vocab_size(&self) -> usize;
}

impl<L: LanguageModel + ?Sized> LanguageModel for &L {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
    fn next_logits(&self, prefix: &[TokenId]) -> Result<LmStep> {
        (**self).next_logits(prefix)
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
}

impl<L: LanguageModel + ?Sized> LanguageModel for Box<L> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
    fn next_logits(&self, prefix: &[TokenId]) -> Result<LmStep> {
        (**self).next_logits(prefix)
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
}
