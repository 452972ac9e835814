use std::collections::HashMap;

use super::{LanguageModel, LmError, LmStep, Result, TokenId};

pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

// Left padding for contexts shorter than the model order. Never predicted.
const BOS: u32 = u32::MAX;

#[derive(Default, Clone, Debug)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Add-one smoothed n-gram model over whitespace tokens.
///
/// The vocabulary is every corpus word in order of first occurrence, followed
/// by the end-of-sequence token and an unknown-word token. Out-of-vocabulary
/// words tokenize to the unknown token.
#[derive(Clone, Debug)]
pub struct NgramLm {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

/// Trains an order-`n` model. Every sentence contributes its transitions plus
/// a final transition into end-of-sequence.
pub fn train_ngram<S: AsRef<str>>(corpus: &[S], n: usize) -> Result<NgramLm> {
    if n == 0 {
        return Err(LmError::InvalidOrder);
    }
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }

    let mut words: Vec<String> = Vec::new();
    let mut ids: HashMap<String, u32> = HashMap::new();
    for sentence in corpus {
        for w in sentence.as_ref().split_whitespace() {
            if w == EOS_TOKEN || w == UNK_TOKEN || ids.contains_key(w) {
                continue;
            }
            ids.insert(w.to_string(), words.len() as u32);
            words.push(w.to_string());
        }
    }
    let eos = words.len() as u32;
    ids.insert(EOS_TOKEN.to_string(), eos);
    words.push(EOS_TOKEN.to_string());
    ids.insert(UNK_TOKEN.to_string(), eos + 1);
    words.push(UNK_TOKEN.to_string());

    let mut lm = NgramLm {
        order: n,
        words,
        ids,
        counts: HashMap::new(),
    };
    for sentence in corpus {
        let mut seq: Vec<u32> = vec![BOS; n - 1];
        seq.extend(sentence.as_ref().split_whitespace().map(|w| lm.id_of(w)));
        seq.push(eos);
        for window in seq.windows(n) {
            let (ctx, next) = window.split_at(n - 1);
            let entry = lm.counts.entry(ctx.to_vec()).or_default();
            entry.total += 1;
            *entry.next.entry(next[0]).or_default() += 1;
        }
    }
    Ok(lm)
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk(&self) -> TokenId {
        TokenId(self.words.len() as u32 - 1)
    }

    fn id_of(&self, word: &str) -> u32 {
        self.ids
            .get(word)
            .copied()
            .unwrap_or(self.words.len() as u32 - 1)
    }

    fn context(&self, prefix: &[TokenId]) -> Vec<u32> {
        let want = self.order - 1;
        let have = prefix.len().min(want);
        let mut ctx = vec![BOS; want - have];
        ctx.extend(prefix[prefix.len() - have..].iter().map(|t| t.0));
        ctx
    }

    /// Probability of `next` after `prefix`, without going through logs.
    pub fn probability(&self, prefix: &[TokenId], next: TokenId) -> f64 {
        let v = self.words.len() as u64;
        let (num, den) = match self.counts.get(&self.context(prefix)) {
            Some(c) => (c.next.get(&next.0).copied().unwrap_or(0) + 1, c.total + v),
            None => (1, v),
        };
        num as f64 / den as f64
    }
}

impl LanguageModel for NgramLm {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(text
            .split_whitespace()
            .map(|w| TokenId(self.id_of(w)))
            .collect())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let eos = self.eos();
        let mut parts = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t == eos {
                continue;
            }
            let w = self
                .words
                .get(t.0 as usize)
                .ok_or(LmError::UnknownToken(t))?;
            parts.push(w.as_str());
        }
        Ok(parts.join(" "))
    }

    fn next_logits(&self, prefix: &[TokenId]) -> Result<LmStep> {
        if let Some(&bad) = prefix.iter().find(|t| t.0 as usize >= self.words.len()) {
            return Err(LmError::UnknownToken(bad));
        }
        let v = self.words.len();
        let counts = self.counts.get(&self.context(prefix));
        let den = counts.map_or(0, |c| c.total) + v as u64;
        let logprobs = (0..v as u32)
            .map(|t| {
                let num = counts
                    .and_then(|c| c.next.get(&t))
                    .copied()
                    .unwrap_or(0)
                    + 1;
                (num as f64 / den as f64).ln()
            })
            .collect();
        Ok(LmStep::dense(logprobs))
    }

    fn eos(&self) -> TokenId {
        TokenId(self.words.len() as u32 - 2)
    }

    fn vocab_size(&self) -> usize {
        self.words.len()
    }
}
