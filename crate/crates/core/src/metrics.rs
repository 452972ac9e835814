//! Overlap and hallucination metrics, plus evaluator-backed scores.
//!
//! All ROUGE variants share one tokenizer: lowercase, then split on runs of
//! non-alphanumeric characters. No stemming and no stopword removal.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ClassId;
use crate::pipeline::{Csr, NOT_AVAILABLE};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("the summary concept set is empty")]
    EmptySummary,
    #[error("no (summary, domain) pairs to score")]
    NoPairs,
    #[error("unknown domain label {label:?}; classifier declares {known:?}")]
    UnknownDomain { label: String, known: Vec<String> },
    #[error("classifier returned no score for declared domain {0:?}")]
    MissingScore(String),
    #[error("every CSR entry is N/A; nothing to score")]
    NothingToScore,
    #[error("evaluator failure: {0}")]
    Evaluator(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.len() < n || refr.len() < n {
        return 0.0;
    }
    let cc = ngram_counts(&cand, n);
    let rc = ngram_counts(&refr, n);
    let overlap: usize = cc
        .iter()
        .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    f1(overlap, cand.len() + 1 - n, refr.len() + 1 - n)
}

/// ROUGE-1 F1 with clipped unigram counts.
pub fn rouge1(candidate: &str, reference: &str) -> f64 {
    rouge_n(candidate, reference, 1)
}

/// ROUGE-2 F1 with clipped bigram counts; 0 when either side has fewer than
/// two tokens.
pub fn rouge2(candidate: &str, reference: &str) -> f64 {
    rouge_n(candidate, reference, 2)
}

fn lcs_positions(a: &[String], b: &[String]) -> Vec<usize> {
    // Returns indices into `a` on one longest common subsequence.
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < n && j < m {
        if a[i] == b[j] {
            out.push(i);
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Summary-level ROUGE-L F1: sentences are newline-separated, and each
/// reference sentence is matched against the union of its LCS with every
/// candidate sentence (hits clipped by token counts).
pub fn rouge_lsum(candidate: &str, reference: &str) -> f64 {
    let split = |s: &str| -> Vec<Vec<String>> {
        s.lines()
            .map(tokenize)
            .filter(|t| !t.is_empty())
            .collect()
    };
    let cand = split(candidate);
    let refr = split(reference);
    let cand_total: usize = cand.iter().map(Vec::len).sum();
    let ref_total: usize = refr.iter().map(Vec::len).sum();
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let mut cand_left: HashMap<&str, usize> = HashMap::new();
    for t in cand.iter().flatten() {
        *cand_left.entry(t).or_default() += 1;
    }
    let mut ref_left: HashMap<&str, usize> = HashMap::new();
    for t in refr.iter().flatten() {
        *ref_left.entry(t).or_default() += 1;
    }
    let mut hits = 0;
    for r in &refr {
        let union: BTreeSet<usize> = cand.iter().flat_map(|c| lcs_positions(r, c)).collect();
        for i in union {
            let tok = r[i].as_str();
            let (rl, cl) = (ref_left.get_mut(tok), cand_left.get(tok).copied());
            if let (Some(rl), Some(cl)) = (rl, cl) {
                if *rl > 0 && cl > 0 {
                    *rl -= 1;
                    *cand_left.get_mut(tok).unwrap() -= 1;
                    hits += 1;
                }
            }
        }
    }
    f1(hits, cand_total, ref_total)
}

/// A set of ontology classes (note concepts, summary concepts, ...).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet(pub BTreeSet<ClassId>);

impl ConceptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, c: &ClassId) -> bool {
        self.0.contains(c)
    }
}

impl FromIterator<ClassId> for ConceptSet {
    fn from_iter<I: IntoIterator<Item = ClassId>>(iter: I) -> Self {
        ConceptSet(iter.into_iter().collect())
    }
}

/// HS = |S - N| / |S|
pub fn hallucination_score(summary: &ConceptSet, notes: &ConceptSet) -> Result<f64> {
    if summary.is_empty() {
        return Err(MetricsError::EmptySummary);
    }
    let missing = summary.0.iter().filter(|c| !notes.contains(c)).count();
    Ok(missing as f64 / summary.len() as f64)
}

/// AHS = |S - (N ∪ R)| / |S|
pub fn adjusted_hallucination_score(
    summary: &ConceptSet,
    notes: &ConceptSet,
    reference: &ConceptSet,
) -> Result<f64> {
    if summary.is_empty() {
        return Err(MetricsError::EmptySummary);
    }
    let missing = summary
        .0
        .iter()
        .filter(|c| !notes.contains(c) && !reference.contains(c))
        .count();
    Ok(missing as f64 / summary.len() as f64)
}

/// Text classifier over a fixed list of domains. Scores are passed through
/// as returned (logits or probabilities).
pub trait DomainClassifier {
    fn domains(&self) -> &[String];
    fn score(&self, text: &str) -> Result<HashMap<String, f64>>;
}

/// Natural-language-inference model returning an entailment probability.
pub trait EntailmentModel {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64>;
}

/// Mean score of the expected domain over `(summary, expected_domain)` pairs.
pub fn domain_score<C: DomainClassifier + ?Sized>(
    classifier: &C,
    pairs: &[(String, String)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let known = classifier.domains();
    let mut total = 0.0;
    for (summary, expected) in pairs {
        if !known.iter().any(|d| d == expected) {
            return Err(MetricsError::UnknownDomain {
                label: expected.clone(),
                known: known.to_vec(),
            });
        }
        let scores = classifier.score(summary)?;
        total += scores
            .get(expected)
            .copied()
            .ok_or_else(|| MetricsError::MissingScore(expected.clone()))?;
    }
    Ok(total / pairs.len() as f64)
}

/// The hypothesis format shared by groundedness and CSR rendering.
pub fn concept_hypothesis(label: &str, value: &str) -> String {
    format!("{label} : {value}")
}

fn label_of<'a>(labels: &'a BTreeMap<ClassId, String>, id: &'a ClassId) -> &'a str {
    labels.get(id).map(String::as_str).unwrap_or(id.as_str())
}

fn mean_over_entries<F>(csr: &Csr, mut f: F) -> Result<f64>
where
    F: FnMut(&ClassId, &str) -> Result<f64>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for entry in csr.entries.iter().filter(|e| e.value != NOT_AVAILABLE) {
        sum += f(&entry.class_id, &entry.value)?;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NothingToScore);
    }
    Ok(sum / n as f64)
}

/// Mean entailment of `"[label] : [value]"` hypotheses by the source note.
pub fn groundedness<E: EntailmentModel + ?Sized>(
    nli: &E,
    note: &str,
    csr: &Csr,
    labels: &BTreeMap<ClassId, String>,
) -> Result<f64> {
    mean_over_entries(csr, |id, value| {
        nli.entail(note, &concept_hypothesis(label_of(labels, id), value))
    })
}

/// Mean entailment of each concept label by its extracted value.
pub fn relevance<E: EntailmentModel + ?Sized>(
    nli: &E,
    csr: &Csr,
    labels: &BTreeMap<ClassId, String>,
) -> Result<f64> {
    mean_over_entries(csr, |id, value| nli.entail(value, label_of(labels, id)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rouge1: Option<f64>,
    pub rouge2: f64,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: Option<f64>,
    pub hs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ahs: Option<f64>,
    pub domain_score: Option<f64>,
    pub groundedness: Option<f64>,
    pub relevance: Option<f64>,
}

/// Lightweight evaluators used by tests and the CLI fixtures. They stand in
/// for trained models and carry no claim of clinical validity.
pub mod reference {
    use super::*;

    /// Scores each domain by the fraction of text tokens found in its keyword list.
    #[derive(Clone, Debug)]
    pub struct KeywordClassifier {
        domains: Vec<String>,
        keywords: Vec<BTreeSet<String>>,
    }

    impl KeywordClassifier {
        pub fn new<I, S>(domains: I) -> Self
        where
            I: IntoIterator<Item = (S, Vec<S>)>,
            S: Into<String>,
        {
            let (domains, keywords) = domains
                .into_iter()
                .map(|(d, kws)| {
                    let set = kws
                        .into_iter()
                        .flat_map(|k| tokenize(&k.into()))
                        .collect::<BTreeSet<_>>();
                    (d.into(), set)
                })
                .unzip();
            KeywordClassifier { domains, keywords }
        }
    }

    impl DomainClassifier for KeywordClassifier {
        fn domains(&self) -> &[String] {
            &self.domains
        }

        fn score(&self, text: &str) -> Result<HashMap<String, f64>> {
            let toks = tokenize(text);
            Ok(self
                .domains
                .iter()
                .zip(&self.keywords)
                .map(|(d, kw)| {
                    let hits = toks.iter().filter(|t| kw.contains(*t)).count();
                    let s = if toks.is_empty() {
                        0.0
                    } else {
                        hits as f64 / toks.len() as f64
                    };
                    (d.clone(), s)
                })
                .collect())
        }
    }

    /// Entailment proxy: fraction of hypothesis bigrams (clipped) that also
    /// occur in the premise. Single-token hypotheses fall back to unigrams.
    #[derive(Clone, Copy, Debug, Default)]
    pub struct BigramEntailment;

    impl EntailmentModel for BigramEntailment {
        fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
            let p = tokenize(premise);
            let h = tokenize(hypothesis);
            let n = if h.len() >= 2 { 2 } else { 1 };
            if h.len() < n {
                return Ok(0.0);
            }
            let pc = ngram_counts(&p, n);
            let hc = ngram_counts(&h, n);
            let overlap: usize = hc
                .iter()
                .map(|(g, &c)| c.min(pc.get(g).copied().unwrap_or(0)))
                .sum();
            Ok(overlap as f64 / (h.len() + 1 - n) as f64)
        }
    }
}
