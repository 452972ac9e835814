//! Domain analysis, concept-wise extraction, pruning and verbalization.
//!
//! The flow is: build a Domain-Class-Frequency dictionary (DCF) per domain
//! from a reference corpus and normalize it against the cross-domain average;
//! extract a class-structured representation (CSR) of each note by prompting
//! the model once per detected concept; prune CSRs to the classes a domain
//! cares about; verbalize the pruned CSRs into free text.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{annotate, Lexicon};
use crate::decoder::{decode, DecodeConfig, DecodeError, Guidance};
use crate::lm::LanguageModel;
use crate::ontology::{ClassId, Ontology, OntologyError};

/// Value an extraction pass produces when the note says nothing about a concept.
pub const NOT_AVAILABLE: &str = "N/A";

/// Line placed between rendered CSR blocks.
pub const CSR_SEPARATOR: &str = "==========";

pub const AVERAGE_DOMAIN: &str = "average";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("domain {0:?} has an empty corpus")]
    EmptyCorpus(String),
    #[error("DCF normalization needs at least two domains, got {0}")]
    TooFewDomains(usize),
    #[error("note {0:?} is empty")]
    EmptyNote(String),
    #[error("nothing to verbalize")]
    NoCsrs,
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("extraction of note {note_id:?} failed on class {class_id} after {} completed entries: {source}", completed.entries.len())]
    PartialCsr {
        note_id: String,
        class_id: ClassId,
        completed: Box<Csr>,
        #[source]
        source: Box<DecodeError>,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// One input document, as read from the JSON-lines corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    #[serde(default)]
    pub domain: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainSpec {
    pub name: String,
    pub corpus: Vec<String>,
}

/// How per-document class sets are aggregated into DCF counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcfCounting {
    /// Number of documents whose augmented class set contains the class.
    #[default]
    DocumentFrequency,
    /// Number of mentions of the class or of any of its kept descendants.
    Occurrences,
}

/// Domain-Class-Frequency dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dcf {
    pub domain: String,
    pub freq: BTreeMap<ClassId, f64>,
}

impl Dcf {
    /// Classes sorted by decreasing frequency, ties by class id.
    pub fn ranked(&self) -> Vec<(&ClassId, f64)> {
        let mut v: Vec<(&ClassId, f64)> = self.freq.iter().map(|(c, &f)| (c, f)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }

    pub fn top_k(&self, k: usize) -> Vec<ClassId> {
        self.ranked().into_iter().take(k).map(|(c, _)| c.clone()).collect()
    }
}

/// Per-document augmented class sets: classes mentioned at least `min_occ`
/// times, closed under ancestors. Returned with per-class mention weights.
fn document_classes(
    ontology: &Ontology,
    lexicon: &Lexicon,
    text: &str,
    min_occ: usize,
) -> Result<BTreeMap<ClassId, usize>> {
    let mut mentions: BTreeMap<ClassId, usize> = BTreeMap::new();
    for a in annotate(lexicon, text) {
        *mentions.entry(a.class_id).or_default() += 1;
    }
    let mut augmented: BTreeMap<ClassId, usize> = BTreeMap::new();
    for (class, n) in mentions.into_iter().filter(|&(_, n)| n >= min_occ.max(1)) {
        for anc in ontology.ancestors(&class)? {
            *augmented.entry(anc).or_default() += n;
        }
        *augmented.entry(class).or_default() += n;
    }
    Ok(augmented)
}

pub fn build_dcf(
    ontology: &Ontology,
    lexicon: &Lexicon,
    domain: &DomainSpec,
    min_occ: usize,
) -> Result<Dcf> {
    build_dcf_with(ontology, lexicon, domain, min_occ, DcfCounting::DocumentFrequency)
}

pub fn build_dcf_with(
    ontology: &Ontology,
    lexicon: &Lexicon,
    domain: &DomainSpec,
    min_occ: usize,
    counting: DcfCounting,
) -> Result<Dcf> {
    if domain.corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus(domain.name.clone()));
    }
    let per_doc: Vec<BTreeMap<ClassId, usize>> = domain
        .corpus
        .par_iter()
        .map(|doc| document_classes(ontology, lexicon, doc, min_occ))
        .collect::<Result<_>>()?;
    let mut freq: BTreeMap<ClassId, f64> = BTreeMap::new();
    for doc in per_doc {
        for (class, weight) in doc {
            let add = match counting {
                DcfCounting::DocumentFrequency => 1.0,
                DcfCounting::Occurrences => weight as f64,
            };
            *freq.entry(class).or_default() += add;
        }
    }
    Ok(Dcf {
        domain: domain.name.clone(),
        freq,
    })
}

const NORMALIZATION_EPSILON: f64 = 1e-9;

/// Mean raw frequency of every class across domains (absent counts as 0).
pub fn average_dcf(raw: &[Dcf]) -> Dcf {
    let mut sum: BTreeMap<ClassId, f64> = BTreeMap::new();
    for d in raw {
        for (c, &f) in &d.freq {
            *sum.entry(c.clone()).or_default() += f;
        }
    }
    let n = raw.len().max(1) as f64;
    Dcf {
        domain: AVERAGE_DOMAIN.to_string(),
        freq: sum.into_iter().map(|(c, s)| (c, s / n)).collect(),
    }
}

/// Divides each domain's frequencies by the cross-domain average.
pub fn normalize_dcf(raw: &[Dcf]) -> Result<Vec<Dcf>> {
    if raw.len() < 2 {
        return Err(PipelineError::TooFewDomains(raw.len()));
    }
    let avg = average_dcf(raw);
    Ok(raw
        .iter()
        .map(|d| Dcf {
            domain: d.domain.clone(),
            freq: d
                .freq
                .iter()
                .map(|(c, &f)| (c.clone(), f / (avg.freq[c] + NORMALIZATION_EPSILON)))
                .collect(),
        })
        .collect())
}

pub fn build_prompt(
    ontology: &Ontology,
    concept: &ClassId,
    note: &str,
) -> std::result::Result<String, OntologyError> {
    let label = ontology.label(concept)?;
    let properties = ontology.verbalize_restrictions(concept)?;
    let mut prompt = format!(
        "Here is a clinical note about a patient : {note}. In a short sentence, summarize \
         everything related to the \"{label}\" concept mentioned in the clinical note."
    );
    if !properties.is_empty() {
        prompt.push_str(&format!(" \"{label}\" is characterized by {properties}."));
    }
    prompt.push_str(" If nothing is mentioned, answer with \"N/A\"");
    Ok(prompt)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrEntry {
    pub class_id: ClassId,
    pub value: String,
}

/// Class-structured representation of one note: detected classes mapped to
/// extracted values, in order of first mention.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Csr {
    pub note_id: String,
    pub entries: Vec<CsrEntry>,
}

impl Csr {
    pub fn keys(&self) -> impl Iterator<Item = &ClassId> {
        self.entries.iter().map(|e| &e.class_id)
    }

    pub fn get(&self, class: &ClassId) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| &e.class_id == class)
            .map(|e| e.value.as_str())
    }

    pub fn to_doc(&self, ontology: &Ontology) -> CsrDoc {
        CsrDoc {
            note_id: self.note_id.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| CsrDocEntry {
                    class: e.class_id.clone(),
                    label: ontology
                        .label(&e.class_id)
                        .map(str::to_string)
                        .unwrap_or_else(|_| e.class_id.to_string()),
                    value: e.value.clone(),
                })
                .collect(),
        }
    }
}

/// On-disk CSR shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrDoc {
    pub note_id: String,
    pub entries: Vec<CsrDocEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrDocEntry {
    pub class: ClassId,
    pub label: String,
    pub value: String,
}

impl From<CsrDoc> for Csr {
    fn from(doc: CsrDoc) -> Self {
        Csr {
            note_id: doc.note_id,
            entries: doc
                .entries
                .into_iter()
                .map(|e| CsrEntry {
                    class_id: e.class,
                    value: e.value,
                })
                .collect(),
        }
    }
}

/// Distinct annotated classes of `text`, in order of first mention.
pub fn note_concepts(lexicon: &Lexicon, text: &str) -> Vec<ClassId> {
    let mut seen = BTreeSet::new();
    annotate(lexicon, text)
        .into_iter()
        .filter_map(|a| seen.insert(a.class_id.clone()).then_some(a.class_id))
        .collect()
}

/// Runs one guided decode per concept of `note`. When `only` is given, the
/// extraction is restricted to that class (if the note mentions it).
///
/// Per-concept decodes run on the current rayon pool; entry order follows
/// first mention regardless of completion order.
pub fn extract_csr<L>(
    lm: &L,
    ontology: &Ontology,
    lexicon: &Lexicon,
    note: &Note,
    cfg: &DecodeConfig,
    only: Option<&ClassId>,
) -> Result<Csr>
where
    L: LanguageModel + Sync + ?Sized,
{
    if note.text.trim().is_empty() {
        return Err(PipelineError::EmptyNote(note.id.clone()));
    }
    cfg.validate()?;
    let concepts: Vec<ClassId> = note_concepts(lexicon, &note.text)
        .into_iter()
        .filter(|c| only.is_none_or(|o| o == c))
        .collect();

    let results: Vec<std::result::Result<String, DecodeError>> = concepts
        .par_iter()
        .map(|class| {
            let prompt = build_prompt(ontology, class, &note.text).map_err(DecodeError::Ontology)?;
            let guidance = Guidance {
                ontology,
                lexicon,
                base: Some(class),
                note: &note.text,
            };
            let out = decode(lm, &prompt, &guidance, cfg)?;
            let value = out.text.trim();
            Ok(if value.is_empty() {
                NOT_AVAILABLE.to_string()
            } else {
                value.to_string()
            })
        })
        .collect();

    let mut csr = Csr {
        note_id: note.id.clone(),
        entries: Vec::with_capacity(concepts.len()),
    };
    let mut failure = None;
    for (class, result) in concepts.into_iter().zip(results) {
        match result {
            Ok(value) => csr.entries.push(CsrEntry {
                class_id: class,
                value,
            }),
            Err(e) if failure.is_none() => failure = Some((class, e)),
            Err(_) => {}
        }
    }
    match failure {
        None => Ok(csr),
        Some((class_id, source)) => Err(PipelineError::PartialCsr {
            note_id: note.id.clone(),
            class_id,
            completed: Box::new(csr),
            source: Box::new(source),
        }),
    }
}

/// Top-`k` DCF classes plus every class within `alpha` child hops of one of
/// them. Classes unknown to the ontology are kept but not expanded.
pub fn keep_set(dcf: &Dcf, ontology: &Ontology, k: usize, alpha: usize) -> BTreeSet<ClassId> {
    let mut keep = BTreeSet::new();
    for class in dcf.top_k(k) {
        if let Ok(desc) = ontology.descendants_within(&class, alpha) {
            keep.extend(desc);
        }
        keep.insert(class);
    }
    keep
}

pub fn prune_csr(csr: &Csr, dcf: &Dcf, ontology: &Ontology, k: usize, alpha: usize) -> Csr {
    let keep = keep_set(dcf, ontology, k, alpha);
    Csr {
        note_id: csr.note_id.clone(),
        entries: csr
            .entries
            .iter()
            .filter(|e| keep.contains(&e.class_id))
            .cloned()
            .collect(),
    }
}

/// `"[label] : [value]"` lines per CSR, blocks separated by a line of `=`.
/// N/A entries are left out.
pub fn render_csrs(csrs: &[Csr], ontology: &Ontology) -> String {
    csrs.iter()
        .map(|csr| {
            csr.entries
                .iter()
                .filter(|e| e.value != NOT_AVAILABLE)
                .map(|e| {
                    let label = ontology.label(&e.class_id).unwrap_or(e.class_id.as_str());
                    crate::metrics::concept_hypothesis(label, &e.value)
                })
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect::<Vec<_>>()
        .join(&format!("\n{CSR_SEPARATOR}\n"))
}

/// Opening of the verbalizer prompt, ahead of the rendered CSRs.
pub const VERBALIZER_PREAMBLE: &str = "Here are a patient's clinical notes organized as a series of \
     key-value pairs. Keys represent medical concepts and values provide specific details, \
     observations, or interpretations about the patients related to the key. Every sequence of \
     '=' indicates a different note about the same patient made by a different clinician :";

/// Default closing instruction of the verbalizer prompt.
pub const DEFAULT_TASK_INSTRUCTION: &str = "Summarize these clinical notes in a short text.";

pub fn verbalization_prompt(csrs: &[Csr], ontology: &Ontology, task_instruction: &str) -> String {
    format!(
        "{VERBALIZER_PREAMBLE}\n{CSR_SEPARATOR}\n{}\n{CSR_SEPARATOR}\n{task_instruction}",
        render_csrs(csrs, ontology)
    )
}

/// Final unguided pass turning pruned CSRs into text. Only the similarity
/// score is active, measured against the rendered CSRs.
pub fn verbalize<L>(
    lm: &L,
    ontology: &Ontology,
    lexicon: &Lexicon,
    csrs: &[Csr],
    task_instruction: &str,
    cfg: &DecodeConfig,
) -> Result<String>
where
    L: LanguageModel + ?Sized,
{
    if csrs.is_empty() {
        return Err(PipelineError::NoCsrs);
    }
    let rendered = render_csrs(csrs, ontology);
    let prompt = verbalization_prompt(csrs, ontology, task_instruction);
    let guidance = Guidance {
        ontology,
        lexicon,
        base: None,
        note: &rendered,
    };
    Ok(decode(lm, &prompt, &guidance, cfg)?.text)
}

/// Groups corpus notes by domain, preserving first-appearance order of domains
/// and input order of notes. Notes without a domain are skipped.
pub fn domains_from_notes(notes: &[Note]) -> Vec<DomainSpec> {
    let mut order: Vec<String> = Vec::new();
    let mut by_domain: HashMap<String, Vec<String>> = HashMap::new();
    for note in notes {
        if let Some(d) = &note.domain {
            if !by_domain.contains_key(d) {
                order.push(d.clone());
            }
            by_domain.entry(d.clone()).or_default().push(note.text.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let corpus = by_domain.remove(&name).unwrap_or_default();
            DomainSpec { name, corpus }
        })
        .collect()
}
