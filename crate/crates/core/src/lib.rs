//! Ontology-guided constrained decoding and domain-adapted structured
//! summarization.
//!
//! * [`ontology`] loads a class hierarchy with `And`/`Or` restrictions.
//! * [`annotator`] tags text spans with ontology classes.
//! * [`lm`] defines the token-probability model contract and its backends.
//! * [`decoder`] runs diverse beam search rescored by hierarchy, property and
//!   similarity scores.
//! * [`pipeline`] builds domain frequency dictionaries, extracts and prunes
//!   class-structured representations, and verbalizes them.
//! * [`metrics`] holds ROUGE, hallucination scores and evaluator-backed scores.

pub mod annotator;
pub mod decoder;
pub mod lm;
pub mod metrics;
pub mod ontology;
pub mod pipeline;

pub use annotator::{annotate, Annotation, Lexicon};
pub use decoder::{decode, DecodeConfig, DecodeOutput, Guidance};
pub use lm::{train_ngram, LanguageModel, LmStep, NgramLm, RemoteLm, TokenId};
pub use ontology::{load_ontology, ClassId, Ontology};
pub use pipeline::{Csr, CsrEntry, Dcf, Note};
