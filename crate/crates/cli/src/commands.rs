//! Subcommand implementations. Each returns what it wrote so callers (and
//! tests) can inspect it without re-reading files.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use onto_decode::lm::server::{self, ServerHandle};
use onto_decode::metrics::reference::{BigramEntailment, KeywordClassifier};
use onto_decode::metrics::{
    adjusted_hallucination_score, domain_score, groundedness, hallucination_score, relevance,
    rouge1, rouge2, rouge_lsum, ConceptSet, EvaluationReport, MetricsError,
};
use onto_decode::pipeline::{
    average_dcf, build_dcf_with, domains_from_notes, extract_csr, normalize_dcf, prune_csr,
    verbalize, CsrDoc, DomainSpec, AVERAGE_DOMAIN,
};
use onto_decode::{
    annotate, load_ontology, train_ngram, ClassId, Csr, Dcf, LanguageModel, Lexicon, NgramLm,
    Note, Ontology, RemoteLm,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LmKind, RunConfig};
use crate::error::{CliError, Result};

pub const DCF_DIR: &str = "dcf";
pub const CSR_DIR: &str = "csr";
pub const PRUNED_DIR: &str = "pruned";
pub const STRUCTURED_SUMMARY: &str = "structured_summary.json";
pub const UNSTRUCTURED_SUMMARY: &str = "unstructured_summary.txt";
pub const REPORT: &str = "report.json";

/// Model handle usable from worker threads.
pub type SharedLm = Box<dyn LanguageModel + Send + Sync>;

/// Ontology plus the lexicon derived from it.
pub struct Resources {
    pub ontology: Ontology,
    pub lexicon: Lexicon,
}

impl Resources {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = cfg.require_path("ontology_path", &cfg.ontology_path)?;
        let ontology = load_ontology(path)?;
        let lexicon = Lexicon::build(&ontology)?;
        log::info!(
            "loaded {} classes, {} surface forms",
            ontology.len(),
            lexicon.len()
        );
        Ok(Resources { ontology, lexicon })
    }

    fn labels(&self) -> BTreeMap<ClassId, String> {
        self.ontology
            .classes()
            .map(|c| (c.id.clone(), c.label.clone()))
            .collect()
    }

    fn concepts(&self, text: &str) -> ConceptSet {
        annotate(&self.lexicon, text)
            .into_iter()
            .map(|a| a.class_id)
            .collect()
    }
}

/// Keeps letters, digits, `-` and `_`; everything else becomes `_`.
pub fn file_stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    write(path, &text)
}

/// Reads JSON-lines notes, skipping blank lines.
pub fn read_notes_jsonl(path: &Path) -> Result<Vec<Note>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Notes from one file: `.json` holds one note, `.jsonl` many, anything else
/// is plain text whose id is the file stem.
pub fn read_note_file(path: &Path) -> Result<Vec<Note>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_notes_jsonl(path),
        Some("json") => Ok(vec![parse_json(path, &read(path)?)?]),
        _ => Ok(vec![Note {
            id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            domain: None,
            text: read(path)?,
        }]),
    }
}

/// Every `.txt`, `.json` and `.jsonl` note in `dir`, ordered by file name.
pub fn read_admission(dir: &Path) -> Result<Vec<Note>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("txt" | "json" | "jsonl")
                )
        })
        .collect();
    files.sort();
    let mut notes = Vec::new();
    for f in files {
        notes.extend(read_note_file(&f)?);
    }
    if notes.is_empty() {
        return Err(CliError::Usage(format!("no notes found in {}", dir.display())));
    }
    Ok(notes)
}

pub fn train_reference_lm(cfg: &RunConfig) -> Result<NgramLm> {
    let path = cfg
        .lm
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Usage("lm.corpus is not set".into()))?;
    let path = cfg.require_path("lm.corpus", path)?;
    let text = read(path)?;
    let sentences: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    Ok(train_ngram(&sentences, cfg.lm.order)?)
}

pub fn build_lm(cfg: &RunConfig) -> Result<SharedLm> {
    Ok(match cfg.lm.kind {
        LmKind::Ngram => Box::new(train_reference_lm(cfg)?),
        LmKind::Remote => {
            let endpoint = cfg.lm.endpoint.as_deref().unwrap_or_default();
            Box::new(RemoteLm::connect(endpoint, cfg.lm.top_k)?)
        }
    })
}

/// Raw per-domain DCFs, their normalized forms and the raw average.
#[derive(Clone, Debug, PartialEq)]
pub struct DcfSet {
    pub raw: Vec<Dcf>,
    pub normalized: Vec<Dcf>,
    pub average: Dcf,
}

impl DcfSet {
    pub fn domains(&self) -> Vec<String> {
        self.normalized.iter().map(|d| d.domain.clone()).collect()
    }

    pub fn get(&self, label: &str) -> Result<&Dcf> {
        self.normalized
            .iter()
            .find(|d| d.domain == label)
            .ok_or_else(|| CliError::UnknownDomain {
                label: label.to_string(),
                known: self.domains(),
            })
    }
}

fn selected_domains(cfg: &RunConfig, notes: &[Note]) -> Result<Vec<DomainSpec>> {
    let all = domains_from_notes(notes);
    if cfg.dcf.domains.is_empty() {
        return Ok(all);
    }
    cfg.dcf
        .domains
        .iter()
        .map(|want| {
            all.iter()
                .find(|d| &d.name == want)
                .cloned()
                .ok_or_else(|| CliError::UnknownDomain {
                    label: want.clone(),
                    known: all.iter().map(|d| d.name.clone()).collect(),
                })
        })
        .collect()
}

pub fn compute_dcfs(cfg: &RunConfig, res: &Resources) -> Result<DcfSet> {
    let path = cfg.require_path("corpus_path", &cfg.corpus_path)?;
    let notes = read_notes_jsonl(path)?;
    let domains = selected_domains(cfg, &notes)?;
    if let Some(d) = domains.iter().find(|d| d.name == AVERAGE_DOMAIN) {
        return Err(CliError::Config(format!(
            "domain name {:?} is reserved",
            d.name
        )));
    }
    let raw = domains
        .par_iter()
        .map(|d| build_dcf_with(&res.ontology, &res.lexicon, d, cfg.dcf.min_occ, cfg.dcf.counting))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let normalized = normalize_dcf(&raw)?;
    let average = average_dcf(&raw);
    Ok(DcfSet {
        raw,
        normalized,
        average,
    })
}

/// Writes `<output_dir>/dcf/<domain>.json` for each normalized DCF and
/// `<output_dir>/dcf/average.json`.
pub fn cmd_build_dcf(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let res = Resources::load(cfg)?;
    let set = compute_dcfs(cfg, &res)?;
    let dir = cfg.output_dir.join(DCF_DIR);
    let mut written = Vec::new();
    for d in set.normalized.iter().chain([&set.average]) {
        let path = dir.join(format!("{}.json", file_stem(&d.domain)));
        write_json(&path, d)?;
        written.push(path);
    }
    Ok(written)
}

fn extract_all(
    cfg: &RunConfig,
    res: &Resources,
    lm: &SharedLm,
    notes: &[Note],
    only: Option<&ClassId>,
) -> Result<Vec<Csr>> {
    // Collecting an indexed parallel iterator keeps input order.
    notes
        .par_iter()
        .map(|n| {
            extract_csr(lm, &res.ontology, &res.lexicon, n, &cfg.decode, only).map_err(CliError::from)
        })
        .collect()
}

/// Extracts one CSR per note in `note_path` into `<output_dir>/csr/<note id>.json`.
pub fn cmd_extract(cfg: &RunConfig, note_path: &Path, concept: Option<&str>) -> Result<Vec<CsrDoc>> {
    let res = Resources::load(cfg)?;
    let concept = concept.map(ClassId::from);
    if let Some(c) = &concept {
        res.ontology.class(c)?;
    }
    let notes = read_note_file(note_path)?;
    let lm = build_lm(cfg)?;
    let csrs = extract_all(cfg, &res, &lm, &notes, concept.as_ref())?;
    let docs: Vec<CsrDoc> = csrs.iter().map(|c| c.to_doc(&res.ontology)).collect();
    for doc in &docs {
        let path = cfg
            .output_dir
            .join(CSR_DIR)
            .join(format!("{}.json", file_stem(&doc.note_id)));
        write_json(&path, doc)?;
    }
    Ok(docs)
}

/// Prunes a CSR file against `domain`'s DCF, read from `dcf_path` or rebuilt
/// from the corpus. Writes `<output_dir>/pruned/<note id>.json`.
pub fn cmd_prune(
    cfg: &RunConfig,
    csr_path: &Path,
    domain: &str,
    dcf_path: Option<&Path>,
) -> Result<CsrDoc> {
    let res = Resources::load(cfg)?;
    let doc: CsrDoc = parse_json(csr_path, &read(csr_path)?)?;
    let dcf: Dcf = match dcf_path {
        Some(p) => parse_json(p, &read(p)?)?,
        None => compute_dcfs(cfg, &res)?.get(domain)?.clone(),
    };
    let pruned = prune_csr(&Csr::from(doc), &dcf, &res.ontology, cfg.prune.k, cfg.prune.alpha);
    let out = pruned.to_doc(&res.ontology);
    let path = cfg
        .output_dir
        .join(PRUNED_DIR)
        .join(format!("{}.json", file_stem(&out.note_id)));
    write_json(&path, &out)?;
    Ok(out)
}

/// On-disk structured summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredSummary {
    pub domain: Option<String>,
    pub pruned: bool,
    pub k: usize,
    pub alpha: usize,
    pub notes: Vec<CsrDoc>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryOutput {
    pub structured: StructuredSummary,
    pub unstructured: String,
    pub structured_path: PathBuf,
    pub unstructured_path: PathBuf,
}

/// Extraction, pruning (unless `no_prune`) and verbalization over every note
/// of an admission directory.
pub fn cmd_summarize(
    cfg: &RunConfig,
    admission_dir: &Path,
    domain: Option<&str>,
    no_prune: bool,
) -> Result<SummaryOutput> {
    let res = Resources::load(cfg)?;
    let notes = read_admission(admission_dir)?;
    let dcf = match (domain, no_prune) {
        (Some(label), _) => Some(compute_dcfs(cfg, &res)?.get(label)?.clone()),
        (None, false) => {
            return Err(CliError::Usage(
                "--domain is required unless --no-prune is given".into(),
            ))
        }
        (None, true) => None,
    };
    let lm = build_lm(cfg)?;
    log::info!("extracting {} notes", notes.len());
    let mut csrs = extract_all(cfg, &res, &lm, &notes, None)?;
    if let (Some(dcf), false) = (&dcf, no_prune) {
        csrs = csrs
            .iter()
            .map(|c| prune_csr(c, dcf, &res.ontology, cfg.prune.k, cfg.prune.alpha))
            .collect();
    }
    log::info!("verbalizing");
    let mut text = verbalize(
        &lm,
        &res.ontology,
        &res.lexicon,
        &csrs,
        &cfg.task_instruction,
        &cfg.decode,
    )?;
    text.push('\n');

    let structured = StructuredSummary {
        domain: domain.map(str::to_string),
        pruned: !no_prune,
        k: cfg.prune.k,
        alpha: cfg.prune.alpha,
        notes: csrs.iter().map(|c| c.to_doc(&res.ontology)).collect(),
    };
    let structured_path = cfg.output_dir.join(STRUCTURED_SUMMARY);
    let unstructured_path = cfg.output_dir.join(UNSTRUCTURED_SUMMARY);
    write_json(&structured_path, &structured)?;
    write(&unstructured_path, &text)?;
    Ok(SummaryOutput {
        structured,
        unstructured: text,
        structured_path,
        unstructured_path,
    })
}

/// Inputs of `score` beyond the configuration.
#[derive(Clone, Debug)]
pub struct ScoreInputs<'a> {
    pub summary: &'a Path,
    /// A note file or an admission directory.
    pub notes: &'a Path,
    pub reference: Option<&'a Path>,
    /// Structured summary for groundedness and relevance.
    pub structured: Option<&'a Path>,
    /// Expected domain for the domain score.
    pub domain: Option<&'a str>,
}

fn mean_available(values: impl Iterator<Item = std::result::Result<f64, MetricsError>>) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        match v {
            Ok(x) => {
                sum += x;
                n += 1;
            }
            Err(MetricsError::NothingToScore) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Evaluation report written to `<output_dir>/report.json`.
///
/// ROUGE is measured against the reference when one is given and against the
/// concatenated notes otherwise. The domain score uses a keyword classifier
/// whose keywords are the labels of each domain's top-k DCF classes; the
/// groundedness and relevance scores use the bigram entailment proxy.
pub fn cmd_score(cfg: &RunConfig, inputs: &ScoreInputs<'_>) -> Result<EvaluationReport> {
    let res = Resources::load(cfg)?;
    let summary = read(inputs.summary)?;
    let notes = if inputs.notes.is_dir() {
        read_admission(inputs.notes)?
    } else {
        read_note_file(inputs.notes)?
    };
    let notes_text = notes
        .iter()
        .map(|n| n.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let reference = inputs.reference.map(read).transpose()?;
    let target = reference.as_deref().unwrap_or(&notes_text);

    let s = res.concepts(&summary);
    let n = res.concepts(&notes_text);
    let hs = hallucination_score(&s, &n)?;
    let ahs = reference
        .as_deref()
        .map(|r| adjusted_hallucination_score(&s, &n, &res.concepts(r)))
        .transpose()?;

    let domain_score = match inputs.domain {
        Some(label) => {
            let set = compute_dcfs(cfg, &res)?;
            set.get(label)?;
            let clf = KeywordClassifier::new(set.normalized.iter().map(|d| {
                let kws: Vec<String> = d
                    .top_k(cfg.prune.k)
                    .iter()
                    .map(|c| res.ontology.label(c).unwrap_or(c.as_str()).to_string())
                    .collect();
                (d.domain.clone(), kws)
            }));
            Some(domain_score(&clf, &[(summary.clone(), label.to_string())])?)
        }
        None => None,
    };

    let (groundedness, relevance) = match inputs.structured {
        Some(path) => {
            let st: StructuredSummary = parse_json(path, &read(path)?)?;
            let labels = res.labels();
            let by_id: BTreeMap<&str, &str> =
                notes.iter().map(|n| (n.id.as_str(), n.text.as_str())).collect();
            let csrs: Vec<Csr> = st.notes.into_iter().map(Csr::from).collect();
            let g = mean_available(csrs.iter().map(|c| {
                let premise = by_id.get(c.note_id.as_str()).copied().unwrap_or(&notes_text);
                groundedness(&BigramEntailment, premise, c, &labels)
            }))?;
            let r = mean_available(csrs.iter().map(|c| relevance(&BigramEntailment, c, &labels)))?;
            (g, r)
        }
        None => (None, None),
    };

    let report = EvaluationReport {
        rouge1: Some(rouge1(&summary, target)),
        rouge2: rouge2(&summary, target),
        rouge_lsum: Some(rouge_lsum(&summary, target)),
        hs,
        ahs,
        domain_score,
        groundedness,
        relevance,
    };
    write_json(&cfg.output_dir.join(REPORT), &report)?;
    Ok(report)
}

/// Serves the configured n-gram model until the process exits.
pub fn cmd_serve_ngram(cfg: &RunConfig, addr: SocketAddr) -> Result<ServerHandle> {
    let lm = Arc::new(train_reference_lm(cfg)?);
    server::spawn(lm, addr).map_err(|e| CliError::io(addr.to_string(), e))
}
