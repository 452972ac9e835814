use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use onto_decode::metrics::{adjusted_hallucination_score, hallucination_score, rouge2, ConceptSet};
use onto_decode::pipeline::keep_set;
use onto_decode::{annotate, LanguageModel, Lexicon, RemoteLm};
use onto_decode_cli::commands::{compute_dcfs, train_reference_lm, Resources};
use onto_decode_cli::{
    cmd_build_dcf, cmd_extract, cmd_score, cmd_summarize, CliError, RunConfig, ScoreInputs,
};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config(out: &Path, extra: &[&str]) -> RunConfig {
    let mut sets = vec![format!("output_dir={}", out.display())];
    sets.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(Some(&fixtures().join("config.json")), &sets).unwrap()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_onto-decode"));
    c.env_remove("ONTO_DECODE_LOG");
    c
}

fn stderr_json(out: &std::process::Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn build_dcf_writes_domains_and_average() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let files = cmd_build_dcf(&cfg).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["cardiology.json", "neurology.json", "average.json"]);
    let cardio: Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(cardio["domain"], "cardiology");
    // Every cardiology note mentions a cardiac finding; neurology notes never do.
    assert!((cardio["freq"]["CardiacFinding"].as_f64().unwrap() - 2.0).abs() < 1e-6);

    let single = config(dir.path(), &["dcf.domains=[\"cardiology\"]"]);
    assert!(matches!(
        cmd_build_dcf(&single),
        Err(CliError::Pipeline(onto_decode::pipeline::PipelineError::TooFewDomains(1)))
    ));
    let unknown = config(dir.path(), &["dcf.domains=[\"cardiology\",\"derm\"]"]);
    assert!(matches!(cmd_build_dcf(&unknown), Err(CliError::UnknownDomain { .. })));
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["build-dcf", "--config"])
        .arg(fixtures().join("config.json"))
        .arg("--set")
        .arg(format!("output_dir={}", dir.path().display()))
        .args(["--set", "corpus_path=/nonexistent/corpus.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "usage");
    assert!(err["error"]["message"].as_str().unwrap().contains("corpus_path"));
}

#[test]
fn bad_arguments_report_json() {
    let out = bin().args(["summarize"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    let out = bin()
        .args(["build-dcf", "--set", "decode.beam_size=3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}

#[test]
fn extract_keys_match_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let note = dir.path().join("note.txt");
    std::fs::write(&note, "fever overnight, aspirin given").unwrap();
    let docs = cmd_extract(&cfg, &note, None).unwrap();
    assert_eq!(docs.len(), 1);
    let keys: Vec<&str> = docs[0].entries.iter().map(|e| e.class.as_str()).collect();
    assert_eq!(keys, ["Fever", "Aspirin"]);
    assert!(dir.path().join("csr/note.json").exists());

    let only = cmd_extract(&cfg, &note, Some("Aspirin")).unwrap();
    assert_eq!(only[0].entries.len(), 1);
    assert_eq!(only[0].entries[0].class.as_str(), "Aspirin");
    assert!(cmd_extract(&cfg, &note, Some("Nope")).is_err());

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "  \n").unwrap();
    assert!(matches!(
        cmd_extract(&cfg, &empty, None),
        Err(CliError::Pipeline(onto_decode::pipeline::PipelineError::EmptyNote(_)))
    ));
}

#[test]
fn summarize_respects_keep_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["prune.k=4", "prune.alpha=1"]);
    let admission = fixtures().join("admission");
    let out = cmd_summarize(&cfg, &admission, Some("cardiology"), false).unwrap();
    assert!(out.structured_path.exists());
    assert!(out.unstructured_path.exists());

    let res = Resources::load(&cfg).unwrap();
    let dcfs = compute_dcfs(&cfg, &res).unwrap();
    let keep = keep_set(dcfs.get("cardiology").unwrap(), &res.ontology, 4, 1);
    assert_eq!(out.structured.notes.len(), 3);
    for doc in &out.structured.notes {
        for e in &doc.entries {
            assert!(keep.contains(&e.class), "{} not kept", e.class);
        }
    }

    let unpruned = cmd_summarize(&cfg, &admission, None, true).unwrap();
    let all: usize = unpruned.structured.notes.iter().map(|d| d.entries.len()).sum();
    let kept: usize = out.structured.notes.iter().map(|d| d.entries.len()).sum();
    assert!(all > kept);

    match cmd_summarize(&cfg, &admission, Some("derm"), false) {
        Err(CliError::UnknownDomain { known, .. }) => {
            assert_eq!(known, ["cardiology", "neurology"]);
        }
        other => panic!("expected unknown domain, got {other:?}"),
    }
    assert!(matches!(
        cmd_summarize(&cfg, &admission, None, false),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn unknown_domain_lists_known_ones_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("summarize")
        .arg(fixtures().join("admission"))
        .args(["--domain", "derm", "--config"])
        .arg(fixtures().join("config.json"))
        .arg("--set")
        .arg(format!("output_dir={}", dir.path().display()))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "unknown_domain");
    assert_eq!(err["error"]["known_domains"], serde_json::json!(["cardiology", "neurology"]));
    assert!(!dir.path().join("structured_summary.json").exists());
}

fn concepts(lex: &Lexicon, text: &str) -> ConceptSet {
    annotate(lex, text).into_iter().map(|a| a.class_id).collect()
}

#[test]
fn score_matches_metric_functions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let notes = fixtures().join("admission/01_nursing.txt");
    let note_text = std::fs::read_to_string(&notes).unwrap();

    // Verbatim copy of the notes hallucinates nothing.
    let report = cmd_score(
        &cfg,
        &ScoreInputs {
            summary: &notes,
            notes: &notes,
            reference: None,
            structured: None,
            domain: None,
        },
    )
    .unwrap();
    assert_eq!(report.hs, 0.0);
    assert_eq!(report.ahs, None);
    let written = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let v: Value = serde_json::from_str(&written).unwrap();
    assert!(v.get("ahs").is_none());
    assert_eq!(v["hs"], 0.0);
    for key in ["rouge1", "rouge2", "rougeLsum", "domain_score", "groundedness", "relevance"] {
        assert!(v.get(key).is_some(), "{key} missing");
    }

    let summary = dir.path().join("summary.txt");
    std::fs::write(&summary, "atrial fibrillation with seizure and aspirin").unwrap();
    let reference = dir.path().join("reference.txt");
    std::fs::write(&reference, "atrial fibrillation and a seizure").unwrap();
    let report = cmd_score(
        &cfg,
        &ScoreInputs {
            summary: &summary,
            notes: &notes,
            reference: Some(&reference),
            structured: None,
            domain: Some("cardiology"),
        },
    )
    .unwrap();
    let res = Resources::load(&cfg).unwrap();
    let s = concepts(&res.lexicon, "atrial fibrillation with seizure and aspirin");
    let n = concepts(&res.lexicon, &note_text);
    let r = concepts(&res.lexicon, "atrial fibrillation and a seizure");
    assert_eq!(report.hs, hallucination_score(&s, &n).unwrap());
    assert_eq!(report.hs, 2.0 / 3.0);
    assert_eq!(report.ahs, Some(adjusted_hallucination_score(&s, &n, &r).unwrap()));
    assert_eq!(report.ahs, Some(1.0 / 3.0));
    assert_eq!(
        report.rouge2,
        rouge2("atrial fibrillation with seizure and aspirin", "atrial fibrillation and a seizure")
    );
    let ds = report.domain_score.unwrap();
    assert!((0.0..=1.0).contains(&ds) && ds > 0.0);
}

#[test]
fn score_reads_structured_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let admission = fixtures().join("admission");
    let out = cmd_summarize(&cfg, &admission, None, true).unwrap();
    let report = cmd_score(
        &cfg,
        &ScoreInputs {
            summary: &out.unstructured_path,
            notes: &admission,
            reference: None,
            structured: Some(&out.structured_path),
            domain: None,
        },
    )
    .unwrap();
    let g = report.groundedness.unwrap();
    let r = report.relevance.unwrap();
    assert!((0.0..=1.0).contains(&g));
    assert!((0.0..=1.0).contains(&r));
}

#[test]
fn jobs_do_not_change_outputs() {
    let admission = fixtures().join("admission");
    let mut outputs = BTreeSet::new();
    for jobs in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let status = bin()
            .arg("summarize")
            .arg(&admission)
            .args(["--domain", "neurology", "--jobs", jobs, "--config"])
            .arg(fixtures().join("config.json"))
            .arg("--set")
            .arg(format!("output_dir={}", dir.path().display()))
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        let a = std::fs::read(dir.path().join("structured_summary.json")).unwrap();
        let b = std::fs::read(dir.path().join("unstructured_summary.txt")).unwrap();
        outputs.insert((a, b));
    }
    assert_eq!(outputs.len(), 1);
}

#[test]
fn serve_ngram_prints_address_and_answers() {
    let mut child = bin()
        .args(["serve-ngram", "--addr", "127.0.0.1:0", "--config"])
        .arg(fixtures().join("config.json"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().to_string();
    let result = std::panic::catch_unwind(|| {
        let cfg = config(Path::new("/tmp"), &[]);
        let local = train_reference_lm(&cfg).unwrap();
        let remote = RemoteLm::connect(&url, local.vocab_size()).unwrap();
        assert_eq!(remote.vocab_size(), local.vocab_size());
        assert_eq!(remote.eos(), local.eos());
        let ids = remote.tokenize("answer with \"N/A\"").unwrap();
        assert_eq!(ids, local.tokenize("answer with \"N/A\"").unwrap());
    });
    let _ = child.kill();
    let _ = child.wait();
    result.unwrap();
}
