//! Independent oracles and fixtures shared by the integration and acceptance
//! suites. Nothing here calls into the decoder or graph traversal code it is
//! used to check.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use onto_decode::lm::{LanguageModel, LmStep, Result as LmResult, TokenId};
use onto_decode::ontology::{ClassId, Ontology};
use onto_decode::{train_ngram, NgramLm};
use rand::seq::SliceRandom;
use rand::Rng;

// ---------------------------------------------------------------- ontologies

pub const DRUG_ONTOLOGY: &str = r#"{"classes": [
    {"id": "Drug", "label": "Drug", "synonyms": ["medicament"]},
    {"id": "Aspirin", "label": "Aspirin", "parents": ["Drug"]},
    {"id": "Fever", "label": "Fever"}
]}"#;

pub const FEVER_ONTOLOGY: &str = r#"{"classes": [
    {"id": "BodyTemperature", "label": "Body Temperature"},
    {"id": "AboveReferenceRange", "label": "Above Reference Range"},
    {"id": "Fever", "label": "Fever", "restrictions": [
        {"kind": "and", "pairs": [
            {"property": "Interprets", "value": "BodyTemperature"},
            {"property": "HasInterpretation", "value": "AboveReferenceRange"}]}]}
]}"#;

pub fn id(s: &str) -> ClassId {
    ClassId::from(s)
}

pub fn ids(v: &[&str]) -> BTreeSet<ClassId> {
    v.iter().map(|&s| ClassId::from(s)).collect()
}

/// Random DAG over `n` nodes named `c0..`; parents always have a lower index.
/// Returns the ontology JSON and the parent adjacency list.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, edge_p: f64) -> (String, Vec<Vec<usize>>) {
    let mut parents = vec![Vec::new(); n];
    for (i, ps) in parents.iter_mut().enumerate() {
        for j in 0..i {
            if rng.gen_bool(edge_p) {
                ps.push(j);
            }
        }
    }
    let classes: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            serde_json::json!({
                "id": format!("c{i}"),
                "label": format!("class {i}"),
                "parents": parents[i].iter().map(|p| format!("c{p}")).collect::<Vec<_>>(),
            })
        })
        .collect();
    // Shuffle file order so traversal code cannot lean on index order.
    let mut classes = classes;
    classes.shuffle(rng);
    let json = serde_json::json!({ "classes": classes }).to_string();
    (json, parents)
}

/// Warshall transitive closure: `reach[a][d]` iff `a` is a strict ancestor of `d`.
#[allow(clippy::needless_range_loop)]
pub fn closure(parents: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = parents.len();
    let mut reach = vec![vec![false; n]; n];
    for (child, ps) in parents.iter().enumerate() {
        for &p in ps {
            reach[p][child] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Shortest child-hop distance from `a` to every node (usize::MAX if unreachable),
/// by relaxation rather than a queue.
pub fn hop_distances(parents: &[Vec<usize>], a: usize) -> Vec<usize> {
    let n = parents.len();
    let mut dist = vec![usize::MAX; n];
    dist[a] = 0;
    loop {
        let mut changed = false;
        for (child, ps) in parents.iter().enumerate() {
            for &p in ps {
                if dist[p] != usize::MAX && dist[p] + 1 < dist[child] {
                    dist[child] = dist[p] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

pub fn name(i: usize) -> ClassId {
    ClassId::new(format!("c{i}"))
}

pub fn load(json: &str) -> Ontology {
    Ontology::from_json(json).expect("fixture ontology loads")
}

// ------------------------------------------------------------ language models

/// Random n-gram model with at most `max_vocab` tokens (words + EOS + UNK).
pub fn random_ngram<R: Rng>(rng: &mut R, max_vocab: usize) -> NgramLm {
    let words = rng.gen_range(1..=max_vocab - 2);
    let order = rng.gen_range(1..=3);
    let sentences = rng.gen_range(1..=6);
    let corpus: Vec<String> = (0..sentences)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..words)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    train_ngram(&corpus, order).expect("non-empty corpus")
}

/// Every EOS-terminated continuation of `prompt` with at most `max_tokens`
/// tokens, scored by summing log-probabilities left to right.
pub fn enumerate_finished<L: LanguageModel>(
    lm: &L,
    prompt: &[TokenId],
    max_tokens: usize,
) -> Vec<(Vec<TokenId>, f64)> {
    fn walk<L: LanguageModel>(
        lm: &L,
        prompt: &[TokenId],
        seq: &mut Vec<TokenId>,
        score: f64,
        max_tokens: usize,
        out: &mut Vec<(Vec<TokenId>, f64)>,
    ) {
        if seq.len() == max_tokens {
            return;
        }
        let mut ctx = prompt.to_vec();
        ctx.extend_from_slice(seq);
        let step = lm.next_logits(&ctx).unwrap();
        for (tok, lp) in step.iter() {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            seq.push(tok);
            if tok == lm.eos() {
                out.push((seq.clone(), score + lp));
            } else {
                walk(lm, prompt, seq, score + lp, max_tokens, out);
            }
            seq.pop();
        }
    }
    let mut out = Vec::new();
    walk(lm, prompt, &mut Vec::new(), 0.0, max_tokens, &mut out);
    out
}

/// Highest-scoring finished sequence, or `None` if the maximum is tied.
pub fn unique_best(seqs: &[(Vec<TokenId>, f64)]) -> Option<(Vec<TokenId>, f64)> {
    let best = seqs.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mut winners = seqs.iter().filter(|s| s.1 == best);
    let first = winners.next()?.clone();
    winners.next().is_none().then_some(first)
}

/// Plain beam search: finished hypotheses stay in the beam and compete with
/// extensions; ties go to the lower parent index, then the lower token id.
pub fn vanilla_beam_search<L: LanguageModel>(
    lm: &L,
    prompt: &[TokenId],
    beam_size: usize,
    max_tokens: usize,
) -> (Vec<TokenId>, f64, bool) {
    #[derive(Clone)]
    struct Hyp {
        toks: Vec<TokenId>,
        score: f64,
        done: bool,
    }
    let eos = lm.eos();
    let mut beam = vec![Hyp {
        toks: vec![],
        score: 0.0,
        done: false,
    }];
    for _ in 0..max_tokens {
        if beam.iter().all(|h| h.done) {
            break;
        }
        // (score, parent, token or none, hyp)
        let mut cands: Vec<(f64, usize, Option<TokenId>, Hyp)> = Vec::new();
        for (pi, h) in beam.iter().enumerate() {
            if h.done {
                cands.push((h.score, pi, None, h.clone()));
                continue;
            }
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&h.toks);
            for (t, lp) in lm.next_logits(&ctx).unwrap().iter() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut nh = h.clone();
                nh.toks.push(t);
                nh.score = h.score + lp;
                nh.done = t == eos;
                cands.push((nh.score, pi, Some(t), nh));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        beam = cands.into_iter().take(beam_size).map(|c| c.3).collect();
    }
    let mut best: Option<&Hyp> = None;
    for h in beam.iter().filter(|h| h.done) {
        if best.is_none_or(|b| h.score > b.score) {
            best = Some(h);
        }
    }
    if let Some(b) = best {
        return (b.toks.clone(), b.score, false);
    }
    let mut best = &beam[0];
    for h in &beam[1..] {
        if h.score > best.score {
            best = h;
        }
    }
    (best.toks.clone(), best.score, true)
}

/// Model whose next-token distribution is looked up by the generated
/// continuation (the prompt is ignored). Unlisted continuations end.
pub struct ScriptedLm {
    pub words: Vec<&'static str>,
    pub table: HashMap<Vec<&'static str>, Vec<(&'static str, f64)>>,
}

impl ScriptedLm {
    fn index(&self, w: &str) -> TokenId {
        TokenId(self.words.iter().position(|x| *x == w).expect("scripted word") as u32)
    }
}

impl LanguageModel for ScriptedLm {
    fn tokenize(&self, _text: &str) -> LmResult<Vec<TokenId>> {
        Ok(vec![])
    }

    fn detokenize(&self, tokens: &[TokenId]) -> LmResult<String> {
        Ok(tokens
            .iter()
            .filter(|&&t| t != self.eos())
            .map(|t| self.words[t.0 as usize])
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn next_logits(&self, prefix: &[TokenId]) -> LmResult<LmStep> {
        let key: Vec<&'static str> = prefix.iter().map(|t| self.words[t.0 as usize]).collect();
        let dist = self
            .table
            .get(&key)
            .cloned()
            .unwrap_or_else(|| vec![("</s>", 1.0)]);
        Ok(LmStep::new(
            dist.into_iter()
                .map(|(w, p)| (self.index(w), p.ln()))
                .collect(),
            true,
        ))
    }

    fn eos(&self) -> TokenId {
        TokenId(0)
    }

    fn vocab_size(&self) -> usize {
        self.words.len()
    }
}

/// Two continuations: "has fever today" (p = 0.55) and "takes aspirin daily"
/// (p = 0.45), each followed by end-of-sequence.
pub fn steering_lm() -> ScriptedLm {
    let table = [
        (vec![], vec![("has", 0.55), ("takes", 0.45)]),
        (vec!["has"], vec![("fever", 1.0)]),
        (vec!["has", "fever"], vec![("today", 1.0)]),
        (vec!["takes"], vec![("aspirin", 1.0)]),
        (vec!["takes", "aspirin"], vec![("daily", 1.0)]),
    ]
    .into_iter()
    .collect();
    ScriptedLm {
        words: vec!["</s>", "has", "fever", "today", "takes", "aspirin", "daily"],
        table,
    }
}

// -------------------------------------------------------------------- metrics

/// Clipped bigram matching by explicit pairing: each reference bigram can be
/// claimed by at most one candidate bigram.
pub fn brute_rouge2(candidate: &str, reference: &str) -> f64 {
    let toks = |s: &str| -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    };
    let c = toks(candidate);
    let r = toks(reference);
    if c.len() < 2 || r.len() < 2 {
        return 0.0;
    }
    let cb: Vec<(&str, &str)> = c.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
    let rb: Vec<(&str, &str)> = r.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
    let mut used = vec![false; rb.len()];
    let mut overlap = 0usize;
    for g in &cb {
        if let Some(j) = (0..rb.len()).find(|&j| !used[j] && rb[j] == *g) {
            used[j] = true;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cb.len() as f64;
    let rr = overlap as f64 / rb.len() as f64;
    2.0 * p * rr / (p + rr)
}

pub fn random_text<R: Rng>(rng: &mut R, vocab: &[&str], max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let seps = [" ", "  ", ", ", ". ", "\n", "-"];
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(seps.choose(rng).unwrap());
        }
        let w = vocab.choose(rng).unwrap();
        if rng.gen_bool(0.2) {
            s.push_str(&w.to_uppercase());
        } else {
            s.push_str(w);
        }
    }
    s
}

/// |S - (N ∪ R)| / |S| by counting membership one element at a time.
pub fn brute_hallucination(s: &[u32], n: &[u32], r: &[u32]) -> f64 {
    let mut uniq: Vec<u32> = s.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let mut missing = 0;
    for x in &uniq {
        if !n.iter().any(|y| y == x) && !r.iter().any(|y| y == x) {
            missing += 1;
        }
    }
    missing as f64 / uniq.len() as f64
}

// ------------------------------------------------------------------ pipeline

/// Two domains with disjoint planted families and a shared general family.
/// Each planted family has exactly five classes.
pub fn planted_domains_ontology() -> String {
    let mut classes = vec![serde_json::json!({"id": "Root", "label": "Clinical concept"})];
    for (group, words) in [
        ("Cardio", ["arrhythmia", "tachycardia", "murmur", "stent", "angina"]),
        ("Neuro", ["seizure", "aphasia", "migraine", "tremor", "neuropathy"]),
        ("General", ["fever", "pain", "nausea", "fatigue", "cough"]),
    ] {
        for w in words {
            classes.push(serde_json::json!({
                "id": format!("{group}:{w}"),
                "label": w,
                "parents": ["Root"],
            }));
        }
    }
    serde_json::json!({ "classes": classes }).to_string()
}

pub fn planted_corpus<R: Rng>(rng: &mut R, family: &[&str], docs: usize) -> Vec<String> {
    let general = ["fever", "pain", "nausea", "fatigue", "cough"];
    let filler = ["patient", "noted", "today", "stable", "with", "and", "reports"];
    (0..docs)
        .map(|_| {
            let mut words: Vec<&str> = Vec::new();
            // Every family member at least once per document keeps the
            // family's recall at 1.0 by construction.
            words.extend(family.iter().copied());
            for _ in 0..rng.gen_range(1..=4) {
                words.push(general.choose(rng).unwrap());
            }
            for _ in 0..rng.gen_range(3..=8) {
                words.push(filler.choose(rng).unwrap());
            }
            words.shuffle(rng);
            words.join(" ")
        })
        .collect()
}

pub const CARDIO_FAMILY: [&str; 5] = ["arrhythmia", "tachycardia", "murmur", "stent", "angina"];
pub const NEURO_FAMILY: [&str; 5] = ["seizure", "aphasia", "migraine", "tremor", "neuropathy"];
