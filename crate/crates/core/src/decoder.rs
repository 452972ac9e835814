//! Ontology-guided diverse beam search.
//!
//! Beams are split into groups that expand one after another at every step;
//! a group pays a Hamming diversity penalty for tokens already chosen by
//! earlier groups at the same step. End-of-sequence is exempt: a beam that
//! ends leaves the running beam, so later groups are free to end too. Every `window` generated tokens, the text
//! produced since the last checkpoint is tagged with the annotator and scored
//! against the base class:
//!
//! * hierarchy `H = h_bf * |{c in C : base is an ancestor of c}| / |C|`
//! * property `P = p_bf * |C ∩ P(base)| / (|C| |P(base)|) + R2(window, P'(base))`
//! * similarity `S = s_bf * R2(window, note)`
//!
//! Within a group the raw sums `H + P + S` go through a log-softmax and the
//! result is added to each beam's cumulative log-probability.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{annotate, Lexicon};
use crate::lm::{LanguageModel, LmError, TokenId};
use crate::metrics::rouge2;
use crate::ontology::{ClassId, Ontology, OntologyError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// Which text the similarity score compares against the note.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityScope {
    /// Only the tokens of the current generation window.
    #[default]
    Window,
    /// Everything the beam has generated so far.
    FullBeam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub num_groups: usize,
    pub diversity_penalty: f64,
    /// Generation window, in tokens, between two rescoring events.
    pub window: usize,
    pub h_bf: f64,
    pub p_bf: f64,
    pub s_bf: f64,
    pub max_tokens: usize,
    pub similarity_scope: SimilarityScope,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 10,
            num_groups: 2,
            diversity_penalty: 0.5,
            window: 10,
            h_bf: 3.0,
            p_bf: 10.0,
            s_bf: 10.0,
            max_tokens: 64,
            similarity_scope: SimilarityScope::Window,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DecodeError::InvalidConfig(m));
        if self.beam_size == 0 || self.num_groups == 0 {
            return bad("beam_size and num_groups must be positive".into());
        }
        if !self.beam_size.is_multiple_of(self.num_groups) {
            return bad(format!(
                "beam_size {} is not divisible by num_groups {}",
                self.beam_size, self.num_groups
            ));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        for (name, v) in [
            ("diversity_penalty", self.diversity_penalty),
            ("h_bf", self.h_bf),
            ("p_bf", self.p_bf),
            ("s_bf", self.s_bf),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.beam_size / self.num_groups
    }

    /// Window rescoring only runs when at least one boost factor is positive;
    /// otherwise decoding is plain diverse beam search.
    pub fn guidance_enabled(&self) -> bool {
        self.h_bf > 0.0 || self.p_bf > 0.0 || self.s_bf > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamState {
    /// Generated tokens (the prompt is not included).
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    pub group: usize,
    /// Index into `tokens` of the first token of the current window.
    pub window_start: usize,
    pub finished: bool,
}

impl BeamState {
    fn root(group: usize) -> Self {
        BeamState {
            tokens: Vec::new(),
            cum_logprob: 0.0,
            group,
            window_start: 0,
            finished: false,
        }
    }

    fn window_tokens(&self, eos: TokenId) -> Vec<TokenId> {
        self.tokens[self.window_start..]
            .iter()
            .copied()
            .filter(|&t| t != eos)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoreBreakdown {
    pub hierarchy: f64,
    pub property: f64,
    pub similarity: f64,
    /// Log-softmax of the raw sum across the rescored group.
    pub adjusted: f64,
}

impl ScoreBreakdown {
    pub fn raw(&self) -> f64 {
        self.hierarchy + self.property + self.similarity
    }
}

/// What the decoder is steered towards.
#[derive(Clone, Copy, Debug)]
pub struct Guidance<'a> {
    pub ontology: &'a Ontology,
    pub lexicon: &'a Lexicon,
    /// Base class of the prompt. `None` disables the hierarchy and property scores.
    pub base: Option<&'a ClassId>,
    /// Source text the similarity score is measured against.
    pub note: &'a str,
}

pub fn hierarchy_score(
    ontology: &Ontology,
    base: &ClassId,
    window_classes: &BTreeSet<ClassId>,
    h_bf: f64,
) -> Result<f64> {
    ontology.class(base)?;
    if window_classes.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for c in window_classes {
        if ontology.ancestors(c)?.contains(base) {
            hits += 1;
        }
    }
    Ok(h_bf * hits as f64 / window_classes.len() as f64)
}

pub fn property_score(
    ontology: &Ontology,
    base: &ClassId,
    window_classes: &BTreeSet<ClassId>,
    window_text: &str,
    p_bf: f64,
) -> Result<f64> {
    let related = ontology.restriction_classes(base)?;
    for c in window_classes {
        ontology.class(c)?;
    }
    let class_term = if window_classes.is_empty() || related.is_empty() {
        0.0
    } else {
        let hits = window_classes.iter().filter(|c| related.contains(c)).count();
        p_bf * hits as f64 / (window_classes.len() * related.len()) as f64
    };
    let verbalized = ontology.verbalize_restrictions(base)?;
    let text_term = if verbalized.is_empty() {
        0.0
    } else {
        rouge2(window_text, &verbalized)
    };
    Ok(class_term + text_term)
}

pub fn similarity_score(window_text: &str, note: &str, s_bf: f64) -> f64 {
    s_bf * rouge2(window_text, note)
}

/// Numerically stable log-softmax.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return xs.iter().map(|_| -(xs.len() as f64).ln()).collect();
    }
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

/// How a window adjustment combines with the likelihood accumulated so far.
/// The adjustment is a log-softmax output, so it is added in log space.
#[inline]
pub fn integrate_beam_score(cum_logprob: f64, adjustment: f64) -> f64 {
    cum_logprob + adjustment
}

/// Raw H, P and S for one piece of generated text.
pub fn score_text(
    window_text: &str,
    similarity_text: &str,
    guidance: &Guidance<'_>,
    cfg: &DecodeConfig,
) -> Result<ScoreBreakdown> {
    let classes: BTreeSet<ClassId> = annotate(guidance.lexicon, window_text)
        .into_iter()
        .map(|a| a.class_id)
        .collect();
    let (hierarchy, property) = match guidance.base {
        Some(base) => (
            hierarchy_score(guidance.ontology, base, &classes, cfg.h_bf)?,
            property_score(guidance.ontology, base, &classes, window_text, cfg.p_bf)?,
        ),
        None => (0.0, 0.0),
    };
    Ok(ScoreBreakdown {
        hierarchy,
        property,
        similarity: similarity_score(similarity_text, guidance.note, cfg.s_bf),
        adjusted: 0.0,
    })
}

/// Rescores `beams` (one group's beams that reached a window boundary or just
/// finished), folds the adjustment into their cumulative log-probabilities and
/// opens a new window for each.
pub fn window_rescore<L: LanguageModel + ?Sized>(
    lm: &L,
    beams: &mut [BeamState],
    guidance: &Guidance<'_>,
    cfg: &DecodeConfig,
) -> Result<Vec<ScoreBreakdown>> {
    let eos = lm.eos();
    let mut out = Vec::with_capacity(beams.len());
    for beam in beams.iter() {
        let window_text = lm.detokenize(&beam.window_tokens(eos))?;
        let similarity_text = match cfg.similarity_scope {
            SimilarityScope::Window => window_text.clone(),
            SimilarityScope::FullBeam => {
                let all: Vec<TokenId> = beam.tokens.iter().copied().filter(|&t| t != eos).collect();
                lm.detokenize(&all)?
            }
        };
        out.push(score_text(&window_text, &similarity_text, guidance, cfg)?);
    }
    let raw: Vec<f64> = out.iter().map(ScoreBreakdown::raw).collect();
    for ((beam, breakdown), bs) in beams.iter_mut().zip(&mut out).zip(log_softmax(&raw)) {
        breakdown.adjusted = bs;
        beam.cum_logprob = integrate_beam_score(beam.cum_logprob, bs);
        beam.window_start = beam.tokens.len();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    /// No beam produced end-of-sequence within `max_tokens`.
    pub truncated: bool,
    /// Final beams, group by group.
    pub beams: Vec<BeamState>,
}

struct Candidate {
    parent: usize,
    token: Option<TokenId>,
    cum_logprob: f64,
    /// Score used for selection: likelihood minus the diversity penalty.
    rank: f64,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.rank
        .total_cmp(&a.rank)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Grouped beam search with ontology-guided window rescoring.
#[allow(clippy::needless_range_loop)]
pub fn decode<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &str,
    guidance: &Guidance<'_>,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    if let Some(base) = guidance.base {
        guidance.ontology.class(base)?;
    }
    let prompt_ids = lm.tokenize(prompt)?;
    let eos = lm.eos();
    let group_size = cfg.group_size();
    let mut groups: Vec<Vec<BeamState>> = (0..cfg.num_groups).map(|g| vec![BeamState::root(g)]).collect();
    let mut context = prompt_ids.clone();

    for _ in 0..cfg.max_tokens {
        if groups.iter().flatten().all(|b| b.finished) {
            break;
        }
        let mut chosen: HashMap<TokenId, usize> = HashMap::new();
        for g in 0..cfg.num_groups {
            let mut candidates = Vec::new();
            for (i, beam) in groups[g].iter().enumerate() {
                if beam.finished {
                    candidates.push(Candidate {
                        parent: i,
                        token: None,
                        cum_logprob: beam.cum_logprob,
                        rank: beam.cum_logprob,
                    });
                    continue;
                }
                context.truncate(prompt_ids.len());
                context.extend_from_slice(&beam.tokens);
                let step = lm.next_logits(&context)?;
                for (token, logprob) in step.iter() {
                    if logprob == f64::NEG_INFINITY {
                        continue;
                    }
                    let cum = beam.cum_logprob + logprob;
                    let penalty = cfg.diversity_penalty * chosen.get(&token).copied().unwrap_or(0) as f64;
                    candidates.push(Candidate {
                        parent: i,
                        token: Some(token),
                        cum_logprob: cum,
                        rank: cum - penalty,
                    });
                }
            }
            candidates.sort_by(candidate_order);
            candidates.truncate(group_size);

            let old = std::mem::take(&mut groups[g]);
            let mut next = Vec::with_capacity(candidates.len());
            let mut to_rescore = Vec::new();
            for cand in candidates {
                let parent = &old[cand.parent];
                let mut beam = parent.clone();
                if let Some(token) = cand.token {
                    if token != eos {
                        *chosen.entry(token).or_insert(0) += 1;
                    }
                    beam.tokens.push(token);
                    beam.cum_logprob = cand.cum_logprob;
                    beam.finished = token == eos;
                    let window_full = beam.tokens.len() - beam.window_start >= cfg.window;
                    let closes_partial = beam.finished && !beam.window_tokens(eos).is_empty();
                    if cfg.guidance_enabled() && (window_full || closes_partial) {
                        to_rescore.push(next.len());
                    }
                }
                next.push(beam);
            }

            if !to_rescore.is_empty() {
                let mut batch: Vec<BeamState> = to_rescore.iter().map(|&i| next[i].clone()).collect();
                let scores = window_rescore(lm, &mut batch, guidance, cfg)?;
                for ((&i, beam), s) in to_rescore.iter().zip(batch).zip(scores) {
                    log::trace!(
                        "group {g} beam {i} at {} tokens: H={:.4} P={:.4} S={:.4} BS={:.4}",
                        beam.tokens.len(),
                        s.hierarchy,
                        s.property,
                        s.similarity,
                        s.adjusted
                    );
                    next[i] = beam;
                }
            }
            groups[g] = next;
        }
    }

    let beams: Vec<BeamState> = groups.into_iter().flatten().collect();
    let pick = |finished: bool| {
        beams
            .iter()
            .filter(|b| b.finished == finished)
            .fold(None::<&BeamState>, |best, b| match best {
                Some(cur) if cur.cum_logprob >= b.cum_logprob => Some(cur),
                _ => Some(b),
            })
    };
    let (best, truncated) = match pick(true) {
        Some(b) => (b, false),
        None => (pick(false).expect("at least one beam exists"), true),
    };
    let content: Vec<TokenId> = best.tokens.iter().copied().filter(|&t| t != eos).collect();
    Ok(DecodeOutput {
        text: lm.detokenize(&content)?.trim().to_string(),
        tokens: best.tokens.clone(),
        cum_logprob: best.cum_logprob,
        truncated,
        beams: beams.clone(),
    })
}
