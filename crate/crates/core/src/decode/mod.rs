//! Beam search with a lexical mask and a tree-similarity monotonicity
//! filter.
//!
//! Each step expands every live hypothesis by its top `K` next tokens.
//! With the lexical constraint on, tokens that do not occur in the input
//! are masked before the top-`K` selection. With the syntactic constraint
//! on, a candidate that ends a statement is re-scored against the source
//! tree and dropped if its similarity falls below the last accepted value.
//! Candidates ending in `EOS` are banked in a completed pool.

pub mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::vocab::{
    pieces_to_text, EncodedInput, Vocabulary, BOS, EOS, NL, RESERVED, SLICE_CLOSE, SLICE_OPEN,
};
use crate::minilang;
use crate::model::{DecoderCache, Encoded, Model, ModelError};
use crate::tensor::kernels::MASK_VALUE;
use crate::tsed::{EditCost, PrefixScorer};

/// Float tolerance for the monotonicity check.
pub const TSED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("every token is masked")]
    DegenerateMask,
    #[error("no hypothesis survived the first step")]
    Exhausted,
    #[error("mask covers {mask} ids but the model scores {scores}")]
    MaskShape { mask: usize, scores: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// Where the similarity filter is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// After `<nl>`, `;` and `}`.
    #[default]
    Statement,
    /// After `<nl>` only, that is, once per complete source line.
    Line,
    /// After every token.
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub lexical: bool,
    pub syntactic: bool,
    pub granularity: Granularity,
    /// Rank finished hypotheses by `s / |y|` instead of `s`.
    pub length_norm: bool,
    pub trace: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 3,
            max_len: 256,
            lexical: true,
            syntactic: true,
            granularity: Granularity::Statement,
            length_norm: true,
            trace: false,
        }
    }
}

impl BeamConfig {
    pub fn unconstrained() -> Self {
        Self { lexical: false, syntactic: false, ..Self::default() }
    }
}

/// Boolean mask over the extended vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowedSet {
    mask: Vec<bool>,
}

impl AllowedSet {
    pub fn all(size: usize) -> Self {
        Self { mask: vec![true; size] }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> usize {
        self.mask.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32)
    }
}

/// Extended ids that may be emitted: everything in the input plus `EOS`,
/// `<slice>`, `</slice>` and `<nl>`.
pub fn allowed_tokens(input: &EncodedInput, ext_size: usize) -> AllowedSet {
    let mut mask = vec![false; ext_size];
    for &id in input.ext_ids.iter().chain(&[EOS, SLICE_OPEN, SLICE_CLOSE, NL]) {
        if let Some(m) = mask.get_mut(id as usize) {
            *m = true;
        }
    }
    AllowedSet { mask }
}

/// Replaces disallowed scores with [`MASK_VALUE`].
pub fn apply_mask(logits: &[f64], allowed: &AllowedSet) -> Result<Vec<f64>> {
    if logits.len() != allowed.size() {
        return Err(DecodeError::MaskShape { mask: allowed.size(), scores: logits.len() });
    }
    if allowed.is_empty() {
        return Err(DecodeError::DegenerateMask);
    }
    Ok(logits
        .iter()
        .zip(&allowed.mask)
        .map(|(&l, &ok)| if ok { l } else { MASK_VALUE })
        .collect())
}

/// Anything that yields next-token probabilities over extended ids.
pub trait StepModel {
    type State: Clone;

    fn ext_size(&self) -> usize;

    fn start(&self, input: &EncodedInput) -> Result<Self::State>;

    /// Feeds `token` and returns the distribution of the token after it.
    fn step(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct ModelState {
    enc: Arc<Encoded>,
    cache: DecoderCache,
}

impl StepModel for Model {
    type State = ModelState;

    fn ext_size(&self) -> usize {
        self.config.ext_size()
    }

    fn start(&self, input: &EncodedInput) -> Result<ModelState> {
        Ok(ModelState { enc: Arc::new(self.encode_input(input)?), cache: self.new_cache() })
    }

    fn step(&self, state: &mut ModelState, token: u32) -> Result<Vec<f64>> {
        Ok(self.decode_step(&state.enc, &mut state.cache, token)?.p_extended)
    }
}

/// What happened to a candidate in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    Complete,
    /// Survived the filters but fell outside the top `K` of the step.
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    LexicalMasked,
    TsedDrop,
    Eos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCandidate {
    /// Index of the expanded hypothesis within the step's beam.
    pub beam: usize,
    /// Pieces of the candidate sequence, last token included.
    pub tokens: Vec<String>,
    pub score: f64,
    pub t_prev: f64,
    pub t_cur: Option<f64>,
    pub action: Action,
    pub reason: Option<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub beams: Vec<TraceCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    /// Extended ids, without `BOS`.
    pub tokens: Vec<u32>,
    pub pieces: Vec<String>,
    /// Numbered slice text.
    pub text: String,
    pub score: f64,
    /// Whether the hypothesis ended with `EOS`.
    pub finished: bool,
    /// Accepted similarity values, in order.
    pub tsed_history: Vec<f64>,
    pub trace: Vec<TraceStep>,
}

impl DecodeOutput {
    /// Line numbers of the decoded slice.
    pub fn lines(&self) -> Vec<u32> {
        minilang::parse_numbered(&self.text).iter().map(|s| s.line).collect()
    }
}

/// Everything beam search needs to know about one instance.
#[derive(Debug, Clone, Copy)]
pub struct DecodeInput<'a> {
    pub encoded: &'a EncodedInput,
    pub vocab: &'a Vocabulary,
    /// Program text the similarity filter compares against.
    pub source: &'a str,
}

struct Hyp<S> {
    tokens: Vec<u32>,
    score: f64,
    t_prev: f64,
    history: Vec<f64>,
    /// Model state before the last token in `tokens` was fed.
    state: S,
}

struct Candidate {
    parent: usize,
    token: u32,
    score: f64,
    t: Option<f64>,
    trace_at: Option<usize>,
}

fn piece_of(input: &DecodeInput, id: u32) -> String {
    input.encoded.piece(input.vocab, id).map(str::to_string).unwrap_or_else(|| format!("<ext:{id}>"))
}

fn is_boundary(g: Granularity, piece: &str) -> bool {
    let closing = piece == RESERVED[NL as usize]
        || piece == RESERVED[SLICE_CLOSE as usize]
        || piece == RESERVED[EOS as usize];
    match g {
        Granularity::Token => true,
        Granularity::Line => closing,
        Granularity::Statement => closing || piece == ";" || piece == "}",
    }
}

/// Indices of the `k` largest finite values, ties broken by lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > MASK_VALUE / 2.0).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Log-softmax over the entries above the mask level; masked and
/// zero-probability entries stay at [`MASK_VALUE`].
fn renormalize(logp: &[f64]) -> Vec<f64> {
    let live = |v: f64| v > MASK_VALUE / 2.0;
    let max = logp.iter().copied().filter(|&v| live(v)).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return logp.to_vec();
    }
    let lse = logp.iter().filter(|&&v| live(v)).map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logp.iter().map(|&v| if live(v) { v - lse } else { MASK_VALUE }).collect()
}

/// Whether `K` finished hypotheses exist and the best live one ranks below
/// the worst of them. Without length normalization this is exact, as live
/// scores only fall.
fn finished_beats_live<S>(done: &[Hyp<S>], beam: &[Hyp<S>], k: usize, norm: bool) -> bool {
    if done.len() < k {
        return false;
    }
    let mut keys: Vec<f64> = done.iter().map(|h| final_key(h.score, h.tokens.len(), norm)).collect();
    keys.sort_by(|a, b| b.total_cmp(a));
    let worst_kept = keys[k - 1];
    beam.iter().all(|h| final_key(h.score, h.tokens.len(), norm) <= worst_kept)
}

fn final_key(score: f64, len: usize, norm: bool) -> f64 {
    if norm {
        score / len.max(1) as f64
    } else {
        score
    }
}

pub fn beam_search<M: StepModel>(model: &M, input: &DecodeInput, cfg: &BeamConfig) -> Result<DecodeOutput> {
    let k = cfg.beam_size.max(1);
    let allowed = if cfg.lexical {
        allowed_tokens(input.encoded, model.ext_size())
    } else {
        AllowedSet::all(model.ext_size())
    };
    let scorer = PrefixScorer::new(input.source, EditCost::UNIT);
    let piece_cache: Vec<String> = (0..model.ext_size() as u32).map(|i| piece_of(input, i)).collect();
    let text_of = |tokens: &[u32]| {
        let ps: Vec<&str> = tokens.iter().map(|&t| piece_cache[t as usize].as_str()).collect();
        pieces_to_text(&ps)
    };

    let mut beam = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        t_prev: 0.0,
        history: Vec::new(),
        state: model.start(input.encoded)?,
    }];
    let mut done: Vec<Hyp<M::State>> = Vec::new();
    let mut trace = Vec::new();

    for step in 1..=cfg.max_len {
        let mut cands: Vec<Candidate> = Vec::new();
        let mut records: Vec<TraceCandidate> = Vec::new();
        for (bi, hyp) in beam.iter_mut().enumerate() {
            let last = hyp.tokens.last().copied().unwrap_or(BOS);
            let probs = model.step(&mut hyp.state, last)?;
            let logp: Vec<f64> = probs.iter().map(|&p| if p > 0.0 { p.ln() } else { MASK_VALUE }).collect();
            let scores = if cfg.lexical {
                let masked = apply_mask(&logp, &allowed)?;
                if cfg.trace {
                    for &z in &top_k(&logp, k) {
                        if !allowed.contains(z as u32) {
                            let mut toks = hyp.tokens.clone();
                            toks.push(z as u32);
                            records.push(TraceCandidate {
                                beam: bi,
                                tokens: toks.iter().map(|&t| piece_cache[t as usize].clone()).collect(),
                                score: hyp.score + logp[z],
                                t_prev: hyp.t_prev,
                                t_cur: None,
                                action: Action::Reject,
                                reason: Some(Reason::LexicalMasked),
                            });
                        }
                    }
                }
                renormalize(&masked)
            } else {
                logp
            };
            for z in top_k(&scores, k) {
                let token = z as u32;
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                let score = hyp.score + scores[z];
                let t = (cfg.syntactic && is_boundary(cfg.granularity, &piece_cache[z]))
                    .then(|| scorer.score(&text_of(&tokens)));
                let rejected = t.is_some_and(|t| t < hyp.t_prev - TSED_TOLERANCE);
                let (action, reason) = if rejected {
                    (Action::Reject, Some(Reason::TsedDrop))
                } else if token == EOS {
                    (Action::Complete, Some(Reason::Eos))
                } else {
                    (Action::Accept, None)
                };
                let trace_at = cfg.trace.then(|| {
                    records.push(TraceCandidate {
                        beam: bi,
                        tokens: tokens.iter().map(|&t| piece_cache[t as usize].clone()).collect(),
                        score,
                        t_prev: hyp.t_prev,
                        t_cur: t,
                        action,
                        reason,
                    });
                    records.len() - 1
                });
                if !rejected {
                    cands.push(Candidate { parent: bi, token, score, t, trace_at });
                }
            }
        }
        if step == 1 && cands.is_empty() {
            return Err(DecodeError::Exhausted);
        }
        // Rank every surviving expansion of the step together. An `EOS`
        // candidate is banked only when it ranks within the top `K`; the
        // next beam is the best `K` others.
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut next: Vec<Hyp<M::State>> = Vec::new();
        for (rank, c) in cands.iter().enumerate() {
            let keep = if c.token == EOS { rank < k } else { next.len() < k };
            if !keep {
                if let Some(i) = c.trace_at {
                    records[i].action = Action::Pruned;
                }
                continue;
            }
            let p = &beam[c.parent];
            let mut tokens = p.tokens.clone();
            tokens.push(c.token);
            let mut history = p.history.clone();
            history.extend(c.t);
            let h = Hyp {
                tokens,
                score: c.score,
                t_prev: c.t.unwrap_or(p.t_prev),
                history,
                state: p.state.clone(),
            };
            if c.token == EOS {
                done.push(h);
            } else {
                next.push(h);
            }
        }
        if cfg.trace {
            trace.push(TraceStep { step, beams: records });
        }
        // An empty step keeps the previous beam as the unfinished fallback.
        if next.is_empty() {
            break;
        }
        beam = next;
        if finished_beats_live(&done, &beam, k, cfg.length_norm) {
            break;
        }
    }

    let pick = |pool: &[Hyp<M::State>]| {
        pool.iter().enumerate().max_by(|(i, a), (j, b)| {
            final_key(a.score, a.tokens.len(), cfg.length_norm)
                .total_cmp(&final_key(b.score, b.tokens.len(), cfg.length_norm))
                .then(j.cmp(i))
        })
        .map(|(i, _)| i)
    };
    let (best, finished) = match pick(&done) {
        Some(i) => (done.swap_remove(i), true),
        None => match pick(&beam) {
            Some(i) => (beam.swap_remove(i), false),
            None => return Err(DecodeError::Exhausted),
        },
    };
    let pieces: Vec<String> = best.tokens.iter().map(|&t| piece_cache[t as usize].clone()).collect();
    Ok(DecodeOutput {
        text: text_of(&best.tokens),
        tokens: best.tokens,
        pieces,
        score: best.score,
        finished,
        tsed_history: best.history,
        trace,
    })
}

#[cfg(test)]
mod tests;
