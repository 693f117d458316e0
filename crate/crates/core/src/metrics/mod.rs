//! Slice metrics and the evaluation harness.
//!
//! ```
//! use seqslice::metrics::{acc_d, exact_match};
//!
//! assert_eq!(exact_match("7 : int temp ;", "7 : int  temp;"), 1.0);
//! assert!((acc_d(&[7, 8], &[7, 8, 12]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::vocab::{encode_input, Vocabulary};
use crate::corpus::{corrupt, Corruption, CorpusError, SliceInstance};
use crate::decode::{allowed_tokens, beam_search, BeamConfig, DecodeError, DecodeInput, StepModel};
use crate::minilang::{self, statements, tokenize, StatementKind};
use crate::model::Model;
use crate::seed;
use crate::tsed::{slice_tree, tsed_score, EditCost};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold slice is empty; the metric is undefined")]
    EmptyGold,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("instance {index}: {source}")]
    Decode { index: usize, source: DecodeError },
    #[error("instance {index}: {source}")]
    Corpus { index: usize, source: CorpusError },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Token sequence a slice is compared by: for each line its number, `:`,
/// then its lexer tokens. Lines without a number contribute tokens only.
pub fn canonical_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let code = match line.split_once(':') {
            Some((n, rest)) if n.trim().parse::<u32>().is_ok() => {
                out.push(n.trim().to_string());
                out.push(":".to_string());
                rest
            }
            _ => line,
        };
        out.extend(tokenize(code).into_iter().map(|t| t.text));
    }
    out
}

/// 1 when the canonical token sequences agree, else 0.
pub fn exact_match(pred_text: &str, gold_text: &str) -> f64 {
    f64::from(u8::from(canonical_tokens(pred_text) == canonical_tokens(gold_text)))
}

/// `|pred ∩ gold| / |gold|`. Extra predicted lines are not penalized.
pub fn acc_d(pred_lines: &[u32], gold_lines: &[u32]) -> Result<f64> {
    let gold: BTreeSet<u32> = gold_lines.iter().copied().collect();
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let pred: BTreeSet<u32> = pred_lines.iter().copied().collect();
    Ok(pred.intersection(&gold).count() as f64 / gold.len() as f64)
}

/// Per-line classification accuracy over `candidates`: a line counts as
/// correct when it is in both slices or in neither.
pub fn acc_d_cls(pred_lines: &[u32], gold_lines: &[u32], candidates: &[u32]) -> Result<f64> {
    if gold_lines.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    if candidates.is_empty() {
        return Err(MetricsError::Config("no candidate lines".into()));
    }
    let pred: BTreeSet<u32> = pred_lines.iter().copied().collect();
    let gold: BTreeSet<u32> = gold_lines.iter().copied().collect();
    let right = candidates.iter().filter(|l| pred.contains(l) == gold.contains(l)).count();
    Ok(right as f64 / candidates.len() as f64)
}

/// Lines a slice for a criterion on line `n` may contain: body statements
/// up to `n`, headers and braces excluded.
pub fn candidate_lines(program: &str, n: u32) -> Vec<u32> {
    statements(program)
        .into_iter()
        .filter(|s| s.line <= n)
        .filter(|s| {
            !matches!(
                s.kind,
                StatementKind::MethodHeader
                    | StatementKind::ClassHeader
                    | StatementKind::OpenBrace
                    | StatementKind::CloseBrace
            )
        })
        .map(|s| s.line)
        .collect()
}

/// Tree similarity between the predicted and the gold slice. Two empty
/// slices are identical.
pub fn tsed_metric(pred_text: &str, gold_text: &str) -> f64 {
    let (p, g) = (slice_tree(pred_text), slice_tree(gold_text));
    tsed_score(&p, &g, EditCost::UNIT).unwrap_or(1.0)
}

/// What produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub label: String,
    pub copy: bool,
    pub lexical: bool,
    pub syntactic: bool,
    pub corruption: Corruption,
    pub beam: BeamConfig,
    /// SHA-256 over the model parameters.
    pub params_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub pred_lines: Vec<u32>,
    pub gold_lines: Vec<u32>,
    pub pred_text: String,
    pub gold_text: String,
    pub exact_match: f64,
    pub acc_d: f64,
    pub acc_d_cls: f64,
    pub tsed: f64,
    pub finished: bool,
    /// Emitted ids outside the input and the always-allowed specials.
    pub foreign_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub exact_match: f64,
    pub acc_d: f64,
    pub acc_d_cls: f64,
    pub tsed: f64,
    pub unfinished: usize,
    pub foreign_tokens: usize,
}

impl Aggregates {
    pub fn from_records(records: &[InstanceRecord]) -> Self {
        let n = records.len();
        let mean = |f: fn(&InstanceRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            exact_match: mean(|r| r.exact_match),
            acc_d: mean(|r| r.acc_d),
            acc_d_cls: mean(|r| r.acc_d_cls),
            tsed: mean(|r| r.tsed),
            unfinished: records.iter().filter(|r| !r.finished).count(),
            foreign_tokens: records.iter().map(|r| r.foreign_tokens).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: Fingerprint,
    pub aggregates: Aggregates,
    pub records: Vec<InstanceRecord>,
    /// Instances a corruption could not be applied to.
    #[serde(default)]
    pub skipped: usize,
}

impl EvalReport {
    /// Whether the stored aggregates equal the means of the records.
    pub fn is_consistent(&self) -> bool {
        Aggregates::from_records(&self.records) == self.aggregates
    }
}

/// Hex SHA-256 of the parameter names, shapes and values.
pub fn params_fingerprint(model: &Model) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Decodes and scores one instance.
pub fn evaluate_instance<M: StepModel + Sync>(
    model: &M,
    vocab: &Vocabulary,
    max_src: usize,
    index: usize,
    inst: &SliceInstance,
    beam: &BeamConfig,
) -> Result<InstanceRecord> {
    let encoded = encode_input(inst, vocab, max_src)
        .map_err(|source| MetricsError::Corpus { index, source })?;
    let input = DecodeInput { encoded: &encoded, vocab, source: &inst.program };
    let out = beam_search(model, &input, beam).map_err(|source| MetricsError::Decode { index, source })?;
    let allowed = allowed_tokens(&encoded, model.ext_size());
    let pred_lines = out.lines();
    let candidates = candidate_lines(&inst.program, inst.criterion.line);
    Ok(InstanceRecord {
        index,
        exact_match: exact_match(&out.text, &inst.gold_text),
        acc_d: acc_d(&pred_lines, &inst.gold_lines)?,
        acc_d_cls: acc_d_cls(&pred_lines, &inst.gold_lines, &candidates)?,
        tsed: tsed_metric(&out.text, &inst.gold_text),
        finished: out.finished,
        foreign_tokens: out.tokens.iter().filter(|&&t| !allowed.contains(t)).count(),
        pred_lines,
        gold_lines: inst.gold_lines.clone(),
        pred_text: out.text,
        gold_text: inst.gold_text.clone(),
    })
}

/// Evaluation settings shared by every row of a run.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub beam: BeamConfig,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    pub label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beam: BeamConfig::default(), jobs: 0, label: "full".into() }
    }
}

/// Decodes every instance and aggregates the metrics.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    instances: &[SliceInstance],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if vocab.len() != model.config.vocab_size {
        return Err(MetricsError::Config(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let run = || {
        instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| evaluate_instance(model, vocab, model.config.max_src, i, inst, &config.beam))
            .collect::<Result<Vec<_>>>()
    };
    let records = if config.jobs == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| MetricsError::Config(e.to_string()))?
            .install(run)?
    };
    let corruption = instances.first().map_or(Corruption::None, |i| i.corruption);
    Ok(EvalReport {
        fingerprint: Fingerprint {
            label: config.label.clone(),
            copy: model.config.copy,
            lexical: config.beam.lexical,
            syntactic: config.beam.syntactic,
            corruption,
            beam: config.beam,
            params_sha256: params_fingerprint(model),
        },
        aggregates: Aggregates::from_records(&records),
        records,
        skipped: 0,
    })
}

/// One row of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCopy,
    NoLexical,
    NoSyntactic,
    /// No copy and no constraints.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoCopy, Variant::NoLexical, Variant::NoSyntactic, Variant::Vanilla];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCopy => "-copy",
            Variant::NoLexical => "-lexical",
            Variant::NoSyntactic => "-syntactic",
            Variant::Vanilla => "vanilla",
        }
    }

    /// Whether the row decodes with the checkpoint trained without copying.
    pub fn uses_no_copy_model(self) -> bool {
        matches!(self, Variant::NoCopy | Variant::Vanilla)
    }

    pub fn beam(self, base: &BeamConfig) -> BeamConfig {
        let (lexical, syntactic) = match self {
            Variant::Full | Variant::NoCopy => (true, true),
            Variant::NoLexical => (false, true),
            Variant::NoSyntactic => (true, false),
            Variant::Vanilla => (false, false),
        };
        BeamConfig { lexical, syntactic, ..*base }
    }
}

/// Runs the ablation rows. Rows needing the no-copy checkpoint are skipped
/// when it is absent.
pub fn ablate(
    full: &Model,
    no_copy: Option<&Model>,
    vocab: &Vocabulary,
    instances: &[SliceInstance],
    config: &EvalConfig,
) -> Result<Vec<EvalReport>> {
    if let Some(m) = no_copy {
        if m.config.copy {
            return Err(MetricsError::Config("the no-copy checkpoint has copying enabled".into()));
        }
    }
    let mut out = Vec::new();
    for v in Variant::ALL {
        let model = if v.uses_no_copy_model() {
            match no_copy {
                Some(m) => m,
                None => continue,
            }
        } else {
            full
        };
        let cfg = EvalConfig { beam: v.beam(&config.beam), label: v.label().into(), ..config.clone() };
        out.push(evaluate(model, vocab, instances, &cfg)?);
    }
    Ok(out)
}

/// Corrupted copies of the instances the corruption applies to, with the
/// number skipped. Instance `i` draws from its own stream.
pub fn corrupt_split(instances: &[SliceInstance], kind: Corruption, seed: u64) -> (Vec<SliceInstance>, usize) {
    let mut out = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let mut rng = seed::substream(seed, seed::CORRUPT, i as u64);
        if let Ok(c) = corrupt(inst, kind, &mut rng) {
            if !c.gold_lines.is_empty() && !minilang::statements(&c.program).is_empty() {
                out.push(c);
            }
        }
    }
    let skipped = instances.len() - out.len();
    (out, skipped)
}

/// One report per corruption kind, each labeled with the kind's name.
pub fn corruption_sweep(
    model: &Model,
    vocab: &Vocabulary,
    instances: &[SliceInstance],
    config: &EvalConfig,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    Corruption::KINDS
        .iter()
        .map(|&kind| {
            let (corrupted, skipped) = corrupt_split(instances, kind, seed);
            let cfg = EvalConfig { label: kind.name().into(), ..config.clone() };
            let mut r = evaluate(model, vocab, &corrupted, &cfg)?;
            r.skipped = skipped;
            Ok(r)
        })
        .collect()
}

/// Plain-text table, one row per report, metric columns as percentages.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>8} {:>10} {:>10} {:>8} {:>6}",
        "variant", "Acc-D", "Acc-D cls", "ExactMatch", "TSED", "n"
    );
    for r in reports {
        let a = &r.aggregates;
        let _ = writeln!(
            s,
            "{:<20} {:>8.2} {:>10.2} {:>10.2} {:>8.2} {:>6}",
            r.fingerprint.label,
            100.0 * a.acc_d,
            100.0 * a.acc_d_cls,
            100.0 * a.exact_match,
            100.0 * a.tsed,
            a.n
        );
    }
    s
}

#[cfg(test)]
mod tests;
