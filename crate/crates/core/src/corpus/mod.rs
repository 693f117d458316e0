//! Synthetic slicing corpus: program generation, reference slices,
//! corruptions, vocabulary, model encoding, and JSONL persistence.
//!
//! ```
//! use seqslice::corpus::{generate_program, make_instance, GenConfig};
//! use seqslice::seed::substream;
//!
//! let program = generate_program(42, 0, &GenConfig::default());
//! let inst = make_instance(&program, &mut substream(42, "example", 0)).unwrap();
//! assert!(inst.gold_lines.contains(&inst.criterion.line));
//! ```

mod generate;
pub mod vocab;

pub use generate::{generate_program, random_name, GenConfig, COMMON_NAMES, METHOD_NAMES};
pub use vocab::{encode_input, encode_target, pieces_to_text, target_pieces, EncodedInput, Vocabulary};

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{self, render_slice, statements, Statement, StatementKind};
use crate::oracle::{self, OracleError, SliceCriterion};
use crate::seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("program has no variable occurrence to slice on")]
    NoCriterion,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("corruption `{0}` cannot be applied here")]
    BadCorruption(String),
    #[error("encoded input has {len} pieces, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid instance: {msg}")]
    Invalid { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    MissingClass,
    MissingSemicolons,
    UnmatchedBraces,
}

impl Corruption {
    pub const KINDS: [Corruption; 3] =
        [Corruption::MissingClass, Corruption::MissingSemicolons, Corruption::UnmatchedBraces];

    pub fn name(self) -> &'static str {
        match self {
            Corruption::None => "none",
            Corruption::MissingClass => "missing_class",
            Corruption::MissingSemicolons => "missing_semicolons",
            Corruption::UnmatchedBraces => "unmatched_braces",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Corruption::None].into_iter().chain(Self::KINDS).find(|k| k.name() == s)
    }
}

/// One slicing problem with its reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceInstance {
    pub program: String,
    pub criterion: SliceCriterion,
    pub gold_lines: Vec<u32>,
    pub gold_text: String,
    #[serde(default)]
    pub corruption: Corruption,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SliceInstance>,
    pub valid: Vec<SliceInstance>,
    pub test: Vec<SliceInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 3000, valid: 350, test: 870 }
    }
}

/// Non-blank lines and token count of a program.
pub fn program_stats(program: &str) -> (usize, usize) {
    let slocs = program.lines().filter(|l| !l.trim().is_empty()).count();
    (slocs, minilang::tokenize(program).len())
}

/// Renders the given lines of `program` as numbered slice text.
pub fn render_lines(program: &str, lines: &[u32]) -> String {
    let wanted: BTreeSet<u32> = lines.iter().copied().collect();
    let picked: Vec<Statement> =
        statements(program).into_iter().filter(|s| wanted.contains(&s.line)).collect();
    render_slice(&picked).expect("statements come out ordered")
}

/// Picks a criterion uniformly among `(variable, line)` occurrences in the
/// method body and labels it with the reference slicer.
pub fn make_instance(program: &str, rng: &mut impl Rng) -> Result<SliceInstance, CorpusError> {
    let pdg = oracle::build_pdg_from_source(program)?;
    let headers: HashSet<u32> = statements(program)
        .iter()
        .filter(|s| matches!(s.kind, StatementKind::MethodHeader | StatementKind::ClassHeader))
        .map(|s| s.line)
        .collect();
    let occurrences: Vec<(u32, &String)> = pdg
        .mentions
        .iter()
        .filter(|(l, _)| !headers.contains(l))
        .flat_map(|(l, vars)| vars.iter().map(move |v| (*l, v)))
        .collect();
    let &(line, var) = occurrences.choose(rng).ok_or(CorpusError::NoCriterion)?;
    let criterion = SliceCriterion::new(var.clone(), line);
    let gold: Vec<u32> = oracle::backward_slice(&pdg, &criterion)?.into_iter().collect();
    Ok(SliceInstance {
        program: program.to_string(),
        gold_text: render_lines(program, &gold),
        gold_lines: gold,
        criterion,
        corruption: Corruption::None,
    })
}

/// Applies one corruption, renumbering the criterion and reference lines.
pub fn corrupt(
    inst: &SliceInstance,
    kind: Corruption,
    rng: &mut impl Rng,
) -> Result<SliceInstance, CorpusError> {
    if kind == Corruption::None || inst.corruption != Corruption::None {
        return Err(CorpusError::BadCorruption(kind.name().into()));
    }
    let stmts = statements(&inst.program);
    let mut removed: BTreeSet<u32> = BTreeSet::new();
    let mut drop_semicolons = false;
    match kind {
        Corruption::MissingClass => {
            let closers = matching_closers(&stmts);
            for s in &stmts {
                if matches!(s.kind, StatementKind::MethodHeader | StatementKind::ClassHeader) {
                    removed.insert(s.line);
                    if let Some(&(_, c)) = closers.iter().find(|(o, _)| *o == s.line) {
                        removed.insert(c);
                    }
                }
            }
        }
        Corruption::MissingSemicolons => drop_semicolons = true,
        Corruption::UnmatchedBraces => {
            let braces: Vec<u32> = stmts
                .iter()
                .filter(|s| s.tokens.len() == 1 && s.tokens[0].text == "}")
                .map(|s| s.line)
                .collect();
            let &l = braces.choose(rng).ok_or_else(|| CorpusError::BadCorruption(kind.name().into()))?;
            removed.insert(l);
        }
        Corruption::None => unreachable!(),
    }
    let shift = |l: u32| l - removed.range(..l).count() as u32;
    if removed.contains(&inst.criterion.line) {
        return Err(CorpusError::BadCorruption(kind.name().into()));
    }
    let kept: Vec<Statement> = stmts
        .into_iter()
        .filter(|s| !removed.contains(&s.line))
        .filter_map(|mut s| {
            if drop_semicolons {
                s.tokens.retain(|t| t.text != ";");
            }
            s.line = shift(s.line);
            (!s.tokens.is_empty()).then_some(s)
        })
        .collect();
    let program = minilang::render_source(&kept);
    let gold_lines: Vec<u32> = inst
        .gold_lines
        .iter()
        .filter(|l| !removed.contains(l))
        .map(|&l| shift(l))
        .filter(|l| kept.iter().any(|s| s.line == *l))
        .collect();
    Ok(SliceInstance {
        gold_text: render_lines(&program, &gold_lines),
        program,
        criterion: SliceCriterion::new(inst.criterion.var.clone(), shift(inst.criterion.line)),
        gold_lines,
        corruption: kind,
    })
}

/// `(line holding '{', line holding the matching '}')` pairs.
fn matching_closers(stmts: &[Statement]) -> Vec<(u32, u32)> {
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for s in stmts {
        for t in &s.tokens {
            match t.text.as_str() {
                "{" => stack.push(s.line),
                "}" => {
                    if let Some(o) = stack.pop() {
                        out.push((o, s.line));
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Generates train/valid/test instances. Programs are never repeated
/// across or within splits.
pub fn generate_split(seed: u64, sizes: SplitSizes, config: &GenConfig) -> DatasetSplit {
    let total = sizes.train + sizes.valid + sizes.test;
    let mut out = Vec::with_capacity(total);
    let mut seen = HashSet::new();
    let mut next = 0u64;
    while out.len() < total {
        let want = total - out.len();
        // Generate a batch in parallel; the index alone fixes each result,
        // so the batch size never affects the output.
        let batch: Vec<Option<SliceInstance>> = (next..next + want as u64)
            .into_par_iter()
            .map(|i| {
                let program = generate_program(seed, i, config);
                let mut rng = seed::substream(seed, "gen/criterion", i);
                make_instance(&program, &mut rng).ok()
            })
            .collect();
        next += want as u64;
        for inst in batch.into_iter().flatten() {
            if out.len() < total && seen.insert(inst.program.clone()) {
                out.push(inst);
            }
        }
    }
    let test = out.split_off(sizes.train + sizes.valid);
    let valid = out.split_off(sizes.train);
    DatasetSplit { train: out, valid, test }
}

/// Corrupted copy of every instance; the `i`-th draw uses its own stream.
pub fn corrupt_all(
    instances: &[SliceInstance],
    kind: Corruption,
    seed: u64,
) -> Result<Vec<SliceInstance>, CorpusError> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = seed::substream(seed, seed::CORRUPT, i as u64);
            corrupt(inst, kind, &mut rng)
        })
        .collect()
}

pub fn save_jsonl(path: &Path, instances: &[SliceInstance]) -> Result<(), CorpusError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for inst in instances {
        let line = serde_json::to_string(inst).expect("instances always serialize");
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<SliceInstance>, CorpusError> {
    parse_jsonl(BufReader::new(fs::File::open(path)?))
}

/// Reads one instance per non-blank line and checks it.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<SliceInstance>, CorpusError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: SliceInstance = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: k + 1, msg: e.to_string() })?;
        validate(&inst).map_err(|msg| CorpusError::Invalid { line: k + 1, msg })?;
        out.push(inst);
    }
    Ok(out)
}

/// Checks that the reference slice is drawn verbatim from the program.
pub fn validate(inst: &SliceInstance) -> Result<(), String> {
    if inst.gold_lines.windows(2).any(|w| w[0] >= w[1]) {
        return Err("gold_lines must be strictly increasing".into());
    }
    let stmts = statements(&inst.program);
    let find = |l: u32| stmts.iter().find(|s| s.line == l);
    if find(inst.criterion.line).is_none() {
        return Err(format!("criterion line {} is empty or missing", inst.criterion.line));
    }
    let gold = minilang::parse_numbered(&inst.gold_text);
    let gold_nums: Vec<u32> = gold.iter().map(|s| s.line).collect();
    if gold_nums != inst.gold_lines {
        return Err("gold_text line numbers differ from gold_lines".into());
    }
    for g in &gold {
        let src = find(g.line).ok_or_else(|| format!("gold line {} not in program", g.line))?;
        let a: Vec<&str> = g.tokens.iter().map(|t| t.text.as_str()).collect();
        let b: Vec<&str> = src.tokens.iter().map(|t| t.text.as_str()).collect();
        if a != b {
            return Err(format!("gold line {} does not match the program", g.line));
        }
    }
    Ok(())
}

impl DatasetSplit {
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        save_jsonl(&dir.join("train.jsonl"), &self.train)?;
        save_jsonl(&dir.join("valid.jsonl"), &self.valid)?;
        save_jsonl(&dir.join("test.jsonl"), &self.test)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        Ok(Self {
            train: load_jsonl(&dir.join("train.jsonl"))?,
            valid: load_jsonl(&dir.join("valid.jsonl"))?,
            test: load_jsonl(&dir.join("test.jsonl"))?,
        })
    }
}
