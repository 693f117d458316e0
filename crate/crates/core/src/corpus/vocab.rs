use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusError, SliceInstance};
use crate::minilang::{self, TokenKind, KEYWORDS, OPERATORS, PUNCTUATION};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const LINE_NUMBER_OPEN: u32 = 4;
pub const LINE_NUMBER_CLOSE: u32 = 5;
pub const CODE_OPEN: u32 = 6;
pub const CODE_CLOSE: u32 = 7;
pub const CRITERION_OPEN: u32 = 8;
pub const CRITERION_CLOSE: u32 = 9;
pub const SLICE_OPEN: u32 = 10;
pub const SLICE_CLOSE: u32 = 11;
pub const NL: u32 = 12;

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 13] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<unk>",
    "<line_number>",
    "</line_number>",
    "<code>",
    "</code>",
    "<criterion>",
    "</criterion>",
    "<slice>",
    "</slice>",
    "<nl>",
];

pub const DEFAULT_MAX_SOURCE_LEN: usize = 256;

/// Token/id mapping. Ids are dense from 0: the reserved tokens, then every
/// keyword, operator, punctuation mark and digit, then identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Fixed tokens plus identifiers occurring in at least `min_count`
    /// distinct training programs. Counting programs rather than
    /// occurrences keeps a rare name out even when one program uses it
    /// many times.
    pub fn build(train: &[SliceInstance], min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for inst in train {
            let names: BTreeSet<String> = minilang::tokenize(&inst.program)
                .into_iter()
                .filter(|t| t.kind == TokenKind::Identifier)
                .map(|t| t.text)
                .collect();
            for n in names {
                *counts.entry(n).or_default() += 1;
            }
        }
        let idents = counts.into_iter().filter(|(_, c)| *c >= min_count).map(|(t, _)| t);
        Self::from_tokens(fixed_tokens().into_iter().chain(idents).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }
}

fn fixed_tokens() -> Vec<String> {
    let mut out: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    out.extend(KEYWORDS.iter().map(|s| s.to_string()));
    out.extend(OPERATORS.iter().map(|s| s.to_string()));
    out.extend(PUNCTUATION.iter().map(|s| s.to_string()));
    out.extend((0..10).map(|d| d.to_string()));
    out
}

/// Model-level token strings for one code token. Integer literals are
/// spelled digit by digit so that every number is in the vocabulary.
pub fn model_pieces(token: &str) -> Vec<String> {
    if token.len() > 1 && token.bytes().all(|b| b.is_ascii_digit()) {
        token.chars().map(|c| c.to_string()).collect()
    } else {
        vec![token.to_string()]
    }
}

fn digits(n: u32) -> Vec<String> {
    model_pieces(&n.to_string())
}

/// Model-level pieces of one numbered line, `<nl>` included.
pub fn line_pieces(line: u32, tokens: &[String]) -> Vec<String> {
    let mut out = digits(line);
    out.push(":".into());
    for t in tokens {
        out.extend(model_pieces(t));
    }
    out.push(RESERVED[NL as usize].into());
    out
}

/// Encoder input with its copy bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub pieces: Vec<String>,
    /// Embedding ids; out-of-vocabulary identifiers become `UNK`.
    pub ids: Vec<u32>,
    /// Extended ids: out-of-vocabulary pieces get `|V| + k`, numbered by
    /// first occurrence.
    pub ext_ids: Vec<u32>,
    /// Out-of-vocabulary pieces; entry `k` has extended id `|V| + k`.
    pub oov: Vec<String>,
    /// Source lines dropped to respect the length limit.
    pub truncated: bool,
}

impl EncodedInput {
    /// Text of an extended id.
    pub fn piece<'a>(&'a self, vocab: &'a Vocabulary, ext_id: u32) -> Option<&'a str> {
        let v = vocab.len() as u32;
        if ext_id < v {
            vocab.token(ext_id)
        } else {
            self.oov.get((ext_id - v) as usize).map(String::as_str)
        }
    }

    /// Extended id of a piece, if representable for this input.
    pub fn ext_id(&self, vocab: &Vocabulary, piece: &str) -> Option<u32> {
        vocab.id(piece).or_else(|| {
            self.oov.iter().position(|o| o == piece).map(|k| (vocab.len() + k) as u32)
        })
    }
}

/// Source lines of a program as `(line, token texts)`.
pub fn program_lines(program: &str) -> Vec<(u32, Vec<String>)> {
    minilang::statements(program)
        .into_iter()
        .map(|s| (s.line, s.tokens.into_iter().map(|t| t.text).collect()))
        .collect()
}

/// Encodes `<line_number> n </line_number> <criterion> v </criterion>
/// <code> L : tokens <nl> ... </code>`. Whole source lines are dropped from
/// the end when the result would exceed `max_len`.
pub fn encode_input(
    inst: &SliceInstance,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedInput, CorpusError> {
    let mut head: Vec<String> = vec![RESERVED[LINE_NUMBER_OPEN as usize].into()];
    head.extend(digits(inst.criterion.line));
    head.push(RESERVED[LINE_NUMBER_CLOSE as usize].into());
    head.push(RESERVED[CRITERION_OPEN as usize].into());
    head.extend(model_pieces(&inst.criterion.var));
    head.push(RESERVED[CRITERION_CLOSE as usize].into());
    head.push(RESERVED[CODE_OPEN as usize].into());
    let mut pieces = head;
    let mut truncated = false;
    for (line, toks) in program_lines(&inst.program) {
        let lp = line_pieces(line, &toks);
        if pieces.len() + lp.len() + 1 > max_len {
            truncated = true;
            break;
        }
        pieces.extend(lp);
    }
    pieces.push(RESERVED[CODE_CLOSE as usize].into());
    if pieces.len() > max_len {
        return Err(CorpusError::TooLong { len: pieces.len(), max: max_len });
    }
    let mut oov: Vec<String> = Vec::new();
    let mut ids = Vec::with_capacity(pieces.len());
    let mut ext_ids = Vec::with_capacity(pieces.len());
    for p in &pieces {
        match vocab.id(p) {
            Some(id) => {
                ids.push(id);
                ext_ids.push(id);
            }
            None => {
                let k = oov.iter().position(|o| o == p).unwrap_or_else(|| {
                    oov.push(p.clone());
                    oov.len() - 1
                });
                ids.push(UNK);
                ext_ids.push((vocab.len() + k) as u32);
            }
        }
    }
    Ok(EncodedInput { pieces, ids, ext_ids, oov, truncated })
}

/// Target pieces `<slice> L : tokens <nl> ... </slice> <eos>` for a gold
/// slice text.
pub fn target_pieces(gold_text: &str) -> Vec<String> {
    let mut out = vec![RESERVED[SLICE_OPEN as usize].to_string()];
    for s in minilang::parse_numbered(gold_text) {
        let toks: Vec<String> = s.tokens.into_iter().map(|t| t.text).collect();
        out.extend(line_pieces(s.line, &toks));
    }
    out.push(RESERVED[SLICE_CLOSE as usize].into());
    out.push(RESERVED[EOS as usize].into());
    out
}

/// Extended ids of target pieces. Pieces that are neither in the
/// vocabulary nor in the source become `UNK`.
pub fn encode_target(pieces: &[String], vocab: &Vocabulary, input: &EncodedInput) -> Vec<u32> {
    pieces.iter().map(|p| input.ext_id(vocab, p).unwrap_or(UNK)).collect()
}

/// Turns model pieces back into numbered slice text, rejoining split
/// digits. Markers other than `<nl>` are dropped.
pub fn pieces_to_text(pieces: &[&str]) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut prev_digit = false;
    let flush = |cur: &mut Vec<String>, lines: &mut Vec<String>| {
        if !cur.is_empty() {
            lines.push(cur.join(" "));
            cur.clear();
        }
    };
    for &p in pieces {
        if p == RESERVED[NL as usize] {
            flush(&mut cur, &mut lines);
            prev_digit = false;
            continue;
        }
        if RESERVED.contains(&p) {
            prev_digit = false;
            continue;
        }
        let is_digit = p.len() == 1 && p.as_bytes()[0].is_ascii_digit();
        if is_digit && prev_digit {
            cur.last_mut().unwrap().push_str(p);
        } else {
            cur.push(p.to_string());
        }
        prev_digit = is_digit;
    }
    flush(&mut cur, &mut lines);
    lines.join("\n")
}
