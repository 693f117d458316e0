use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    IntLiteral,
    Operator,
    Punct,
    /// Leading `L` of a `L : ...` line in rendered slices.
    LineMarker,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    /// 1-based source line.
    pub line: u32,
    /// 1-based column, counted in characters.
    pub col: u32,
}

pub const KEYWORDS: &[&str] = &[
    "int", "long", "boolean", "if", "else", "while", "for", "return", "class", "true", "false",
];

pub const TYPE_KEYWORDS: &[&str] = &["int", "long", "boolean"];

/// Operators, longest first so that a linear scan implements maximal munch.
pub const OPERATORS: &[&str] = &[
    "<=", ">=", "==", "!=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "+", "-", "*", "/",
    "%", "<", ">", "=", "!",
];

pub const PUNCTUATION: &[&str] = &["(", ")", "{", "}", ";", ",", ".", "[", "]", ":"];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub fn is_type_keyword(s: &str) -> bool {
    TYPE_KEYWORDS.contains(&s)
}

/// Splits source text into tokens. Never fails: characters outside the
/// language become single-character punctuation tokens, and comments and
/// whitespace are dropped.
pub fn tokenize(source: &str) -> Vec<Token> {
    let chars: Vec<char> = source.chars().collect();
    let mut cur = Cursor { chars: &chars, i: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(c) = cur.peek(0) {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '/' && cur.peek(1) == Some('/') {
            while cur.peek(0).is_some_and(|c| c != '\n') {
                cur.bump();
            }
            continue;
        }
        if c == '/' && cur.peek(1) == Some('*') {
            cur.bump();
            cur.bump();
            while cur.peek(0).is_some() && !(cur.peek(0) == Some('*') && cur.peek(1) == Some('/')) {
                cur.bump();
            }
            cur.bump();
            cur.bump();
            continue;
        }
        let (line, col, start) = (cur.line, cur.col, cur.i);
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while cur.peek(0).is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            let word: String = chars[start..cur.i].iter().collect();
            if is_keyword(&word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() {
            while cur.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                cur.bump();
            }
            TokenKind::IntLiteral
        } else if let Some(op) = OPERATORS.iter().find(|op| matches_at(&chars, start, op)) {
            for _ in 0..op.chars().count() {
                cur.bump();
            }
            TokenKind::Operator
        } else {
            cur.bump();
            TokenKind::Punct
        };
        out.push(Token { text: chars[start..cur.i].iter().collect(), kind, line, col });
    }
    out
}

struct Cursor<'a> {
    chars: &'a [char],
    i: usize,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).copied()
    }

    fn bump(&mut self) {
        let Some(c) = self.peek(0) else { return };
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
    }
}

fn matches_at(chars: &[char], i: usize, pat: &str) -> bool {
    pat.chars().enumerate().all(|(k, p)| chars.get(i + k) == Some(&p))
}

/// Tokenizes line-numbered slice text (`"7 : int temp"` per line). A leading
/// integer followed by `:` becomes a [`TokenKind::LineMarker`]; the colon
/// stays a punctuation token.
pub fn tokenize_numbered(text: &str) -> Vec<Token> {
    let mut toks = tokenize(text);
    let mut k = 0;
    while k < toks.len() {
        let first_on_line = k == 0 || toks[k - 1].line != toks[k].line;
        if first_on_line
            && toks[k].kind == TokenKind::IntLiteral
            && toks.get(k + 1).is_some_and(|t| t.text == ":" && t.line == toks[k].line)
        {
            toks[k].kind = TokenKind::LineMarker;
        }
        k += 1;
    }
    toks
}

/// Splits a rendered slice line into its line number and code part.
pub fn split_line_prefix(line: &str) -> Option<(u32, &str)> {
    let (head, rest) = line.split_once(':')?;
    let n = head.trim().parse().ok()?;
    Some((n, rest.trim()))
}
