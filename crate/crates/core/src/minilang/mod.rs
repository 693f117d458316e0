//! A small Java-flavoured imperative language: lexer, error-tolerant parser,
//! and line-oriented statements.
//!
//! Canonical layout puts one statement on each line. A header line (`if`,
//! `while`, `for`, method, class) ends with its opening `{`, and each `}`
//! sits alone on its own line:
//!
//! ```
//! use seqslice::minilang::{parse_tolerant, statements, tokenize};
//!
//! let src = "int f ( ) {\n  int a = 1 ;\n  if ( a < 2 ) {\n    a = 2 ;\n  }\n}\n";
//! let tree = parse_tolerant(&tokenize(src));
//! assert_eq!(tree.error_count(), 0);
//! assert_eq!(statements(src).len(), 6);
//! ```

mod ast;
mod lexer;
mod parser;

pub use ast::{count_nodes, AstNode, ERROR_LABEL};
pub use lexer::{
    is_keyword, is_type_keyword, split_line_prefix, tokenize, tokenize_numbered, Token, TokenKind,
    KEYWORDS, OPERATORS, PUNCTUATION, TYPE_KEYWORDS,
};
pub use parser::parse_tolerant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MinilangError {
    #[error("statements out of order: line {next} follows line {prev}")]
    Unordered { prev: u32, next: u32 },
    #[error("statement at line {line} has no tokens")]
    EmptyStatement { line: u32 },
    #[error("{errors} syntax error(s), {unclosed} unclosed block(s)")]
    Syntax { errors: usize, unclosed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    Decl,
    Assign,
    IfHeader,
    ElseHeader,
    WhileHeader,
    ForHeader,
    Return,
    OpenBrace,
    CloseBrace,
    MethodHeader,
    ClassHeader,
}

impl StatementKind {
    /// Classifies a line from its tokens.
    pub fn classify(tokens: &[Token]) -> Self {
        let text = |k: usize| tokens.get(k).map(|t| t.text.as_str());
        let mut k = 0;
        while matches!(text(k), Some("public" | "private" | "protected" | "static" | "final")) {
            k += 1;
        }
        let method_like = tokens.get(k).is_some_and(|t| {
            is_type_keyword(&t.text) || t.kind == TokenKind::Identifier
        }) && tokens.get(k + 1).is_some_and(|t| t.kind == TokenKind::Identifier)
            && text(k + 2) == Some("(");
        match text(0) {
            Some("class") => Self::ClassHeader,
            _ if method_like => Self::MethodHeader,
            Some("if") => Self::IfHeader,
            Some("else") => Self::ElseHeader,
            Some("while") => Self::WhileHeader,
            Some("for") => Self::ForHeader,
            Some("return") => Self::Return,
            Some("{") => Self::OpenBrace,
            Some("}") if text(1) == Some("else") => Self::ElseHeader,
            Some("}") => Self::CloseBrace,
            Some(t) if is_type_keyword(t) => Self::Decl,
            _ if tokens.len() >= 2
                && tokens[0].kind == TokenKind::Identifier
                && tokens[1].kind == TokenKind::Identifier =>
            {
                Self::Decl
            }
            _ => Self::Assign,
        }
    }
}

/// One source line of a canonical program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub line: u32,
    pub tokens: Vec<Token>,
    pub kind: StatementKind,
}

impl Statement {
    pub fn new(line: u32, tokens: Vec<Token>) -> Self {
        let kind = StatementKind::classify(&tokens);
        Self { line, tokens, kind }
    }

    /// Token texts joined by single spaces.
    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }

    /// `"L : tokens"`.
    pub fn numbered(&self) -> String {
        format!("{} : {}", self.line, self.text())
    }
}

fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Groups the tokens of `source` into one statement per non-empty line.
pub fn statements(source: &str) -> Vec<Statement> {
    group_lines(tokenize(source))
}

pub fn group_lines(tokens: Vec<Token>) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for t in tokens {
        if current.first().is_some_and(|c| c.line != t.line) {
            let line = current[0].line;
            out.push(Statement::new(line, std::mem::take(&mut current)));
        }
        current.push(t);
    }
    if let Some(first) = current.first() {
        let line = first.line;
        out.push(Statement::new(line, current));
    }
    out
}

/// Renders statements as line-numbered slice text, one per line.
///
/// ```
/// use seqslice::minilang::{render_slice, statements};
///
/// let src = "\n\n\n\n\n\nint temp ;\nif ( C <= A ) {\n\n\n\ntemp = B ;\n";
/// let mut slice = statements(src);
/// slice[0].tokens.pop(); // the figure shows the declaration without `;`
/// assert_eq!(
///     render_slice(&slice).unwrap(),
///     "7 : int temp\n8 : if ( C <= A ) {\n12 : temp = B ;"
/// );
/// ```
pub fn render_slice(statements: &[Statement]) -> Result<String, MinilangError> {
    for w in statements.windows(2) {
        if w[1].line <= w[0].line {
            return Err(MinilangError::Unordered { prev: w[0].line, next: w[1].line });
        }
    }
    let mut lines = Vec::with_capacity(statements.len());
    for s in statements {
        if s.tokens.is_empty() {
            return Err(MinilangError::EmptyStatement { line: s.line });
        }
        lines.push(s.numbered());
    }
    Ok(lines.join("\n"))
}

/// Renders statements as indented source. Lines are placed at their own
/// line numbers, so gaps become blank lines and re-tokenizing reproduces
/// the original line numbers.
pub fn render_source(statements: &[Statement]) -> String {
    let mut out = String::new();
    let mut depth = 0usize;
    let mut line = 1u32;
    for s in statements {
        while line < s.line {
            out.push('\n');
            line += 1;
        }
        let closes = s.tokens.first().is_some_and(|t| t.text == "}");
        if closes {
            depth = depth.saturating_sub(1);
        }
        out.push_str(&"    ".repeat(depth));
        out.push_str(&s.text());
        out.push('\n');
        line += 1;
        let opens = s.tokens.iter().filter(|t| t.text == "{").count();
        let shut = s.tokens.iter().filter(|t| t.text == "}").count() - usize::from(closes);
        depth = (depth + opens).saturating_sub(shut);
    }
    out
}

/// Parses line-numbered slice text (`"L : tokens"` per line) back into
/// statements. Lines without a numeric prefix are skipped.
pub fn parse_numbered(text: &str) -> Vec<Statement> {
    text.lines()
        .filter_map(|l| {
            let (n, code) = split_line_prefix(l)?;
            let tokens: Vec<Token> =
                tokenize(code).into_iter().map(|t| Token { line: n, ..t }).collect();
            (!tokens.is_empty()).then(|| Statement::new(n, tokens))
        })
        .collect()
}

/// Parses and rejects any recovery: error leaves, or blocks that end of
/// input closed without a `}`.
pub fn parse_strict(tokens: &[Token]) -> Result<AstNode, MinilangError> {
    let tree = parse_tolerant(tokens);
    let errors = tree.error_count();
    let unclosed = tree
        .preorder()
        .iter()
        .filter(|n| n.label == "block" && n.children.last().map_or(true, |c| c.label != "}"))
        .count();
    if errors + unclosed > 0 {
        return Err(MinilangError::Syntax { errors, unclosed });
    }
    Ok(tree)
}

/// Drops `"L :"` prefixes from line-numbered slice text. Lines without a
/// prefix are kept whole.
pub fn strip_line_numbers(text: &str) -> String {
    text.lines()
        .map(|l| split_line_prefix(l).map_or(l.trim(), |(_, code)| code))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses the tokens of a statement list, keeping original line numbers.
pub fn parse_statements(statements: &[Statement]) -> AstNode {
    let toks: Vec<Token> = statements.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    parse_tolerant(&toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    const METHOD: &str = "\
int sort3 ( int A , int B , int C ) {
    int temp ;
    if ( C <= A ) {
        temp = A ;
        A = C ;
        C = temp ;
    } else {
        temp = B ;
    }
    for ( int i = 0 ; i < A ; i = i + 1 ) {
        B = B + i * 2 ;
    }
    while ( ! ( A == B ) && B > 0 ) {
        B -= 1 ;
    }
    return A + B ;
}
";

    const CANONICAL: &str = "\
int f ( ) {
    int a = 1 ;
    long b ;
    if ( a < 2 ) {
        b = a * 3 ;
    }
    else {
        b = 0 ;
    }
    for ( int i = 0 ; i < a ; i = i + 1 ) {
        b = b + i ;
    }
    return b ;
}
";

    fn texts(toks: &[Token]) -> Vec<&str> {
        toks.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn well_formed_method_has_no_errors() {
        for src in [METHOD, CANONICAL] {
            let tree = parse_tolerant(&tokenize(src));
            assert_eq!(tree.label, "program");
            assert_eq!(tree.error_count(), 0, "{}", tree.pretty());
            assert_eq!(tree.children.len(), 1);
            assert_eq!(tree.children[0].label, "method");
        }
    }

    #[test]
    fn class_with_methods() {
        let src = "class K {\nint f ( ) {\nreturn 1 ;\n}\nboolean g ( ) {\nreturn true ;\n}\n}\n";
        let tree = parse_tolerant(&tokenize(src));
        assert_eq!(tree.error_count(), 0, "{}", tree.pretty());
        let class = &tree.children[0];
        assert_eq!(class.label, "class");
        let methods = class.children[1].children.iter().filter(|c| c.label == "method").count();
        assert_eq!(methods, 2);
    }

    #[test]
    fn spans_nest_and_errors_are_leaves() {
        let src = "int f ( ) {\nint a = ;\nif ( a < ) {\nb = $ 3 ;\n}\n";
        let tree = parse_tolerant(&tokenize(src));
        fn check(n: &AstNode) {
            if n.is_error {
                assert!(n.children.is_empty());
            }
            let mut prev = 0;
            for c in &n.children {
                assert!(c.span.0 >= n.span.0 && c.span.1 <= n.span.1, "{c:?} outside {n:?}");
                assert!(c.span.0 >= prev);
                prev = c.span.0;
                check(c);
            }
        }
        check(&tree);
        assert!(tree.error_count() > 0);
    }

    #[test]
    fn incomplete_if_prefix() {
        let tree = parse_tolerant(&tokenize("int temp \n if ( C <= A ) {"));
        assert_eq!(tree.children.len(), 2, "{}", tree.pretty());
        let decl = &tree.children[0];
        assert_eq!(decl.label, "decl");
        assert_eq!(decl.error_count(), 1);
        let iff = &tree.children[1];
        assert_eq!(iff.label, "if");
        assert_eq!(iff.children[0].label, "binary");
        assert_eq!(iff.children[1].label, "block");
    }

    #[test]
    fn missing_semicolons_keep_node_count_close() {
        let intact = tokenize(CANONICAL);
        let stripped: Vec<Token> = intact.iter().filter(|t| t.text != ";").cloned().collect();
        let a = count_nodes(&parse_tolerant(&intact)) as f64;
        let b = count_nodes(&parse_tolerant(&stripped)) as f64;
        assert!((a - b).abs() / a <= 0.15, "{a} vs {b}");
    }

    #[test]
    fn prefix_counts_are_monotone() {
        for src in [METHOD, CANONICAL] {
            let toks = tokenize(src);
            let mut prev = 0;
            for k in 0..=toks.len() {
                let tree = parse_tolerant(&toks[..k]);
                let n = count_nodes(&tree);
                assert!(n >= prev, "prefix {k}: {n} < {prev}\n{}", tree.pretty());
                prev = n;
            }
        }
    }

    #[test]
    fn stray_tokens_do_not_stall() {
        let tree = parse_tolerant(&tokenize("} } ) else ; $ $ { ( int"));
        assert!(tree.error_count() > 0);
        let tree = parse_tolerant(&tokenize("else else { } else"));
        assert!(tree.error_count() > 0);
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_slice(&[]).unwrap(), "");
        let close = Statement::new(22, vec![Token {
            text: "}".into(),
            kind: TokenKind::Punct,
            line: 22,
            col: 1,
        }]);
        assert_eq!(close.kind, StatementKind::CloseBrace);
        assert_eq!(render_slice(&[close.clone()]).unwrap(), "22 : }");
        let mut other = close.clone();
        other.line = 5;
        assert!(matches!(
            render_slice(&[close, other]),
            Err(MinilangError::Unordered { prev: 22, next: 5 })
        ));
    }

    #[test]
    fn statement_kinds() {
        let kinds: Vec<StatementKind> = statements(CANONICAL).iter().map(|s| s.kind).collect();
        use StatementKind::*;
        assert_eq!(
            kinds,
            [
                MethodHeader, Decl, Decl, IfHeader, Assign, CloseBrace, ElseHeader, Assign,
                CloseBrace, ForHeader, Assign, CloseBrace, Return, CloseBrace
            ]
        );
    }

    #[test]
    fn render_round_trips_tokens() {
        let stmts = statements(CANONICAL);
        let again = render_source(&stmts);
        assert_eq!(again, CANONICAL);
        assert_eq!(texts(&tokenize(&again)), texts(&tokenize(CANONICAL)));
        let numbered = render_slice(&stmts).unwrap();
        assert_eq!(parse_numbered(&numbered), stmts.iter().map(|s| {
            let toks = tokenize(&s.text()).into_iter().map(|t| Token { line: s.line, ..t }).collect();
            Statement::new(s.line, toks)
        }).collect::<Vec<_>>());
    }
}
