//! Error-tolerant recursive descent parser.
//!
//! The parser never fails. A rule that meets an unexpected token keeps the
//! part it already built, appends one `error` leaf, and returns; the leaf
//! swallows tokens up to the next statement boundary (`;`, `{`, `}`, or a
//! line break). Running out of input mid-rule adds a single `error` leaf
//! for the whole parse, except inside a block, which end of input closes
//! silently. The effect is that a prefix of a well-formed program parses
//! into a tree that only grows as the prefix grows.

use super::ast::AstNode;
use super::lexer::{is_type_keyword, Token, TokenKind};

const BINARY_LEVELS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["==", "!="],
    &["<", "<=", ">", ">="],
    &["+", "-"],
    &["*", "/", "%"],
];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/="];
const MODIFIERS: &[&str] = &["public", "private", "protected", "static", "final"];

/// Parses any token sequence into a `program` tree.
pub fn parse_tolerant(tokens: &[Token]) -> AstNode {
    Parser { toks: tokens, pos: 0, eof_reported: false }.program()
}

enum Flow {
    Continue,
    /// Input ended; stop building the current construct.
    Stop,
    /// A header was damaged and recovered; skip ahead to the body.
    Body,
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    eof_reported: bool,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn peek_text(&self) -> Option<&'a str> {
        self.peek().map(|t| t.text.as_str())
    }

    fn peek_is(&self, text: &str) -> bool {
        self.peek_text() == Some(text)
    }

    fn nth(&self, k: usize) -> Option<&'a Token> {
        self.toks.get(self.pos + k)
    }

    fn bump(&mut self) -> &'a Token {
        let t = &self.toks[self.pos];
        self.pos += 1;
        t
    }

    fn at_eof(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn last_line(&self) -> u32 {
        match self.pos {
            0 => self.toks.first().map_or(1, |t| t.line),
            p => self.toks[p - 1].line,
        }
    }

    fn leaf(&mut self, label: &str) -> AstNode {
        let t = self.bump();
        AstNode::leaf(label, None, t.line)
    }

    fn text_leaf(&mut self, label: &str) -> AstNode {
        let t = self.bump();
        AstNode::leaf(label, Some(t.text.clone()), t.line)
    }

    fn eof_error(&mut self) -> Option<AstNode> {
        if self.eof_reported {
            return None;
        }
        self.eof_reported = true;
        let l = self.last_line();
        Some(AstNode::error(l, l, None))
    }

    fn push_eof(&mut self, node: &mut AstNode) {
        if let Some(e) = self.eof_error() {
            node.push(e);
        }
    }

    fn zero_width_error(&self) -> AstNode {
        let l = self.last_line();
        AstNode::error(l, l, None)
    }

    /// Consumes tokens up to the next statement boundary into one error leaf.
    /// Braces are never consumed so that block structure survives.
    fn recover(&mut self) -> AstNode {
        let Some(first) = self.peek() else {
            return self.eof_error().unwrap_or_else(|| self.zero_width_error());
        };
        if first.text == "{" || first.text == "}" {
            return self.zero_width_error();
        }
        let line = first.line;
        let mut words = Vec::new();
        while let Some(t) = self.peek() {
            if t.text == "{" || t.text == "}" || t.line != line {
                break;
            }
            self.pos += 1;
            words.push(t.text.as_str());
            if t.text == ";" {
                break;
            }
        }
        AstNode::error(line, line, Some(words.join(" ")))
    }

    fn expect(&mut self, node: &mut AstNode, text: &str) -> Flow {
        match self.peek() {
            Some(t) if t.text == text => {
                self.pos += 1;
                node.extend_to(t.line);
                Flow::Continue
            }
            None => {
                self.push_eof(node);
                Flow::Stop
            }
            Some(_) => {
                let e = self.recover();
                node.push(e);
                Flow::Body
            }
        }
    }

    /// A separator inside a header: a missing one is noted and parsing
    /// carries on with the next component.
    fn expect_separator(&mut self, node: &mut AstNode, text: &str) -> Flow {
        match self.peek() {
            Some(t) if t.text == text => {
                self.pos += 1;
                Flow::Continue
            }
            None => {
                self.push_eof(node);
                Flow::Stop
            }
            Some(t) if t.text == "{" || t.text == "}" => {
                node.push(self.zero_width_error());
                Flow::Body
            }
            Some(_) => {
                node.push(self.zero_width_error());
                Flow::Continue
            }
        }
    }

    fn program(mut self) -> AstNode {
        let line = self.toks.first().map_or(1, |t| t.line);
        let mut root = AstNode::new("program", line);
        while let Some(t) = self.peek() {
            let child = if t.text == "class" {
                self.class_decl()
            } else if self.looks_like_method() {
                self.method_decl()
            } else if t.text == "}" {
                self.pos += 1;
                AstNode::error(t.line, t.line, Some("}".into()))
            } else {
                self.statement()
            };
            root.push(child);
        }
        root
    }

    fn looks_like_method(&self) -> bool {
        let mut k = 0;
        while self.nth(k).is_some_and(|t| MODIFIERS.contains(&t.text.as_str())) {
            k += 1;
        }
        match self.nth(k) {
            Some(t) if is_type_keyword(&t.text) || t.kind == TokenKind::Identifier => k += 1,
            _ => return false,
        }
        while self.nth(k).is_some_and(|t| t.text == "[")
            && self.nth(k + 1).is_some_and(|t| t.text == "]")
        {
            k += 2;
        }
        self.nth(k).is_some_and(|t| t.kind == TokenKind::Identifier)
            && self.nth(k + 1).is_some_and(|t| t.text == "(")
    }

    fn class_decl(&mut self) -> AstNode {
        let kw = self.bump();
        let mut node = AstNode::new("class", kw.line);
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => node.push(self.text_leaf("ident")),
            None => {
                self.push_eof(&mut node);
                return node;
            }
            Some(_) => node.push(self.recover()),
        }
        match self.peek() {
            Some(t) if t.text == "{" => {}
            None => {
                self.push_eof(&mut node);
                return node;
            }
            Some(_) => {
                node.push(self.recover());
                if !self.peek_is("{") {
                    return node;
                }
            }
        }
        let mut body = AstNode::new("block", self.peek().map_or(1, |t| t.line));
        body.push(self.leaf("{"));
        while let Some(t) = self.peek() {
            if t.text == "}" {
                body.push(self.leaf("}"));
                break;
            }
            let member = if self.looks_like_method() { self.method_decl() } else { self.statement() };
            body.push(member);
        }
        node.push(body);
        node
    }

    fn method_decl(&mut self) -> AstNode {
        let line = self.peek().map_or(1, |t| t.line);
        let mut node = AstNode::new("method", line);
        while self.peek().is_some_and(|t| MODIFIERS.contains(&t.text.as_str())) {
            node.push(self.text_leaf("modifier"));
        }
        node.push(self.type_leaf());
        node.push(self.text_leaf("ident"));
        self.pos += 1; // "(" checked by looks_like_method
        if !self.peek_is(")") && !self.at_eof() {
            let mut params = AstNode::new("params", self.last_line());
            while let Some(t) = self.peek() {
                if t.text == ")" || t.text == "{" {
                    break;
                }
                if t.text == "," {
                    self.pos += 1;
                    continue;
                }
                if is_type_keyword(&t.text) || t.kind == TokenKind::Identifier {
                    let mut p = AstNode::new("param", t.line);
                    p.push(self.type_leaf());
                    if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
                        p.push(self.text_leaf("ident"));
                    }
                    params.push(p);
                } else {
                    params.push(self.recover());
                }
            }
            node.push(params);
        }
        match self.expect(&mut node, ")") {
            Flow::Stop => return node,
            Flow::Continue | Flow::Body => {}
        }
        self.body(&mut node);
        node
    }

    fn type_leaf(&mut self) -> AstNode {
        let t = self.bump();
        let mut text = t.text.clone();
        while self.peek_is("[") && self.nth(1).is_some_and(|t| t.text == "]") {
            self.pos += 2;
            text.push_str("[]");
        }
        AstNode::leaf("type", Some(text), t.line)
    }

    fn block(&mut self) -> AstNode {
        let open = self.bump();
        let mut node = AstNode::new("block", open.line);
        node.push(AstNode::leaf("{", None, open.line));
        while let Some(t) = self.peek() {
            if t.text == "}" {
                node.push(self.leaf("}"));
                return node;
            }
            node.push(self.statement());
        }
        node
    }

    /// Body of a method or control statement.
    fn body(&mut self, node: &mut AstNode) {
        match self.peek() {
            Some(t) if t.text == "{" => node.push(self.block()),
            None => self.push_eof(node),
            Some(t) if t.text == "}" => node.push(self.zero_width_error()),
            Some(_) => node.push(self.statement()),
        }
    }

    fn statement(&mut self) -> AstNode {
        let t = self.peek().expect("statement called at end of input");
        match t.text.as_str() {
            "{" => self.block(),
            "if" => self.if_stmt(),
            "while" => self.while_stmt(),
            "for" => self.for_stmt(),
            "return" => self.return_stmt(),
            ";" => self.leaf(";"),
            s if is_type_keyword(s) => self.decl(true),
            _ if t.kind == TokenKind::Identifier => {
                let user_type = self.nth(1).is_some_and(|n| {
                    n.kind == TokenKind::Identifier
                        || (n.text == "[" && self.nth(2).is_some_and(|m| m.text == "]"))
                });
                if user_type {
                    self.decl(true)
                } else {
                    self.assign(true)
                }
            }
            _ => self.recover(),
        }
    }

    fn finish_statement(&mut self, node: &mut AstNode) {
        match self.peek() {
            Some(t) if t.text == ";" => node.push(self.leaf(";")),
            None => self.push_eof(node),
            Some(t) if t.text == "}" || t.line > self.last_line() => {
                node.push(self.zero_width_error())
            }
            Some(_) => node.push(self.recover()),
        }
    }

    fn decl(&mut self, terminated: bool) -> AstNode {
        let line = self.peek().map_or(1, |t| t.line);
        let mut node = AstNode::new("decl", line);
        node.push(self.type_leaf());
        loop {
            match self.peek() {
                Some(t) if t.kind == TokenKind::Identifier => node.push(self.text_leaf("ident")),
                None => {
                    self.push_eof(&mut node);
                    return node;
                }
                Some(_) => {
                    node.push(self.recover());
                    return node;
                }
            }
            if self.peek_is("=") {
                node.push(self.leaf("="));
                if self.at_eof() {
                    self.push_eof(&mut node);
                    return node;
                }
                node.push(self.expr());
                if self.at_eof() {
                    self.push_eof(&mut node);
                    return node;
                }
            }
            if self.peek_is(",") {
                self.pos += 1;
                continue;
            }
            break;
        }
        if terminated {
            self.finish_statement(&mut node);
        }
        node
    }

    fn assign(&mut self, terminated: bool) -> AstNode {
        let line = self.peek().map_or(1, |t| t.line);
        let mut node = AstNode::new("assign", line);
        let target = self.postfix();
        let is_call = target.label == "call";
        node.push(target);
        match self.peek_text() {
            Some(op) if ASSIGN_OPS.contains(&op) => {
                if op != "=" {
                    node.push(self.leaf(op));
                } else {
                    self.pos += 1;
                }
                if self.at_eof() {
                    self.push_eof(&mut node);
                    return node;
                }
                node.push(self.expr());
            }
            Some(op @ ("++" | "--")) => node.push(self.leaf(op)),
            None => {
                self.push_eof(&mut node);
                return node;
            }
            Some(_) if is_call => node.label = "expr_stmt".into(),
            Some(_) => {}
        }
        if terminated {
            self.finish_statement(&mut node);
        } else if self.at_eof() {
            self.push_eof(&mut node);
        }
        node
    }

    fn header_condition(&mut self, node: &mut AstNode) -> Flow {
        match self.expect(node, "(") {
            Flow::Continue => {}
            other => return other,
        }
        if self.at_eof() {
            self.push_eof(node);
            return Flow::Stop;
        }
        node.push(self.expr());
        if self.at_eof() {
            self.push_eof(node);
            return Flow::Stop;
        }
        self.expect(node, ")")
    }

    fn if_stmt(&mut self) -> AstNode {
        let kw = self.bump();
        let mut node = AstNode::new("if", kw.line);
        if let Flow::Stop = self.header_condition(&mut node) {
            return node;
        }
        self.body(&mut node);
        if self.peek_is("else") {
            let kw = self.bump();
            let mut els = AstNode::new("else", kw.line);
            if self.peek_is("if") {
                els.push(self.if_stmt());
            } else {
                self.body(&mut els);
            }
            node.push(els);
        }
        node
    }

    fn while_stmt(&mut self) -> AstNode {
        let kw = self.bump();
        let mut node = AstNode::new("while", kw.line);
        if let Flow::Stop = self.header_condition(&mut node) {
            return node;
        }
        self.body(&mut node);
        node
    }

    fn for_stmt(&mut self) -> AstNode {
        let kw = self.bump();
        let mut node = AstNode::new("for", kw.line);
        let header = (|| {
            match self.expect(&mut node, "(") {
                Flow::Continue => {}
                other => return other,
            }
            match self.peek() {
                None => {
                    self.push_eof(&mut node);
                    return Flow::Stop;
                }
                Some(t) if t.text == ";" => {}
                Some(t) if is_type_keyword(&t.text) => node.push(self.decl(false)),
                Some(t) if t.kind == TokenKind::Identifier => {
                    let user_type = self.nth(1).is_some_and(|n| n.kind == TokenKind::Identifier);
                    let init = if user_type { self.decl(false) } else { self.assign(false) };
                    node.push(init);
                }
                Some(_) => {}
            }
            if self.eof_reported {
                return Flow::Stop;
            }
            match self.expect_separator(&mut node, ";") {
                Flow::Continue => {}
                other => return other,
            }
            if self.at_eof() {
                self.push_eof(&mut node);
                return Flow::Stop;
            }
            if !self.peek_is(";") {
                node.push(self.expr());
            }
            if self.at_eof() {
                self.push_eof(&mut node);
                return Flow::Stop;
            }
            match self.expect_separator(&mut node, ";") {
                Flow::Continue => {}
                other => return other,
            }
            match self.peek() {
                None => {
                    self.push_eof(&mut node);
                    return Flow::Stop;
                }
                Some(t) if t.kind == TokenKind::Identifier => node.push(self.assign(false)),
                Some(_) => {}
            }
            if self.eof_reported {
                return Flow::Stop;
            }
            self.expect(&mut node, ")")
        })();
        if let Flow::Stop = header {
            return node;
        }
        self.body(&mut node);
        node
    }

    fn return_stmt(&mut self) -> AstNode {
        let kw = self.bump();
        let mut node = AstNode::new("return", kw.line);
        match self.peek() {
            None => self.push_eof(&mut node),
            Some(t) if t.text == ";" || t.text == "}" || t.line > kw.line => {
                self.finish_statement(&mut node)
            }
            Some(_) => {
                node.push(self.expr());
                self.finish_statement(&mut node);
            }
        }
        node
    }

    fn expr(&mut self) -> AstNode {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> AstNode {
        if level == BINARY_LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1);
        while let Some(op) = self.peek_text().filter(|op| BINARY_LEVELS[level].contains(op)) {
            let mut node = AstNode::new("binary", lhs.span.0);
            node.push(lhs);
            node.push(self.leaf(op));
            if self.at_eof() {
                self.push_eof(&mut node);
                return node;
            }
            node.push(self.binary(level + 1));
            lhs = node;
        }
        lhs
    }

    fn unary(&mut self) -> AstNode {
        match self.peek_text() {
            Some(op @ ("!" | "-")) => {
                let mut node = AstNode::new("unary", self.peek().map_or(1, |t| t.line));
                node.push(self.leaf(op));
                if self.at_eof() {
                    self.push_eof(&mut node);
                } else {
                    node.push(self.unary());
                }
                node
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> AstNode {
        let Some(t) = self.peek() else {
            return self.eof_error().unwrap_or_else(|| self.zero_width_error());
        };
        match t.kind {
            TokenKind::Identifier => {
                let ident = self.text_leaf("ident");
                match self.peek_text() {
                    Some("(") => self.call(ident),
                    Some("[") => {
                        let mut node = AstNode::new("index", ident.span.0);
                        node.push(ident);
                        self.pos += 1;
                        if self.at_eof() {
                            self.push_eof(&mut node);
                            return node;
                        }
                        node.push(self.expr());
                        self.close(&mut node, "]");
                        node
                    }
                    Some(".") if self.nth(1).is_some_and(|n| n.kind == TokenKind::Identifier) => {
                        let mut node = AstNode::new("field", ident.span.0);
                        node.push(ident);
                        self.pos += 1;
                        node.push(self.text_leaf("ident"));
                        node
                    }
                    _ => ident,
                }
            }
            TokenKind::IntLiteral => self.text_leaf("number"),
            TokenKind::Keyword if t.text == "true" || t.text == "false" => self.text_leaf("bool"),
            _ if t.text == "(" => {
                let mut node = AstNode::new("paren", t.line);
                self.pos += 1;
                if self.at_eof() {
                    self.push_eof(&mut node);
                    return node;
                }
                node.push(self.expr());
                self.close(&mut node, ")");
                node
            }
            _ => self.zero_width_error(),
        }
    }

    fn call(&mut self, callee: AstNode) -> AstNode {
        let mut node = AstNode::new("call", callee.span.0);
        node.push(callee);
        self.pos += 1;
        loop {
            match self.peek_text() {
                None => {
                    self.push_eof(&mut node);
                    return node;
                }
                Some(")") => {
                    self.pos += 1;
                    return node;
                }
                Some(",") => self.pos += 1,
                Some("{" | "}" | ";") => {
                    node.push(self.zero_width_error());
                    return node;
                }
                Some(_) => {
                    let before = self.pos;
                    node.push(self.expr());
                    if self.pos == before {
                        return node;
                    }
                }
            }
        }
    }

    fn close(&mut self, node: &mut AstNode, text: &str) {
        match self.peek() {
            Some(t) if t.text == text => {
                self.pos += 1;
                node.extend_to(t.line);
            }
            None => self.push_eof(node),
            Some(_) => node.push(self.zero_width_error()),
        }
    }
}
