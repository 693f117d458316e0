use serde::{Deserialize, Serialize};

/// Label carried by error-recovery leaves.
pub const ERROR_LABEL: &str = "error";

/// Ordered syntax tree node.
///
/// Labels name grammar symbols (`"decl"`, `"if"`, `"binary"`, ...), with
/// operators, braces, and `;` kept as leaves labelled by their text.
/// Identifier and literal leaves carry the source text in `text`; it takes
/// no part in tree comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub label: String,
    pub text: Option<String>,
    pub children: Vec<AstNode>,
    /// Inclusive `(start line, end line)`.
    pub span: (u32, u32),
    pub is_error: bool,
}

impl AstNode {
    pub fn new(label: impl Into<String>, line: u32) -> Self {
        Self {
            label: label.into(),
            text: None,
            children: Vec::new(),
            span: (line, line),
            is_error: false,
        }
    }

    pub fn leaf(label: impl Into<String>, text: Option<String>, line: u32) -> Self {
        Self { text, ..Self::new(label, line) }
    }

    pub fn error(start: u32, end: u32, text: Option<String>) -> Self {
        Self {
            label: ERROR_LABEL.to_string(),
            text,
            children: Vec::new(),
            span: (start, end),
            is_error: true,
        }
    }

    /// Appends a child and widens this node's span to cover it.
    pub fn push(&mut self, child: AstNode) {
        self.span.0 = self.span.0.min(child.span.0);
        self.span.1 = self.span.1.max(child.span.1);
        self.children.push(child);
    }

    pub fn extend_to(&mut self, line: u32) {
        self.span.0 = self.span.0.min(line);
        self.span.1 = self.span.1.max(line);
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Nodes in preorder.
    pub fn preorder(&self) -> Vec<&AstNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn error_count(&self) -> usize {
        self.preorder().iter().filter(|n| n.is_error).count()
    }

    /// Indented one-node-per-line dump, handy in test failure messages.
    pub fn pretty(&self) -> String {
        fn go(n: &AstNode, depth: usize, out: &mut String) {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&n.label);
            if let Some(t) = &n.text {
                out.push_str(&format!(" `{t}`"));
            }
            out.push_str(&format!(" [{}-{}]\n", n.span.0, n.span.1));
            for c in &n.children {
                go(c, depth + 1, out);
            }
        }
        let mut s = String::new();
        go(self, 0, &mut s);
        s
    }
}

/// Total number of nodes, error leaves included.
pub fn count_nodes(root: &AstNode) -> usize {
    1 + root.children.iter().map(count_nodes).sum::<usize>()
}
