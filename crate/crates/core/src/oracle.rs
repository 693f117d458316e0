//! Dependence-graph backward slicer used to produce reference slices.
//!
//! Data dependences come from a reaching-definitions analysis over a
//! statement-level control-flow graph, loop-carried definitions included.
//! Control dependences follow syntactic nesting. An assignment also depends
//! on the declaration of the variable it writes, so a slice through
//! `temp = B ;` keeps `int temp ;`.
//!
//! ```
//! use seqslice::oracle::{backward_slice, build_pdg_from_source, SliceCriterion};
//!
//! let src = "int a = 1 ;\nint b = 2 ;\nint c = a + 1 ;\n";
//! let pdg = build_pdg_from_source(src).unwrap();
//! let slice = backward_slice(&pdg, &SliceCriterion::new("c", 3)).unwrap();
//! assert_eq!(slice.into_iter().collect::<Vec<_>>(), [1, 3]);
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{parse_tolerant, tokenize, AstNode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("program has {0} syntax error(s); the slicer needs well-formed code")]
    Malformed(usize),
    #[error("line {0} holds no statement")]
    UnknownLine(u32),
    #[error("variable `{var}` does not occur on line {line}")]
    Criterion { var: String, line: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceCriterion {
    pub var: String,
    pub line: u32,
}

impl SliceCriterion {
    pub fn new(var: impl Into<String>, line: u32) -> Self {
        Self { var: var.into(), line }
    }
}

/// Lines kept in a slice for syntactic completeness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub trigger: Trigger,
    pub lines: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// The header on this line is in the slice (its closing `}`).
    Owner(u32),
    /// Some line in this inclusive range is in the slice (an `else` part
    /// or a bare block).
    Within(u32, u32),
}

/// Program dependence graph at line granularity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pdg {
    pub nodes: BTreeSet<u32>,
    /// `(use line, def line)`.
    pub data_edges: BTreeSet<(u32, u32)>,
    /// `(statement line, controlling header line)`.
    pub control_edges: BTreeSet<(u32, u32)>,
    /// Identifiers occurring on each line.
    pub mentions: BTreeMap<u32, BTreeSet<String>>,
    pub regions: Vec<Region>,
}

pub fn build_pdg_from_source(source: &str) -> Result<Pdg, OracleError> {
    build_pdg(&parse_tolerant(&tokenize(source)))
}

pub fn build_pdg(root: &AstNode) -> Result<Pdg, OracleError> {
    let errors = root.error_count();
    if errors > 0 {
        return Err(OracleError::Malformed(errors));
    }
    let mut b = Builder::default();
    for n in root.preorder() {
        if n.is_leaf() {
            b.pdg.nodes.insert(n.span.0);
            if n.label == "ident" {
                if let Some(t) = &n.text {
                    b.pdg.mentions.entry(n.span.0).or_default().insert(t.clone());
                }
            }
        }
    }
    b.scopes.push(HashMap::new());
    b.items(&root.children, &[], None);
    b.finish();
    Ok(b.pdg)
}

/// Lines reachable from the criterion line over data and control edges,
/// never stepping past the criterion line.
pub fn dependence_closure(pdg: &Pdg, line: u32) -> Result<BTreeSet<u32>, OracleError> {
    if !pdg.nodes.contains(&line) {
        return Err(OracleError::UnknownLine(line));
    }
    let mut out_edges: HashMap<u32, Vec<u32>> = HashMap::new();
    for &(from, to) in pdg.data_edges.iter().chain(&pdg.control_edges) {
        out_edges.entry(from).or_default().push(to);
    }
    let mut seen = BTreeSet::from([line]);
    let mut stack = vec![line];
    while let Some(l) = stack.pop() {
        for &t in out_edges.get(&l).map_or(&[][..], |v| v.as_slice()) {
            if t <= line && seen.insert(t) {
                stack.push(t);
            }
        }
    }
    Ok(seen)
}

/// Backward slice: the dependence closure plus the brace and `else` lines
/// that keep it well formed.
pub fn backward_slice(pdg: &Pdg, crit: &SliceCriterion) -> Result<BTreeSet<u32>, OracleError> {
    if !pdg.nodes.contains(&crit.line) {
        return Err(OracleError::UnknownLine(crit.line));
    }
    if !pdg.mentions.get(&crit.line).is_some_and(|m| m.contains(&crit.var)) {
        return Err(OracleError::Criterion { var: crit.var.clone(), line: crit.line });
    }
    let mut slice = dependence_closure(pdg, crit.line)?;
    let core = slice.clone();
    for r in &pdg.regions {
        let hit = match r.trigger {
            Trigger::Owner(l) => core.contains(&l),
            Trigger::Within(a, b) => core.range(a..=b).next().is_some(),
        };
        if hit {
            slice.extend(&r.lines);
        }
    }
    Ok(slice)
}

#[derive(Debug, Default)]
struct Unit {
    line: u32,
    defs: Vec<String>,
    uses: Vec<String>,
    preds: Vec<usize>,
}

#[derive(Default)]
struct Builder {
    pdg: Pdg,
    units: Vec<Unit>,
    scopes: Vec<HashMap<String, u32>>,
}

impl Builder {
    fn unit(&mut self, line: u32, preds: &[usize], ctrl: Option<u32>) -> usize {
        if let Some(h) = ctrl {
            if h != line {
                self.pdg.control_edges.insert((line, h));
            }
        }
        self.units.push(Unit { line, preds: preds.to_vec(), ..Unit::default() });
        self.units.len() - 1
    }

    fn lookup_decl(&self, var: &str) -> Option<u32> {
        self.scopes.iter().rev().find_map(|s| s.get(var).copied())
    }

    fn declare(&mut self, var: &str, line: u32) {
        self.scopes.last_mut().unwrap().insert(var.to_string(), line);
    }

    /// Walks a statement sequence; returns the units control may leave from.
    fn items(&mut self, items: &[AstNode], preds: &[usize], ctrl: Option<u32>) -> Vec<usize> {
        let mut cur = preds.to_vec();
        for it in items {
            cur = self.stmt(it, &cur, ctrl);
        }
        cur
    }

    fn stmt(&mut self, n: &AstNode, preds: &[usize], ctrl: Option<u32>) -> Vec<usize> {
        let line = n.span.0;
        match n.label.as_str() {
            "class" => {
                if let Some(body) = n.children.iter().find(|c| c.label == "block") {
                    for m in &body.children {
                        if m.label == "method" || m.label == "class" {
                            self.stmt(m, &[], None);
                        }
                    }
                }
                preds.to_vec()
            }
            "method" => {
                self.scopes.push(HashMap::new());
                let entry = self.unit(line, &[], None);
                if let Some(body) = n.children.iter().find(|c| c.label == "block") {
                    self.block_inner(body, &[entry], None);
                }
                self.scopes.pop();
                preds.to_vec()
            }
            "block" => {
                let braces: Vec<u32> = n
                    .children
                    .iter()
                    .filter(|c| c.label == "{" || c.label == "}")
                    .map(|c| c.span.0)
                    .collect();
                self.pdg.regions.push(Region { trigger: Trigger::Within(n.span.0, n.span.1), lines: braces });
                self.scopes.push(HashMap::new());
                let out = self.block_inner(n, preds, ctrl);
                self.scopes.pop();
                out
            }
            "decl" => {
                let u = self.unit(line, preds, ctrl);
                let mut after_eq = false;
                for c in &n.children {
                    let initializer = std::mem::replace(&mut after_eq, c.label == "=");
                    match c.label.as_str() {
                        "type" | "=" | ";" => {}
                        "ident" if !initializer => {
                            let v = c.text.clone().unwrap_or_default();
                            self.declare(&v, line);
                            self.units[u].defs.push(v);
                        }
                        _ => collect_uses(c, &mut self.units[u].uses),
                    }
                }
                vec![u]
            }
            "assign" | "expr_stmt" => {
                let u = self.unit(line, preds, ctrl);
                self.assignment(n, u);
                vec![u]
            }
            "return" => {
                let u = self.unit(line, preds, ctrl);
                for c in &n.children {
                    collect_uses(c, &mut self.units[u].uses);
                }
                Vec::new()
            }
            "if" => {
                let c = self.unit(line, preds, ctrl);
                let mut exits = Vec::new();
                let mut has_else = false;
                for ch in &n.children {
                    match ch.label.as_str() {
                        "else" => {
                            has_else = true;
                            let else_line = ch.span.0;
                            self.pdg.control_edges.insert((else_line, line));
                            let body = ch.children.first();
                            let mut lines = vec![else_line];
                            lines.extend(body.and_then(closing_brace));
                            let (lo, hi) = body.map_or((else_line, else_line), |b| b.span);
                            self.pdg.regions.push(Region { trigger: Trigger::Within(lo, hi), lines });
                            exits.extend(self.body(body, &[c], line));
                        }
                        _ if ch.label == "block" || is_statement(ch) => {
                            let lines = closing_brace(ch).into_iter().collect();
                            self.pdg.regions.push(Region { trigger: Trigger::Owner(line), lines });
                            exits.extend(self.body(Some(ch), &[c], line));
                        }
                        _ => collect_uses(ch, &mut self.units[c].uses),
                    }
                }
                if !has_else {
                    exits.push(c);
                }
                exits
            }
            "while" => {
                let c = self.unit(line, preds, ctrl);
                for ch in &n.children {
                    if ch.label == "block" || is_statement(ch) {
                        let lines = closing_brace(ch).into_iter().collect();
                        self.pdg.regions.push(Region { trigger: Trigger::Owner(line), lines });
                        let back = self.body(Some(ch), &[c], line);
                        self.units[c].preds.extend(back);
                    } else {
                        collect_uses(ch, &mut self.units[c].uses);
                    }
                }
                vec![c]
            }
            "for" => self.for_loop(n, preds, ctrl),
            ";" => preds.to_vec(),
            _ => {
                let u = self.unit(line, preds, ctrl);
                collect_uses(n, &mut self.units[u].uses);
                vec![u]
            }
        }
    }

    fn for_loop(&mut self, n: &AstNode, preds: &[usize], ctrl: Option<u32>) -> Vec<usize> {
        let line = n.span.0;
        self.scopes.push(HashMap::new());
        let parts: Vec<&AstNode> = n.children.iter().collect();
        let body_idx = parts.iter().rposition(|c| c.label == "block" || is_statement(c));
        let header: Vec<&AstNode> = parts[..body_idx.unwrap_or(parts.len())].to_vec();
        let mut cur = preds.to_vec();
        let mut cond = None;
        let mut update = None;
        for h in header {
            match h.label.as_str() {
                "decl" | "assign" if cond.is_none() => cur = self.stmt(h, &cur, ctrl),
                "assign" => update = Some(h),
                _ => cond = Some(h),
            }
        }
        let c = self.unit(line, &cur, ctrl);
        if let Some(e) = cond {
            collect_uses(e, &mut self.units[c].uses);
        }
        let mut tail = vec![c];
        if let Some(i) = body_idx {
            let lines = closing_brace(parts[i]).into_iter().collect();
            self.pdg.regions.push(Region { trigger: Trigger::Owner(line), lines });
            tail = self.body(Some(parts[i]), &[c], line);
        }
        if let Some(u) = update {
            tail = self.stmt(u, &tail, ctrl);
        }
        self.units[c].preds.extend(tail);
        self.scopes.pop();
        vec![c]
    }

    fn body(&mut self, body: Option<&AstNode>, preds: &[usize], header: u32) -> Vec<usize> {
        match body {
            Some(b) if b.label == "block" => {
                self.scopes.push(HashMap::new());
                let out = self.block_inner(b, preds, Some(header));
                self.scopes.pop();
                out
            }
            Some(b) => self.stmt(b, preds, Some(header)),
            None => preds.to_vec(),
        }
    }

    fn block_inner(&mut self, b: &AstNode, preds: &[usize], ctrl: Option<u32>) -> Vec<usize> {
        let inner: Vec<AstNode> =
            b.children.iter().filter(|c| c.label != "{" && c.label != "}").cloned().collect();
        if let Some(h) = ctrl {
            for c in b.children.iter().filter(|c| c.label == "{" || c.label == "}") {
                if c.span.0 != h {
                    self.pdg.control_edges.insert((c.span.0, h));
                }
            }
        }
        self.items(&inner, preds, ctrl)
    }

    fn assignment(&mut self, n: &AstNode, u: usize) {
        let mut kids = n.children.iter();
        let Some(target) = kids.next() else { return };
        let compound = n.children.iter().any(|c| {
            matches!(c.label.as_str(), "+=" | "-=" | "*=" | "/=" | "++" | "--")
        });
        if n.label == "expr_stmt" {
            collect_uses(target, &mut self.units[u].uses);
        } else {
            let var = match target.label.as_str() {
                "ident" => target.text.clone(),
                "index" | "field" => {
                    // Element and field writes update the base object in place.
                    collect_uses(target, &mut self.units[u].uses);
                    target.children.first().and_then(|c| c.text.clone())
                }
                _ => {
                    collect_uses(target, &mut self.units[u].uses);
                    None
                }
            };
            if let Some(v) = var {
                if compound {
                    self.units[u].uses.push(v.clone());
                }
                if let Some(d) = self.lookup_decl(&v) {
                    if d != n.span.0 {
                        self.pdg.data_edges.insert((n.span.0, d));
                    }
                }
                self.units[u].defs.push(v);
            }
        }
        for c in kids {
            collect_uses(c, &mut self.units[u].uses);
        }
    }

    /// Reaching definitions to a fixed point, then one data edge per
    /// use/reaching-def pair.
    fn finish(&mut self) {
        let n = self.units.len();
        let mut reach_in: Vec<BTreeSet<(String, usize)>> = vec![BTreeSet::new(); n];
        let mut reach_out: Vec<BTreeSet<(String, usize)>> = vec![BTreeSet::new(); n];
        let mut changed = true;
        while changed {
            changed = false;
            for u in 0..n {
                let mut inn = BTreeSet::new();
                for &p in &self.units[u].preds {
                    inn.extend(reach_out[p].iter().cloned());
                }
                let unit = &self.units[u];
                let mut out: BTreeSet<(String, usize)> =
                    inn.iter().filter(|(v, _)| !unit.defs.contains(v)).cloned().collect();
                out.extend(unit.defs.iter().map(|v| (v.clone(), u)));
                if out != reach_out[u] || inn != reach_in[u] {
                    changed = true;
                    reach_in[u] = inn;
                    reach_out[u] = out;
                }
            }
        }
        for u in 0..n {
            let unit = &self.units[u];
            for (v, d) in &reach_in[u] {
                if unit.uses.contains(v) {
                    self.pdg.data_edges.insert((unit.line, self.units[*d].line));
                }
            }
        }
    }
}

fn is_statement(n: &AstNode) -> bool {
    matches!(
        n.label.as_str(),
        "decl" | "assign" | "expr_stmt" | "return" | "if" | "while" | "for"
    )
}

fn closing_brace(n: &AstNode) -> Option<u32> {
    (n.label == "block")
        .then(|| n.children.iter().rev().find(|c| c.label == "}").map(|c| c.span.0))
        .flatten()
}

/// Variables read by an expression. Callee names and field names are not
/// variables.
fn collect_uses(n: &AstNode, out: &mut Vec<String>) {
    match n.label.as_str() {
        "ident" => out.extend(n.text.clone()),
        "call" => n.children.iter().skip(1).for_each(|c| collect_uses(c, out)),
        "field" => n.children.iter().take(1).for_each(|c| collect_uses(c, out)),
        _ => n.children.iter().for_each(|c| collect_uses(c, out)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(src: &str, var: &str, line: u32) -> Vec<u32> {
        let pdg = build_pdg_from_source(src).unwrap();
        backward_slice(&pdg, &SliceCriterion::new(var, line)).unwrap().into_iter().collect()
    }

    const SORT3: &str = "\
int sort3 ( int A , int B , int C ) {
    int x = A ;
    int y = B ;
    x = x + y ;
    y = x - y ;
    int temp ;
    if ( C <= A ) {
        temp = A ;
        A = C ;
        C = temp ;
        temp = B ;
    }
    return temp ;
}
";

    #[test]
    fn single_def_use() {
        let pdg = build_pdg_from_source("int a = 1 ;\nint b = a ;").unwrap();
        assert!(pdg.data_edges.contains(&(2, 1)));
        assert_eq!(pdg.data_edges.len(), 1);
    }

    #[test]
    fn nesting_gives_control_edges() {
        let pdg = build_pdg_from_source("int a = 1 ;\nif ( a > 0 ) {\na = 2 ;\n}\n").unwrap();
        assert!(pdg.control_edges.contains(&(3, 2)));
        assert!(pdg.control_edges.contains(&(4, 2)));
    }

    #[test]
    fn loop_carried_self_edge() {
        let src = "int i = 0 ;\nwhile ( i < 10 ) {\ni = i + 1 ;\n}\n";
        let pdg = build_pdg_from_source(src).unwrap();
        assert!(pdg.data_edges.contains(&(3, 3)));
        assert!(pdg.data_edges.contains(&(3, 1)));
        assert!(pdg.data_edges.contains(&(2, 3)));
        let src = "int s = 0 ;\nfor ( int i = 0 ; i < 3 ; i = i + 1 ) {\ns = s + i ;\n}\n";
        let pdg = build_pdg_from_source(src).unwrap();
        assert!(pdg.data_edges.contains(&(2, 2)));
        assert!(pdg.data_edges.contains(&(3, 2)));
        assert!(pdg.data_edges.contains(&(3, 3)));
    }

    #[test]
    fn chain() {
        assert_eq!(slice("int a = 1 ;\nint b = a ;\nint c = b ;\n", "c", 3), [1, 2, 3]);
    }

    #[test]
    fn figure_example_one() {
        // Criterion `temp` on line 11 keeps the declaration, the guarding
        // `if`, the assignment itself, and the closing brace.
        assert_eq!(slice(SORT3, "temp", 11), [6, 7, 11, 12]);
    }

    #[test]
    fn redefinition_kills() {
        assert_eq!(slice(SORT3, "y", 5), [2, 3, 4, 5]);
        assert_eq!(slice(SORT3, "x", 4), [2, 3, 4]);
    }

    #[test]
    fn else_lines_only_when_used() {
        let src = "\
int a = 1 ;
int b = 2 ;
if ( a > 0 ) {
    a = 3 ;
}
else {
    b = 4 ;
}
int c = a ;
";
        assert_eq!(slice(src, "c", 9), [1, 3, 4, 5, 9]);
        assert_eq!(slice(src, "b", 7), [1, 2, 3, 5, 6, 7, 8]);
        let src_b = src.replace("int c = a", "int c = b");
        assert_eq!(slice(&src_b, "c", 9), [1, 2, 3, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn criterion_errors() {
        let pdg = build_pdg_from_source("int a = 1 ;\nint b = a ;").unwrap();
        assert!(matches!(
            backward_slice(&pdg, &SliceCriterion::new("zz", 2)),
            Err(OracleError::Criterion { .. })
        ));
        assert!(matches!(
            backward_slice(&pdg, &SliceCriterion::new("a", 9)),
            Err(OracleError::UnknownLine(9))
        ));
        assert!(matches!(build_pdg_from_source("int a = ;"), Err(OracleError::Malformed(_))));
    }
}
