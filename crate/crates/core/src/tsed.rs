//! Tree edit distance and the normalized tree similarity used to steer
//! decoding.
//!
//! ```
//! use seqslice::minilang::{parse_tolerant, tokenize};
//! use seqslice::tsed::{tsed_score, EditCost, LabeledTree};
//!
//! let x = LabeledTree::from_ast(&parse_tolerant(&tokenize("int a = 1 ;")));
//! assert_eq!(tsed_score(&x, &x, EditCost::UNIT).unwrap(), 1.0);
//! assert_eq!(tsed_score(&x, &LabeledTree::empty(), EditCost::UNIT).unwrap(), 0.0);
//! ```

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use thiserror::Error;

use crate::minilang::{parse_tolerant, strip_line_numbers, tokenize, AstNode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TsedError {
    #[error("similarity is undefined for two empty trees")]
    BothEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditCost {
    pub insert: f64,
    pub delete: f64,
    pub relabel: f64,
}

impl EditCost {
    pub const UNIT: EditCost = EditCost { insert: 1.0, delete: 1.0, relabel: 1.0 };
}

impl Default for EditCost {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Ordered labelled tree in postorder, as used by the Zhang–Shasha algorithm.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledTree {
    pub labels: Vec<String>,
    /// Postorder index of each node's leftmost leaf.
    pub leftmost: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    /// Ascending postorder indices of the keyroots.
    pub keyroots: Vec<usize>,
}

impl LabeledTree {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_ast(root: &AstNode) -> Self {
        fn go(n: &AstNode, t: &mut LabeledTree) -> usize {
            let mut first_leaf = None;
            let mut kids = Vec::with_capacity(n.children.len());
            for c in &n.children {
                let k = go(c, t);
                first_leaf.get_or_insert(t.leftmost[k]);
                kids.push(k);
            }
            let me = t.labels.len();
            t.labels.push(n.label.clone());
            t.leftmost.push(first_leaf.unwrap_or(me));
            t.parent.push(None);
            for k in kids {
                t.parent[k] = Some(me);
            }
            me
        }
        let mut t = Self::empty();
        go(root, &mut t);
        t.keyroots = keyroots(&t.leftmost);
        t
    }
}

/// Nodes that are the highest node with their leftmost leaf.
fn keyroots(leftmost: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; leftmost.len()];
    let mut out = Vec::new();
    for i in (0..leftmost.len()).rev() {
        if !seen[leftmost[i]] {
            seen[leftmost[i]] = true;
            out.push(i);
        }
    }
    out.reverse();
    out
}

/// Zhang–Shasha tree edit distance.
pub fn tree_edit_distance(a: &LabeledTree, b: &LabeledTree, cost: EditCost) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 {
        return n2 as f64 * cost.insert;
    }
    if n2 == 0 {
        return n1 as f64 * cost.delete;
    }
    let mut td = vec![0.0; n1 * n2];
    let mut fd = vec![0.0; (n1 + 1) * (n2 + 1)];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            let (m, n) = (i - li + 2, j - lj + 2);
            let at = |x: usize, y: usize| x * n + y;
            fd[at(0, 0)] = 0.0;
            for x in 1..m {
                fd[at(x, 0)] = fd[at(x - 1, 0)] + cost.delete;
            }
            for y in 1..n {
                fd[at(0, y)] = fd[at(0, y - 1)] + cost.insert;
            }
            for x in 1..m {
                let ia = li + x - 1;
                for y in 1..n {
                    let jb = lj + y - 1;
                    let del = fd[at(x - 1, y)] + cost.delete;
                    let ins = fd[at(x, y - 1)] + cost.insert;
                    if a.leftmost[ia] == li && b.leftmost[jb] == lj {
                        let sub = if a.labels[ia] == b.labels[jb] { 0.0 } else { cost.relabel };
                        let v = del.min(ins).min(fd[at(x - 1, y - 1)] + sub);
                        fd[at(x, y)] = v;
                        td[ia * n2 + jb] = v;
                    } else {
                        let (p, q) = (a.leftmost[ia] - li, b.leftmost[jb] - lj);
                        fd[at(x, y)] = del.min(ins).min(fd[at(p, q)] + td[ia * n2 + jb]);
                    }
                }
            }
        }
    }
    td[(n1 - 1) * n2 + (n2 - 1)]
}

/// `1 − TED / max(|x|, |y|)`.
pub fn tsed_score(x: &LabeledTree, y: &LabeledTree, cost: EditCost) -> Result<f64, TsedError> {
    let denom = x.len().max(y.len());
    if denom == 0 {
        return Err(TsedError::BothEmpty);
    }
    Ok(1.0 - tree_edit_distance(x, y, cost) / denom as f64)
}

/// Tree of a (possibly partial) line-numbered slice. No code gives the
/// empty tree.
pub fn slice_tree(slice_text: &str) -> LabeledTree {
    let toks = tokenize(&strip_line_numbers(slice_text));
    if toks.is_empty() {
        return LabeledTree::empty();
    }
    LabeledTree::from_ast(&parse_tolerant(&toks))
}

/// Scores partial slices against one source program, memoizing by the hash
/// of the code text.
#[derive(Debug)]
pub struct PrefixScorer {
    source: LabeledTree,
    cost: EditCost,
    cache: Mutex<HashMap<u64, f64>>,
}

impl PrefixScorer {
    pub fn new(source_code: &str, cost: EditCost) -> Self {
        let toks = tokenize(source_code);
        let source = if toks.is_empty() {
            LabeledTree::empty()
        } else {
            LabeledTree::from_ast(&parse_tolerant(&toks))
        };
        Self { source, cost, cache: Mutex::new(HashMap::new()) }
    }

    pub fn source_tree(&self) -> &LabeledTree {
        &self.source
    }

    /// Similarity of the partial slice to the source. An empty slice, or an
    /// empty source, scores 0.
    pub fn score(&self, slice_text: &str) -> f64 {
        let code = strip_line_numbers(slice_text);
        let mut h = DefaultHasher::new();
        code.hash(&mut h);
        let key = h.finish();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return v;
        }
        let toks = tokenize(&code);
        let tree = if toks.is_empty() {
            LabeledTree::empty()
        } else {
            LabeledTree::from_ast(&parse_tolerant(&toks))
        };
        let v = tsed_score(&self.source, &tree, self.cost).unwrap_or(0.0);
        self.cache.lock().unwrap().insert(key, v);
        v
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// One-shot [`PrefixScorer::score`].
pub fn prefix_tsed(source_code: &str, slice_text: &str) -> f64 {
    PrefixScorer::new(source_code, EditCost::UNIT).score(slice_text)
}
