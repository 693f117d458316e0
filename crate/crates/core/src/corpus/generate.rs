use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::minilang::is_keyword;
use crate::seed;

/// Frequent identifiers; these end up in the vocabulary.
pub const COMMON_NAMES: [&str; 50] = [
    "a", "b", "c", "i", "j", "k", "n", "m", "x", "y", "z", "sum", "count", "total", "temp",
    "result", "value", "index", "max", "min", "left", "right", "mid", "len", "size", "num", "res",
    "ans", "cnt", "flag", "low", "high", "start", "end", "pos", "prev", "curr", "next", "step",
    "diff", "acc", "avg", "base", "limit", "key", "val", "tmp", "idx", "ret", "out",
];

pub const METHOD_NAMES: [&str; 10] =
    ["solve", "compute", "check", "find", "calc", "run", "process", "update", "eval", "apply"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Upper bound on source lines, header and closing brace included.
    pub max_lines: usize,
    /// Upper bound on local variables and parameters.
    pub var_pool: usize,
    pub nesting_depth: usize,
    /// Probability that a new variable takes a name from [`COMMON_NAMES`].
    pub common_name_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { max_lines: 30, var_pool: 6, nesting_depth: 2, common_name_rate: 0.6 }
    }
}

/// Generates one well-formed method in canonical layout. The same
/// `(seed, index, config)` always yields the same text.
pub fn generate_program(seed: u64, index: u64, config: &GenConfig) -> String {
    let mut g = Gen {
        rng: seed::substream(seed, seed::GEN, index),
        cfg: *config,
        lines: Vec::new(),
        scopes: vec![Vec::new()],
        taken: HashSet::new(),
        n_vars: 0,
    };
    g.method();
    g.render()
}

type Rng8 = rand_chacha::ChaCha8Rng;

struct Gen {
    rng: Rng8,
    cfg: GenConfig,
    lines: Vec<(usize, Vec<String>)>,
    scopes: Vec<Vec<String>>,
    taken: HashSet<String>,
    n_vars: usize,
}

impl Gen {
    fn emit(&mut self, depth: usize, toks: &[&str]) {
        self.lines.push((depth, toks.iter().map(|s| s.to_string()).collect()));
    }

    fn emit_owned(&mut self, depth: usize, toks: Vec<String>) {
        self.lines.push((depth, toks));
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for (d, toks) in &self.lines {
            s.push_str(&"    ".repeat(*d));
            s.push_str(&toks.join(" "));
            s.push('\n');
        }
        s
    }

    fn fresh_name(&mut self) -> String {
        loop {
            let name = if self.rng.gen_bool(self.cfg.common_name_rate) {
                COMMON_NAMES.choose(&mut self.rng).unwrap().to_string()
            } else {
                random_name(&mut self.rng)
            };
            if !self.taken.contains(&name) && !is_keyword(&name) {
                self.taken.insert(name.clone());
                return name;
            }
        }
    }

    fn visible(&self) -> Vec<String> {
        self.scopes.iter().flatten().cloned().collect()
    }

    fn pick_var(&mut self) -> Option<String> {
        let vars = self.visible();
        vars.choose(&mut self.rng).cloned()
    }

    fn literal(&mut self) -> String {
        let v: u32 = if self.rng.gen_bool(0.6) { self.rng.gen_range(0..10) } else { self.rng.gen_range(10..100) };
        v.to_string()
    }

    /// A variable other than `avoid`, or a literal.
    fn atom_except(&mut self, avoid: Option<&str>) -> String {
        if self.rng.gen_bool(0.7) {
            let vars: Vec<String> =
                self.visible().into_iter().filter(|v| Some(v.as_str()) != avoid).collect();
            if let Some(v) = vars.choose(&mut self.rng) {
                return v.clone();
            }
        }
        self.literal()
    }

    fn expr_except(&mut self, avoid: Option<&str>) -> Vec<String> {
        let first = self.atom_except(avoid);
        let mut out = vec![first.clone()];
        if self.rng.gen_bool(0.25) {
            let op = ["+", "-", "*", "+", "-"].choose(&mut self.rng).unwrap();
            out.push(op.to_string());
            out.push(self.atom_except(Some(&first)));
        }
        out
    }

    fn condition(&mut self) -> Vec<String> {
        let lhs = self.pick_var().unwrap_or_else(|| self.literal());
        let op = ["<", "<=", ">", ">=", "==", "!="].choose(&mut self.rng).unwrap().to_string();
        let rhs = self.atom_except(Some(&lhs));
        vec![lhs, op, rhs]
    }

    fn method(&mut self) {
        let name = if self.rng.gen_bool(0.8) {
            METHOD_NAMES.choose(&mut self.rng).unwrap().to_string()
        } else {
            random_name(&mut self.rng)
        };
        self.taken.insert(name.clone());
        let ret = if self.rng.gen_bool(0.8) { "int" } else { "long" };
        let mut header = vec![ret.to_string(), name, "(".to_string()];
        let n_params = if self.rng.gen_bool(0.6) { 1 } else { 0 };
        for p in 0..n_params {
            if p > 0 {
                header.push(",".into());
            }
            let v = self.fresh_name();
            header.push("int".into());
            header.push(v.clone());
            self.scopes[0].push(v);
            self.n_vars += 1;
        }
        header.extend([")".to_string(), "{".to_string()]);
        self.emit_owned(0, header);
        // Header, return, and closing brace take three lines.
        let budget = self.rng.gen_range(10..=18).min(self.cfg.max_lines.saturating_sub(3));
        self.scopes.push(Vec::new());
        if self.visible().is_empty() {
            self.decl(1, true);
        }
        self.block(1, budget.saturating_sub(self.lines.len() - 1), 0);
        let v = self.pick_var().unwrap_or_else(|| "0".into());
        self.emit_owned(1, vec!["return".into(), v, ";".into()]);
        self.scopes.pop();
        self.emit(0, &["}"]);
    }

    /// Emits statements until about `budget` lines are used.
    fn block(&mut self, depth: usize, budget: usize, nesting: usize) {
        let start = self.lines.len();
        while self.lines.len() - start < budget {
            let left = budget - (self.lines.len() - start);
            let roll: f64 = self.rng.gen();
            let can_nest = nesting < self.cfg.nesting_depth && left >= 3;
            if can_nest && roll < 0.30 {
                self.if_stmt(depth, left, nesting);
            } else if can_nest && roll < 0.38 {
                self.while_stmt(depth, left, nesting);
            } else if can_nest && roll < 0.39 {
                self.for_stmt(depth, left, nesting);
            } else if roll < 0.68 && self.n_vars < self.cfg.var_pool {
                self.decl(depth, false);
            } else if self.visible().is_empty() {
                self.decl(depth, true);
            } else {
                self.assign(depth);
            }
        }
    }

    fn decl(&mut self, depth: usize, force_init: bool) {
        let v = self.fresh_name();
        let ty = if self.rng.gen_bool(0.85) { "int" } else { "long" };
        let mut toks = vec![ty.to_string(), v.clone()];
        if force_init || self.rng.gen_bool(0.55) {
            toks.push("=".into());
            toks.extend(self.expr_except(None));
        }
        toks.push(";".into());
        self.emit_owned(depth, toks);
        self.scopes.last_mut().unwrap().push(v);
        self.n_vars += 1;
    }

    fn assign(&mut self, depth: usize) {
        let v = self.pick_var().expect("assign needs a visible variable");
        let roll: f64 = self.rng.gen();
        let toks = if roll < 0.2 {
            vec![v, "++".into(), ";".into()]
        } else if roll < 0.35 {
            let op = ["+=", "-="].choose(&mut self.rng).unwrap().to_string();
            let rhs = self.atom_except(Some(&v));
            vec![v, op, rhs, ";".into()]
        } else {
            let rhs = self.expr_except(Some(&v));
            let mut t = vec![v, "=".into()];
            t.extend(rhs);
            t.push(";".into());
            t
        };
        self.emit_owned(depth, toks);
    }

    fn body(&mut self, depth: usize, left: usize, nesting: usize) {
        let inner = self.rng.gen_range(1..=left.saturating_sub(2).clamp(1, 3));
        self.scopes.push(Vec::new());
        self.block(depth + 1, inner, nesting + 1);
        self.scopes.pop();
        self.emit(depth, &["}"]);
    }

    fn if_stmt(&mut self, depth: usize, left: usize, nesting: usize) {
        let mut h = vec!["if".to_string(), "(".into()];
        h.extend(self.condition());
        h.extend([")".to_string(), "{".into()]);
        self.emit_owned(depth, h);
        self.body(depth, left, nesting);
        if left >= 6 && self.rng.gen_bool(0.3) {
            self.emit(depth, &["else", "{"]);
            self.body(depth, left - 3, nesting);
        }
    }

    fn while_stmt(&mut self, depth: usize, left: usize, nesting: usize) {
        let mut h = vec!["while".to_string(), "(".into()];
        h.extend(self.condition());
        h.extend([")".to_string(), "{".into()]);
        self.emit_owned(depth, h);
        self.body(depth, left, nesting);
    }

    fn for_stmt(&mut self, depth: usize, left: usize, nesting: usize) {
        let i = self.fresh_name();
        let bound = self.atom_except(None);
        let h: Vec<String> = ["for", "(", "int", &i, "=", "0", ";", &i, "<", &bound, ";", &i, "++", ")", "{"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        self.emit_owned(depth, h);
        self.scopes.push(vec![i]);
        self.n_vars += 1;
        self.body(depth, left, nesting);
        self.scopes.pop();
    }
}

/// Random identifier of 3 to 10 letters, occasionally capitalized.
pub fn random_name(rng: &mut impl Rng) -> String {
    const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let len = rng.gen_range(3..=10);
    let mut s: String = (0..len).map(|_| *LOWER.choose(rng).unwrap() as char).collect();
    if rng.gen_bool(0.25) {
        s[..1].make_ascii_uppercase();
    }
    s
}
