//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use seqslice::corpus::{generate_split, make_instance, GenConfig, SliceInstance, SplitSizes, Vocabulary};
use seqslice::model::train::example_grads;
use seqslice::model::{Example, GateInput, Model, ModelConfig};
use seqslice::oracle::{Pdg, Region, SliceCriterion, Trigger};
use seqslice::seed::substream;
use seqslice::tsed::LabeledTree;

pub fn rng(name: &str, i: u64) -> ChaCha8Rng {
    substream(1234, name, i)
}

// ---------------------------------------------------------------- slicing

/// Random line-level dependence graph over lines `1..=n` with a handful of
/// structural regions and one mentioned variable per line.
pub fn random_pdg(rng: &mut impl Rng, n: u32) -> Pdg {
    let mut pdg = Pdg::default();
    pdg.nodes = (1..=n).collect();
    for l in 1..=n {
        pdg.mentions.insert(l, BTreeSet::from([format!("v{}", l % 3)]));
        for _ in 0..rng.gen_range(0..3) {
            // Mostly backward, sometimes forward for loop-carried flow.
            let t = rng.gen_range(1..=n);
            pdg.data_edges.insert((l, t));
        }
        if l > 1 && rng.gen_bool(0.4) {
            pdg.control_edges.insert((l, rng.gen_range(1..l)));
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(a..=n);
        let trigger = if rng.gen_bool(0.5) { Trigger::Owner(a) } else { Trigger::Within(a, b) };
        let lines = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(1..=n)).collect();
        pdg.regions.push(Region { trigger, lines });
    }
    pdg
}

/// Breadth-first reachability from the criterion over an adjacency
/// matrix, ignoring lines after the criterion, then the region rules.
pub fn bfs_slice(pdg: &Pdg, crit: &SliceCriterion) -> BTreeSet<u32> {
    let n = *pdg.nodes.iter().max().unwrap() as usize;
    let mut adj = vec![vec![false; n + 1]; n + 1];
    for &(a, b) in pdg.data_edges.iter().chain(&pdg.control_edges) {
        adj[a as usize][b as usize] = true;
    }
    let start = crit.line as usize;
    let mut seen = vec![false; n + 1];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for v in 1..=start {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    let reached: BTreeSet<u32> = (1..=n).filter(|&i| seen[i]).map(|i| i as u32).collect();
    let mut out = reached.clone();
    for r in &pdg.regions {
        let fire = match r.trigger {
            Trigger::Owner(h) => reached.contains(&h),
            Trigger::Within(a, b) => reached.iter().any(|&l| a <= l && l <= b),
        };
        if fire {
            out.extend(r.lines.iter().copied());
        }
    }
    out
}

// ------------------------------------------------------------------ trees

/// Tree as `(label, children)` in preorder construction.
#[derive(Debug, Clone)]
pub struct Tree {
    pub label: String,
    pub kids: Vec<Tree>,
}

pub fn random_tree(rng: &mut impl Rng, size: usize, alphabet: &[&str]) -> Tree {
    let mut t = Tree { label: alphabet[rng.gen_range(0..alphabet.len())].into(), kids: Vec::new() };
    let mut left = size - 1;
    while left > 0 {
        let take = rng.gen_range(1..=left);
        t.kids.push(random_tree(rng, take, alphabet));
        left -= take;
    }
    t
}

/// Postorder labelled tree in the library's representation.
pub fn to_labeled(t: &Tree) -> LabeledTree {
    let mut ast = seqslice::minilang::AstNode::new(&t.label, 1);
    fn go(t: &Tree, n: &mut seqslice::minilang::AstNode) {
        for k in &t.kids {
            let mut c = seqslice::minilang::AstNode::new(&k.label, 1);
            go(k, &mut c);
            n.push(c);
        }
    }
    go(t, &mut ast);
    LabeledTree::from_ast(&ast)
}

struct Flat {
    labels: Vec<String>,
    /// Preorder index of each node's parent.
    parent: Vec<Option<usize>>,
    /// Preorder and postorder rank of each node.
    pre: Vec<usize>,
    post: Vec<usize>,
}

fn flatten(t: &Tree) -> Flat {
    let mut f = Flat { labels: Vec::new(), parent: Vec::new(), pre: Vec::new(), post: Vec::new() };
    let mut post_counter = 0;
    fn go(t: &Tree, parent: Option<usize>, f: &mut Flat, post: &mut usize) {
        let me = f.labels.len();
        f.labels.push(t.label.clone());
        f.parent.push(parent);
        f.pre.push(me);
        f.post.push(0);
        for k in &t.kids {
            go(k, Some(me), f, post);
        }
        f.post[me] = *post;
        *post += 1;
    }
    go(t, None, &mut f, &mut post_counter);
    f
}

fn is_ancestor(f: &Flat, a: usize, d: usize) -> bool {
    let mut cur = f.parent[d];
    while let Some(p) = cur {
        if p == a {
            return true;
        }
        cur = f.parent[p];
    }
    false
}

/// Minimum unit-cost edit script cost, found by enumerating every valid
/// mapping between the two node sets. A mapping is valid when it is
/// one-to-one and preserves ancestry and left-to-right order; the cost of
/// the cheapest script realizing it is relabels plus unmapped nodes.
pub fn exhaustive_ted(a: &Tree, b: &Tree) -> f64 {
    let (fa, fb) = (flatten(a), flatten(b));
    let (n, m) = (fa.labels.len(), fb.labels.len());
    let mut best = (n + m) as f64;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; m];
    fn rec(
        i: usize,
        fa: &Flat,
        fb: &Flat,
        pairs: &mut Vec<(usize, usize)>,
        used: &mut Vec<bool>,
        best: &mut f64,
    ) {
        let (n, m) = (fa.labels.len(), fb.labels.len());
        if i == n {
            let relabel = pairs.iter().filter(|&&(x, y)| fa.labels[x] != fb.labels[y]).count();
            let cost = relabel + (n - pairs.len()) + (m - pairs.len());
            *best = best.min(cost as f64);
            return;
        }
        rec(i + 1, fa, fb, pairs, used, best);
        for j in 0..m {
            if used[j] {
                continue;
            }
            let ok = pairs.iter().all(|&(x, y)| {
                is_ancestor(fa, x, i) == is_ancestor(fb, y, j)
                    && is_ancestor(fa, i, x) == is_ancestor(fb, j, y)
                    && ((fa.pre[x] < fa.pre[i]) == (fb.pre[y] < fb.pre[j]))
                    && ((fa.post[x] < fa.post[i]) == (fb.post[y] < fb.post[j]))
            });
            if ok {
                used[j] = true;
                pairs.push((i, j));
                rec(i + 1, fa, fb, pairs, used, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    rec(0, &fa, &fb, &mut pairs, &mut used, &mut best);
    best
}

// ------------------------------------------------------------------ model

pub fn toy_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        enc_layers: 2,
        dec_layers: 2,
        ffn_dim: 16,
        max_src: 256,
        max_tgt: 256,
        vocab_size: vocab,
        max_oov_slots: 64,
        copy: true,
        gate_input: GateInput::Embedding,
    }
}

/// Small split and a vocabulary that leaves most identifiers out.
pub fn small_split(seed: u64, train: usize, test: usize) -> (Vec<SliceInstance>, Vec<SliceInstance>, Vocabulary) {
    let split = generate_split(seed, SplitSizes { train, valid: 0, test }, &GenConfig::default());
    let vocab = Vocabulary::build(&split.train, 3);
    (split.train, split.test, vocab)
}

pub fn instance(seed: u64, i: u64) -> SliceInstance {
    let p = seqslice::corpus::generate_program(seed, i, &GenConfig::default());
    make_instance(&p, &mut substream(seed, "test/criterion", i)).unwrap()
}

/// Loss of one example with the parameters as they are.
pub fn loss_of(model: &Model, ex: &Example) -> f64 {
    example_grads(model, ex).unwrap().0
}

/// Worst relative error `|a − n| / max(|a| + |n|, floor)` between the
/// analytic gradient and central differences, per parameter tensor.
pub fn gradient_check(model: &Model, ex: &Example, h: f64, floor: f64) -> BTreeMap<String, f64> {
    let (_, grads) = example_grads(model, ex).unwrap();
    let mut out = BTreeMap::new();
    let mut m = model.clone();
    for (p, name) in model.params.names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..model.params.tensors[p].numel() {
            let orig = m.params.tensors[p].data()[i];
            m.params.tensors[p].data_mut()[i] = orig + h;
            let up = loss_of(&m, ex);
            m.params.tensors[p].data_mut()[i] = orig - h;
            let down = loss_of(&m, ex);
            m.params.tensors[p].data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads[p][i];
            worst = worst.max((ana - num).abs() / (ana.abs() + num.abs()).max(floor));
        }
        out.insert(name.clone(), worst);
    }
    out
}
