use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mock::PathModel;
use super::*;
use crate::corpus::vocab::{encode_input, target_pieces};
use crate::corpus::{render_lines, Corruption, SliceInstance};
use crate::oracle::{backward_slice, build_pdg_from_source, SliceCriterion};

const CHANGE: &str = "\
int change ( int n , int y ) {
    int one = 0 , five = 0 , ten = n ;
    int z = 1 ;
    if ( one * 1 + five * 5 + ten * 10 > y ) {
        z = ten ;
    }
    return z ;
}
";

const ENCODE: &str = "\
int encode ( int x ) {
    int cnt = 0 ;
    long y = x + cnt ;
    long Codepoint = 97 + y ;
    return cnt ;
}
";

struct Fixture {
    vocab: Vocabulary,
    inst: SliceInstance,
    input: EncodedInput,
}

impl Fixture {
    fn new(program: &str, var: &str, line: u32, extra: &[&str]) -> Self {
        let base = Vocabulary::build(&[], 1);
        let vocab = Vocabulary::from_tokens(
            base.tokens().iter().cloned().chain(extra.iter().map(|s| s.to_string())).collect(),
        );
        let crit = SliceCriterion::new(var, line);
        let lines: Vec<u32> =
            backward_slice(&build_pdg_from_source(program).unwrap(), &crit).unwrap().into_iter().collect();
        let inst = SliceInstance {
            program: program.into(),
            gold_text: render_lines(program, &lines),
            gold_lines: lines,
            criterion: crit,
            corruption: Corruption::None,
        };
        let input = encode_input(&inst, &vocab, 256).unwrap();
        Self { vocab, inst, input }
    }

    fn ext_size(&self) -> usize {
        self.vocab.len() + 16
    }

    fn path(&self, text: &str) -> Vec<u32> {
        target_pieces(text)
            .iter()
            .map(|p| self.input.ext_id(&self.vocab, p).unwrap_or_else(|| self.vocab.id(p).expect(p)))
            .collect()
    }

    fn decode_input(&self) -> DecodeInput<'_> {
        DecodeInput { encoded: &self.input, vocab: &self.vocab, source: &self.inst.program }
    }
}

#[test]
fn allowed_set_definition() {
    let f = Fixture::new(ENCODE, "y", 3, &["keta", "cnt"]);
    let allowed = allowed_tokens(&f.input, f.ext_size());
    let mut distinct: Vec<u32> = f.input.ext_ids.clone();
    distinct.extend([EOS, SLICE_OPEN, SLICE_CLOSE, NL]);
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(allowed.len(), distinct.len());
    assert!(distinct.iter().all(|&id| allowed.contains(id)));
    let codepoint = f.input.ext_id(&f.vocab, "Codepoint").unwrap();
    assert!(codepoint as usize >= f.vocab.len());
    assert!(allowed.contains(codepoint));
    assert!(!allowed.contains(f.vocab.id("keta").unwrap()));
    assert!(!allowed.contains(f.vocab.id("while").unwrap()));
    assert!(!allowed.contains(crate::corpus::vocab::UNK));
}

#[test]
fn masking() {
    let logits = [0.5, 2.0, -1.0, 0.0];
    assert_eq!(apply_mask(&logits, &AllowedSet::all(4)).unwrap(), logits);
    let allowed = AllowedSet { mask: vec![true, false, true, true] };
    let mut p = apply_mask(&logits, &allowed).unwrap();
    crate::tensor::kernels::softmax_in_place(&mut p);
    assert_eq!(p[1], 0.0);
    assert!(p[0] > p[3] && p[3] > p[2]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    let none = AllowedSet { mask: vec![false; 4] };
    assert!(matches!(apply_mask(&logits, &none), Err(DecodeError::DegenerateMask)));
    assert!(matches!(apply_mask(&logits[..3], &allowed), Err(DecodeError::MaskShape { .. })));
}

#[test]
fn oracle_mock_reproduces_gold() {
    let f = Fixture::new(CHANGE, "z", 5, &[]);
    assert_eq!(f.inst.gold_lines, [2, 3, 4, 5, 6]);
    let gold = f.path(&f.inst.gold_text);
    let m = PathModel::new(f.ext_size(), vec![(gold.clone(), 1.0)]);
    let out = beam_search(&m, &f.decode_input(), &BeamConfig::default()).unwrap();
    assert_eq!(out.tokens, gold);
    assert_eq!(out.text, f.inst.gold_text);
    assert!(out.finished);
    assert_eq!(out.lines(), f.inst.gold_lines);
    assert!(out.tsed_history.windows(2).all(|w| w[1] >= w[0] - TSED_TOLERANCE));
    assert!(out.tsed_history.len() >= 5);
}

fn overgenerated(gold: &str) -> String {
    gold.replace(
        "> y ) {",
        "> y * 10 * y * y * y * z * ten * 10 * y * z * ten * 10 * y * z ) {",
    )
}

#[test]
fn syntactic_filter_prunes_repeating_tail() {
    let f = Fixture::new(CHANGE, "z", 5, &[]);
    let gold = f.path(&f.inst.gold_text);
    let bad_text = overgenerated(&f.inst.gold_text);
    assert_ne!(bad_text, f.inst.gold_text);
    let bad = f.path(&bad_text);
    let m = PathModel::new(f.ext_size(), vec![(gold.clone(), 0.4), (bad.clone(), 0.6)]);

    let plain = BeamConfig { syntactic: false, ..BeamConfig::default() };
    let out = beam_search(&m, &f.decode_input(), &plain).unwrap();
    assert_eq!(out.text, bad_text);

    let cfg = BeamConfig { trace: true, ..BeamConfig::default() };
    let out = beam_search(&m, &f.decode_input(), &cfg).unwrap();
    assert_eq!(out.text, f.inst.gold_text);
    let drops: Vec<&TraceCandidate> = out
        .trace
        .iter()
        .flat_map(|s| &s.beams)
        .filter(|c| c.reason == Some(Reason::TsedDrop))
        .collect();
    assert!(!drops.is_empty());
    assert!(drops.iter().all(|c| c.tokens.join(" ").contains("y * 1 0 * y")));
    assert!(drops.iter().all(|c| c.t_cur.unwrap() < c.t_prev));
}

#[test]
fn lexical_mask_blocks_frequent_substitute() {
    let f = Fixture::new(ENCODE, "Codepoint", 4, &["keta", "cnt", "x", "y"]);
    let gold = f.path(&f.inst.gold_text);
    let wrong_text = f.inst.gold_text.replace("Codepoint", "keta");
    let wrong = f.path(&wrong_text);
    let m = PathModel::new(f.ext_size(), vec![(gold.clone(), 0.3), (wrong, 0.7)]);

    let off = BeamConfig { lexical: false, ..BeamConfig::default() };
    assert_eq!(beam_search(&m, &f.decode_input(), &off).unwrap().text, wrong_text);

    let cfg = BeamConfig { trace: true, ..BeamConfig::default() };
    let out = beam_search(&m, &f.decode_input(), &cfg).unwrap();
    assert_eq!(out.text, f.inst.gold_text);
    let masked: Vec<&TraceCandidate> = out
        .trace
        .iter()
        .flat_map(|s| &s.beams)
        .filter(|c| c.reason == Some(Reason::LexicalMasked))
        .collect();
    assert_eq!(masked.len(), 1);
    assert_eq!(masked[0].tokens.last().unwrap(), "keta");
    let json = serde_json::to_string(&out.trace).unwrap();
    assert!(json.contains("\"lexical_masked\""));
    assert!(json.contains("\"eos\""));
}

#[test]
fn trace_is_bounded_and_replayable() {
    let f = Fixture::new(CHANGE, "z", 5, &[]);
    let gold = f.path(&f.inst.gold_text);
    let bad = f.path(&overgenerated(&f.inst.gold_text));
    let m = PathModel::new(f.ext_size(), vec![(gold, 0.4), (bad, 0.6)]);
    let cfg = BeamConfig { trace: true, max_len: 12, ..BeamConfig::default() };
    let a = beam_search(&m, &f.decode_input(), &cfg).unwrap();
    assert!(a.trace.len() <= 12);
    assert!(!a.finished);
    let b = beam_search(&m, &f.decode_input(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exhausted_at_first_step() {
    let f = Fixture::new(CHANGE, "z", 5, &[]);
    // Every path starts with a token the mask removes.
    let m = PathModel::new(f.ext_size(), vec![(vec![f.vocab.id("while").unwrap()], 1.0)]);
    let r = beam_search(&m, &f.decode_input(), &BeamConfig::default());
    assert!(matches!(r, Err(DecodeError::Exhausted)));
}

/// Random next-token tables keyed by prefix, for checking the
/// unconstrained path against a plain reference.
struct RandomModel {
    ext: usize,
    seed: u64,
}

impl RandomModel {
    fn dist(&self, prefix: &[u32]) -> Vec<f64> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut p: Vec<f64> = (0..self.ext).map(|_| rng.gen::<f64>().powi(4)).collect();
        // Make stopping likelier as the prefix grows.
        p[EOS as usize] = prefix.len() as f64 * 0.02;
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }
}

impl StepModel for RandomModel {
    type State = Vec<u32>;
    fn ext_size(&self) -> usize {
        self.ext
    }
    fn start(&self, _: &EncodedInput) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }
    fn step(&self, s: &mut Vec<u32>, t: u32) -> Result<Vec<f64>> {
        s.push(t);
        Ok(self.dist(&s[1..]))
    }
}

/// Per-beam top-k expansion, a finished pool and length-normalized
/// selection, written without any constraint machinery.
fn reference(m: &RandomModel, k: usize, max_len: usize) -> (Vec<u32>, f64) {
    let mut beam: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..max_len {
        let mut all = Vec::new();
        for (y, s) in &beam {
            let p = m.dist(y);
            let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
            order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
            for &z in order.iter().take(k) {
                let mut y2 = y.clone();
                y2.push(z as u32);
                all.push((y2, s + p[z].ln()));
            }
        }
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut next = Vec::new();
        for (rank, (y, s)) in all.into_iter().enumerate() {
            if *y.last().unwrap() == EOS {
                if rank < k {
                    done.push((y, s));
                }
            } else if next.len() < k {
                next.push((y, s));
            }
        }
        if next.is_empty() {
            break;
        }
        beam = next;
        if done.len() >= k {
            let mut keys: Vec<f64> = done.iter().map(|(y, s)| s / y.len() as f64).collect();
            keys.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if beam.iter().all(|(y, s)| s / y.len() as f64 <= keys[k - 1]) {
                break;
            }
        }
    }
    let pool = if done.is_empty() { &beam } else { &done };
    let mut best = pool[0].clone();
    for c in &pool[1..] {
        if c.1 / c.0.len() as f64 > best.1 / best.0.len() as f64 {
            best = c.clone();
        }
    }
    best
}

#[test]
fn unconstrained_equals_reference_beam_search() {
    let f = Fixture::new(CHANGE, "z", 5, &[]);
    for seed in 0..50 {
        let m = RandomModel { ext: f.ext_size(), seed };
        let cfg = BeamConfig { max_len: 30, ..BeamConfig::unconstrained() };
        let out = beam_search(&m, &f.decode_input(), &cfg).unwrap();
        let (tokens, score) = reference(&m, 3, 30);
        assert_eq!(out.tokens, tokens, "seed {seed}");
        assert!((out.score - score).abs() < 1e-12);
    }
}

#[test]
fn granularity_controls_where_the_filter_runs() {
    assert!(is_boundary(Granularity::Statement, ";"));
    assert!(is_boundary(Granularity::Statement, "}"));
    assert!(is_boundary(Granularity::Statement, "<nl>"));
    assert!(!is_boundary(Granularity::Statement, "x"));
    assert!(!is_boundary(Granularity::Line, ";"));
    assert!(is_boundary(Granularity::Line, "</slice>"));
    assert!(is_boundary(Granularity::Token, "x"));
}

