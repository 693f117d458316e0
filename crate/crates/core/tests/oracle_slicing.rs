mod common;

use seqslice::corpus::{generate_program, GenConfig};
use seqslice::minilang::{parse_tolerant, tokenize};
use seqslice::oracle::{backward_slice, build_pdg_from_source, SliceCriterion};

#[test]
fn matches_bfs_on_random_graphs() {
    for i in 0..1000 {
        let mut r = common::rng("pdg", i);
        let n = 4 + (i % 12) as u32;
        let pdg = common::random_pdg(&mut r, n);
        let line = 1 + (i as u32 * 7) % n;
        let var = pdg.mentions[&line].iter().next().unwrap().clone();
        let crit = SliceCriterion::new(var, line);
        assert_eq!(backward_slice(&pdg, &crit).unwrap(), common::bfs_slice(&pdg, &crit), "graph {i}");
    }
}

#[test]
fn matches_bfs_on_generated_programs() {
    for i in 0..300 {
        let program = generate_program(77, i, &GenConfig::default());
        let pdg = build_pdg_from_source(&program).unwrap();
        for (&line, vars) in &pdg.mentions {
            for v in vars {
                let crit = SliceCriterion::new(v.clone(), line);
                assert_eq!(backward_slice(&pdg, &crit).unwrap(), common::bfs_slice(&pdg, &crit));
            }
        }
    }
}

#[test]
fn slices_are_closed_and_reparse() {
    for i in 0..300 {
        let inst = common::instance(31, i);
        let pdg = build_pdg_from_source(&inst.program).unwrap();
        let slice: Vec<u32> = inst.gold_lines.clone();
        for &l in &slice {
            for &(u, d) in &pdg.data_edges {
                if u == l && d <= inst.criterion.line && l <= inst.criterion.line {
                    assert!(slice.contains(&d), "program {i}: line {l} uses a def on {d} outside the slice");
                }
            }
        }
        let code = seqslice::minilang::strip_line_numbers(&inst.gold_text);
        assert_eq!(parse_tolerant(&tokenize(&code)).error_count(), 0, "program {i}");
    }
}
