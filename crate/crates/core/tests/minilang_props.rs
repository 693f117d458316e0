use proptest::prelude::*;

use seqslice::corpus::{generate_program, GenConfig};
use seqslice::minilang::{
    parse_numbered, parse_strict, parse_tolerant, render_slice, render_source, statements, tokenize,
    KEYWORDS, OPERATORS, PUNCTUATION,
};

fn vocabulary() -> Vec<String> {
    KEYWORDS
        .iter()
        .chain(OPERATORS)
        .chain(PUNCTUATION)
        .map(|s| s.to_string())
        .chain(["x", "y", "total", "0", "42", "\n"].map(String::from))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_programs_round_trip(seed in 0u64..1000, index in 0u64..1000) {
        let p = generate_program(seed, index, &GenConfig::default());
        prop_assert_eq!(render_source(&statements(&p)), p.clone());
        prop_assert!(parse_strict(&tokenize(&p)).is_ok());
    }

    #[test]
    fn numbered_slices_round_trip(seed in 0u64..1000, keep in prop::collection::vec(any::<bool>(), 40)) {
        let p = generate_program(seed, 0, &GenConfig::default());
        let picked: Vec<_> = statements(&p).into_iter().zip(keep.iter().cycle()).filter(|(_, &k)| k).map(|(s, _)| s).collect();
        let text = render_slice(&picked).unwrap();
        let back = parse_numbered(&text);
        prop_assert_eq!(render_slice(&back).unwrap(), text);
    }

    #[test]
    fn tolerant_parser_is_total(picks in prop::collection::vec(0usize..200, 0..80)) {
        let vocab = vocabulary();
        let text: String = picks.iter().map(|&i| vocab[i % vocab.len()].clone()).collect::<Vec<_>>().join(" ");
        let toks = tokenize(&text);
        let tree = parse_tolerant(&toks);
        prop_assert!(tree.error_count() == 0 || parse_strict(&toks).is_err());
    }
}
