use super::*;
use crate::corpus::vocab::{encode_target, target_pieces};
use crate::corpus::{generate_split, GenConfig, SplitSizes};
use crate::decode::mock::PathModel;
use crate::model::ModelConfig;

const GOLD: &str = "7 : int temp ;\n8 : if ( C <= A ) {\n12 : temp = B ;";

#[test]
fn exact_match_cases() {
    assert_eq!(exact_match(GOLD, GOLD), 1.0);
    assert_eq!(exact_match("4 : long Codepoint = 97 ;", "4 : long keta = 97 ;"), 0.0);
    assert_eq!(exact_match("7 :   int temp;\n\n8 : if (C<=A) {\n12 : temp = B;", GOLD), 1.0);
    assert_eq!(exact_match("9 : int temp ;", "7 : int temp ;"), 0.0);
    assert_eq!(exact_match("", ""), 1.0);
}

#[test]
fn acc_d_cases() {
    assert_eq!(acc_d(&[7, 8, 12], &[7, 8, 12]).unwrap(), 1.0);
    assert!((acc_d(&[7, 8], &[7, 8, 12]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(acc_d(&[7, 8, 9, 10, 12], &[7, 8, 12]).unwrap(), 1.0);
    assert!(matches!(acc_d(&[1], &[]), Err(MetricsError::EmptyGold)));
}

#[test]
fn acc_d_cls_penalizes_extras() {
    let cands = [7, 8, 9, 10, 11, 12];
    assert_eq!(acc_d_cls(&[7, 8, 12], &[7, 8, 12], &cands).unwrap(), 1.0);
    assert!((acc_d_cls(&[7, 8, 9, 10, 12], &[7, 8, 12], &cands).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    assert!(acc_d_cls(&[7], &[], &cands).is_err());
}

#[test]
fn tsed_metric_cases() {
    assert_eq!(tsed_metric(GOLD, GOLD), 1.0);
    assert_eq!(tsed_metric("", GOLD), 0.0);
    let other = "7 : int temp ;";
    let want = tsed_score(&slice_tree(other), &slice_tree(GOLD), EditCost::UNIT).unwrap();
    assert_eq!(tsed_metric(other, GOLD), want);
}

#[test]
fn exact_match_implies_full_scores() {
    let split = generate_split(5, SplitSizes { train: 0, valid: 0, test: 60 }, &GenConfig::default());
    for inst in &split.test {
        // Renumbering through the statement parser keeps the canonical form.
        let pred: String = minilang::parse_numbered(&inst.gold_text)
            .iter()
            .map(|s| s.numbered())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(exact_match(&pred, &inst.gold_text), 1.0);
        let lines: Vec<u32> = minilang::parse_numbered(&pred).iter().map(|s| s.line).collect();
        assert_eq!(acc_d(&lines, &inst.gold_lines).unwrap(), 1.0);
        assert_eq!(tsed_metric(&pred, &inst.gold_text), 1.0);
    }
}

#[test]
fn oracle_mock_scores_perfectly() {
    let split = generate_split(5, SplitSizes { train: 40, valid: 0, test: 10 }, &GenConfig::default());
    let vocab = Vocabulary::build(&split.train, 2);
    let mut records = Vec::new();
    for (i, inst) in split.test.iter().enumerate() {
        let input = encode_input(inst, &vocab, 256).unwrap();
        let mut path = encode_target(&target_pieces(&inst.gold_text), &vocab, &input);
        path.pop();
        let m = PathModel::new(vocab.len() + 64, vec![(path, 1.0)]);
        records.push(evaluate_instance(&m, &vocab, 256, i, inst, &BeamConfig::default()).unwrap());
    }
    let agg = Aggregates::from_records(&records);
    assert_eq!(agg.exact_match, 1.0);
    assert_eq!(agg.acc_d, 1.0);
    assert_eq!(agg.tsed, 1.0);
    assert_eq!(agg.foreign_tokens, 0);
}

fn tiny() -> (Vocabulary, Vec<SliceInstance>, Model) {
    let split = generate_split(9, SplitSizes { train: 30, valid: 0, test: 4 }, &GenConfig::default());
    let vocab = Vocabulary::build(&split.train, 2);
    let mut cfg = ModelConfig::new(vocab.len());
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    let model = Model::new(cfg, 3).unwrap();
    (vocab, split.test, model)
}

#[test]
fn reports_are_consistent_and_reproducible() {
    let (vocab, test, model) = tiny();
    let cfg = EvalConfig { beam: BeamConfig { max_len: 24, ..Default::default() }, ..Default::default() };
    let a = evaluate(&model, &vocab, &test, &cfg).unwrap();
    let b = evaluate(&model, &vocab, &test, &cfg).unwrap();
    assert!(a.is_consistent());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.aggregates.foreign_tokens, 0);
    let back: EvalReport = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn ablation_rows_and_table() {
    let (vocab, test, model) = tiny();
    let mut plain = model.clone();
    plain.config.copy = false;
    let cfg = EvalConfig { beam: BeamConfig { max_len: 12, ..Default::default() }, ..Default::default() };
    let rows = ablate(&model, Some(&plain), &vocab, &test[..2], &cfg).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.fingerprint.label.as_str()).collect();
    assert_eq!(labels, ["full", "-copy", "-lexical", "-syntactic", "vanilla"]);
    assert_eq!(ablate(&model, None, &vocab, &test[..2], &cfg).unwrap().len(), 3);
    assert!(ablate(&model, Some(&model), &vocab, &test[..2], &cfg).is_err());
    let table = render_table(&rows);
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().next().unwrap().contains("ExactMatch"));
}

#[test]
fn sweep_has_one_block_per_kind() {
    let (vocab, test, model) = tiny();
    let cfg = EvalConfig { beam: BeamConfig { max_len: 12, ..Default::default() }, ..Default::default() };
    let rows = corruption_sweep(&model, &vocab, &test, &cfg, 1).unwrap();
    let kinds: Vec<Corruption> = rows.iter().map(|r| r.fingerprint.corruption).collect();
    assert_eq!(kinds, Corruption::KINDS);
    for r in &rows {
        assert_eq!(r.aggregates.n + r.skipped, test.len());
        assert_eq!(r.aggregates.foreign_tokens, 0);
    }
}

#[test]
fn vocabulary_mismatch_is_a_config_error() {
    let (vocab, test, _) = tiny();
    let mut cfg = ModelConfig::new(vocab.len() + 1);
    cfg.d_model = 8;
    cfg.heads = 2;
    let model = Model::new(cfg, 0).unwrap();
    assert!(matches!(evaluate(&model, &vocab, &test, &EvalConfig::default()), Err(MetricsError::Config(_))));
}
