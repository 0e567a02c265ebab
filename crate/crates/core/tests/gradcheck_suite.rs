use attengluco_core::gradcheck::suite::{run_suite, CASES_PER_OP};
use attengluco_core::OpKind;

#[test]
fn every_op_and_both_models_pass() {
    let report = run_suite(0, None).unwrap();
    for e in &report.entries {
        println!(
            "{:<18} cases={:<3} coords={:<5} max_rel={:.3e}",
            e.name, e.cases, e.coords, e.max_rel_error
        );
    }
    assert!(report.passed());
    assert_eq!(report.entries.len(), OpKind::DIFFERENTIABLE.len() + 2);
    for op in OpKind::DIFFERENTIABLE {
        assert_eq!(report.entry(op.name()).unwrap().cases, CASES_PER_OP);
    }
}

#[test]
fn corrupted_rule_is_caught() {
    for op in [OpKind::Softmax, OpKind::LayerNorm, OpKind::Conv1d] {
        let report = run_suite(0, Some(op)).unwrap();
        assert!(!report.entry(op.name()).unwrap().passed, "{op} fault not detected");
        assert!(!report.passed());
    }
}
