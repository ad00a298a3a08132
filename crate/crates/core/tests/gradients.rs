use primflow::trainer::{gradient_suite, TERMS};

#[test]
fn joint_objective_terms_match_finite_differences() {
    for seed in [7, 8] {
        let reports = gradient_suite(seed, 1e-5).unwrap();
        assert_eq!(reports.len(), TERMS.len());
        for r in &reports {
            println!("seed {seed} {:<30} {:?}", r.term, r.report);
            assert!(r.report.n_compared > 0, "{}", r.term);
            assert!(r.report.passes(1e-4), "seed {seed} {}: {:?}", r.term, r.report);
        }
    }
}
