use proptest::prelude::*;
use scm_core::harness::{compare, run, windowed_mse, Backend, Rule, SimConfig};
use scm_core::learning::{InferenceMode, MaskMode};
use scm_core::model::{InputDist, TeacherKind};

fn small(seed: u64, rule: Rule) -> SimConfig {
    let mut c = SimConfig::new(2, 3, 4_000, seed, rule).with_n(80);
    c.eta = 0.3;
    c
}

#[test]
fn records_are_well_formed() {
    for backend in [Backend::Direct, Backend::ThermoLimit] {
        for kind in [TeacherKind::Orthogonal, TeacherKind::Singular] {
            let mut c = small(3, Rule::dropout(0.5));
            c.backend = backend;
            c.teacher_kind = kind;
            let out = run(&c).unwrap();
            assert!(!out.summary.diverged);
            assert_eq!(out.records.len(), 4_000 / 80 + 1);
            for w in out.records.windows(2) {
                assert!(w[0].t <= w[1].t);
            }
            for r in &out.records {
                assert!(r.eg_analytic.is_finite() && r.eg_analytic >= 0.0);
                assert!(r.mse_window >= 0.0);
                assert_eq!((r.w.len(), r.q.len(), r.r.len()), (3, 6, 6));
            }
            assert_eq!(out.summary.singular_dwell.is_some(), kind == TeacherKind::Singular);
            for p in out.summary.plateaus.windows(2) {
                assert!(p[0].t_end < p[1].t_start);
            }
        }
    }
}

#[test]
fn remeasurement_keeps_tracking_exact() {
    let mut c = small(5, Rule::Sgd);
    c.steps = 30_000;
    c.remeasure_every = 10_000;
    let out = run(&c).unwrap();
    let drift = out.summary.max_remeasure_drift.unwrap();
    assert!(drift <= 1e-6, "{drift}");
}

#[test]
fn full_keep_dropout_compares_equal_to_sgd() {
    let sgd = small(0, Rule::Sgd);
    let mut drop = sgd.clone();
    drop.rule = Rule::Dropout {
        p: 1.0,
        mask_mode: MaskMode::FixedSize,
        inference_mode: InferenceMode::PaperLiteral,
    };
    let report = compare(&sgd, &drop, &[1, 2, 3], 1).unwrap();
    for row in &report.rows {
        assert_eq!(row.base, row.variant);
        assert_eq!(row.diff.final_mse, Some(0.0));
    }
}

#[test]
fn learns_the_learnable_case() {
    let mut c = SimConfig::new(2, 2, 600_000, 1, Rule::Sgd).with_n(100);
    c.eta = 0.1;
    c.input_dist = InputDist::Gaussian;
    let out = run(&c).unwrap();
    let first = out.records[0].eg_analytic;
    let last = out.summary.final_record.eg_analytic;
    assert!(last < first / 5.0, "{first} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_are_deterministic(seed in 0u64..1_000, k in 1usize..4, p in 0.3f64..1.0) {
        let mut c = small(seed, Rule::dropout(p));
        c.k = k;
        c.steps = 800;
        prop_assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    }

    #[test]
    fn windowed_mse_bounded_by_extremes(xs in prop::collection::vec(0.0f64..5.0, 1..200), w in 1usize..30) {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(0.0, f64::max);
        for v in windowed_mse(&xs, w).unwrap() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
