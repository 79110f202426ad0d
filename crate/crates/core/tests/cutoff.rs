use nlad_core::fractal::{dyadic_schedule, verify_cutoff, CompactSet, CutoffCheckOptions};

fn opts() -> CutoffCheckOptions<f64> {
    CutoffCheckOptions {
        denominator_samples: 20_000,
        ..CutoffCheckOptions::default()
    }
}

#[test]
fn point_cutoffs_pass_every_check() {
    let k = CompactSet::single_point(vec![0.3, 0.6, 0.45]).unwrap();
    let rep = verify_cutoff(&k, 4.0, &dyadic_schedule(3, 5), &opts()).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert!(rep.exact_properties_ok());
    assert!(rep.passed(), "{rep:?}");
    // |supp| scales like δ³, so δ^{-8/3}|supp| drops by 2^{1/3} per halving
    for w in rep.rows.windows(2) {
        let q = w[0].key_limit / w[1].key_limit;
        assert!((q / 2f64.cbrt() - 1.0).abs() < 0.05, "{q}");
    }
}

#[test]
fn rows_are_seed_independent_in_the_exact_columns() {
    let k = CompactSet::single_point(vec![0.5, 0.5, 0.5]).unwrap();
    let s = dyadic_schedule(3, 4);
    let a = verify_cutoff(&k, 4.0, &s, &CutoffCheckOptions { seed: 1, ..opts() }).unwrap();
    let b = verify_cutoff(&k, 4.0, &s, &CutoffCheckOptions { seed: 2, ..opts() }).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.support_measure, y.support_measure);
        assert_eq!(x.range_ok, y.range_ok);
    }
}

#[test]
fn bad_arguments_are_rejected() {
    let k = CompactSet::single_point(vec![0.5, 0.5, 0.5]).unwrap();
    assert!(verify_cutoff(&k, 1.0, &dyadic_schedule(3, 4), &opts()).is_err());
    assert!(verify_cutoff(&k, 4.0, &[], &opts()).is_err());
}
