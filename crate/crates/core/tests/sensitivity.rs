use docausal::effects::CausalModelSpec;
use docausal::sensitivity::{causal_risk_ratio, e_value, e_value_table};
use docausal::synth::{generate, reference_scm, REFERENCE_SYSBP_EFFECT};
use proptest::prelude::*;

#[test]
fn reference_ratio_and_e_value() {
    let rr = causal_risk_ratio(0.1411, 0.1071).unwrap();
    assert!((rr - 1.317).abs() < 0.001);
    assert!((e_value(1.317).unwrap() - 1.96).abs() < 0.01);
    assert_eq!(e_value(1.0).unwrap(), 1.0);
    assert_eq!(causal_risk_ratio(0.2, 0.1).unwrap(), 2.0);
}

proptest! {
    #[test]
    fn e_value_is_monotone(a in 1.0f64..50.0, b in 1.0f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(e_value(lo).unwrap() <= e_value(hi).unwrap());
    }

    #[test]
    fn e_value_is_reciprocal_symmetric(rr in 0.01f64..100.0) {
        let a = e_value(rr).unwrap();
        let b = e_value(1.0 / rr).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn e_value_bounds_the_ratio(rr in 1.0f64..100.0) {
        let e = e_value(rr).unwrap();
        prop_assert!(e >= rr && e <= 2.0 * rr);
    }
}

#[test]
fn e_values_grow_with_intervention_size() {
    let data = generate(&reference_scm(REFERENCE_SYSBP_EFFECT), 4000, 21).unwrap();
    let spec = CausalModelSpec::new("SYSBP", "CHD", &["AGE", "SEX_MALE", "BMI", "CURSMOKE"], &[]);
    let rows = e_value_table(&data, &spec, &[0.0, 5.0, 10.0, 15.0, 20.0], 100, 3).unwrap();
    // rows come largest first
    for w in rows.windows(2) {
        assert!(w[0].e_point > w[1].e_point, "{} {}", w[0].e_point, w[1].e_point);
    }
    let zero = rows.last().unwrap();
    assert_eq!(zero.intervention_mmhg, 0.0);
    assert_eq!(zero.risk_ratio, 1.0);
    assert_eq!(zero.e_point, 1.0);
}
