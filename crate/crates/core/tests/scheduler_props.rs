use gtf_core::{SchedulerKind, SchedulerSpec};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = SchedulerKind> {
    prop::sample::select(SchedulerKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn values_stay_within_zero_and_twice_base(k in kind(), w0 in 0.0..10.0f64, max_t in 2usize..2000, frac in 0.0..=1.0f64) {
        let s = SchedulerSpec::new(k, w0, max_t).unwrap();
        let t = (frac * max_t as f64).round() as usize;
        let v = s.evaluate(t).unwrap();
        prop_assert!(v >= 0.0 && v <= 2.0 * w0 + 1e-12);
    }

    #[test]
    fn discrete_mass_matches_base_times_horizon(k in kind(), w0 in 0.1..10.0f64, max_t in 2usize..3000) {
        let s = SchedulerSpec::new(k, w0, max_t).unwrap();
        let target = w0 * max_t as f64;
        prop_assert!(((s.discrete_mass() - target) / target).abs() <= 2.0 / max_t as f64 + 1e-12);
    }

    #[test]
    fn mirrored_pairs(w0 in 0.1..10.0f64, max_t in 2usize..2000, frac in 0.0..=1.0f64) {
        let t = (frac * max_t as f64).round() as usize;
        for (a, b) in [
            (SchedulerKind::Linear, SchedulerKind::InverseLinear),
            (SchedulerKind::Cosine, SchedulerKind::Sine),
        ] {
            let sa = SchedulerSpec::new(a, w0, max_t).unwrap();
            let sb = SchedulerSpec::new(b, w0, max_t).unwrap();
            prop_assert!((sa.evaluate(t).unwrap() - sb.evaluate(max_t - t).unwrap()).abs() <= 1e-12 * w0.max(1.0));
        }
    }

    #[test]
    fn beyond_horizon_is_an_error(k in kind(), max_t in 2usize..500, extra in 1usize..100) {
        let s = SchedulerSpec::new(k, 1.0, max_t).unwrap();
        prop_assert!(s.evaluate(max_t + extra).is_err());
    }
}

#[test]
fn left_riemann_masses_at_t1000() {
    // Left sums of w(t) over t = 0..T-1 with w0 = 1.
    let expected = [
        (SchedulerKind::Static, 1000.0),
        (SchedulerKind::Linear, 1001.0),
        (SchedulerKind::Cosine, 1001.0),
        (SchedulerKind::InverseLinear, 999.0),
        (SchedulerKind::Sine, 999.0),
    ];
    for (k, m) in expected {
        let s = SchedulerSpec::new(k, 1.0, 1000).unwrap();
        assert!((s.discrete_mass() - m).abs() < 1e-9, "{k}: {}", s.discrete_mass());
    }
}

#[test]
fn negative_base_is_rejected() {
    assert!(SchedulerSpec::new(SchedulerKind::Cosine, -1.0, 10).is_err());
    assert!(SchedulerSpec::new(SchedulerKind::Cosine, 1.0, 1).is_err());
}
