use gtf_core::{
    assemble_guidance, compose_addition, compose_bayes_addition, compose_bayes_removal, compose_removal, project,
    GtfError, GuidanceDeltas, ManipulationMode, NoiseVector,
};
use proptest::prelude::*;

fn vec_of(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..64).prop_flat_map(|d| (vec_of(d), vec_of(d)))
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..32).prop_flat_map(|d| (vec_of(d), vec_of(d), vec_of(d)))
}

fn nv(v: &[f64]) -> NoiseVector {
    NoiseVector::new(v.to_vec()).unwrap()
}

fn dist(a: &NoiseVector, b: &NoiseVector) -> f64 {
    a.sub(b).unwrap().norm()
}

proptest! {
    #[test]
    fn projection_splits_exactly((v, o) in pair()) {
        let (v, o) = (nv(&v), nv(&o));
        prop_assume!(o.norm() > 1e-3);
        let p = project(&v, &o).unwrap();
        let scale = v.norm().max(1.0);
        prop_assert!(dist(&p.parallel.add(&p.perpendicular).unwrap(), &v) <= 1e-12 * scale);
        prop_assert!(p.parallel.dot(&p.perpendicular).unwrap().abs() <= 1e-10 * scale * scale);
        let again = project(&p.parallel, &o).unwrap();
        prop_assert!(dist(&again.parallel, &p.parallel) <= 1e-10 * scale);
        prop_assert!(again.perpendicular.norm() <= 1e-10 * scale);
    }

    #[test]
    fn projection_ignores_reference_scale((v, o) in pair(), k in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
        let (v, o) = (nv(&v), nv(&o));
        prop_assume!(o.norm() > 1e-3);
        let a = project(&v, &o).unwrap();
        let b = project(&v, &o.scaled(k)).unwrap();
        prop_assert!(dist(&a.parallel, &b.parallel) <= 1e-10 * v.norm().max(1.0));
    }

    #[test]
    fn addition_without_target_weight_is_scaled_source((u, s, t) in triple(), w1 in -5.0..5.0f64) {
        let d = GuidanceDeltas::new(nv(&u), nv(&s), nv(&t)).unwrap();
        prop_assert_eq!(compose_addition(&d, w1, 0.0).unwrap(), nv(&s).scaled(w1));
    }

    #[test]
    fn addition_target_term_is_orthogonal_to_source((u, s, t) in triple(), w2 in 0.1..5.0f64) {
        let s_v = nv(&s);
        prop_assume!(s_v.norm() > 1e-3);
        let d = GuidanceDeltas::new(nv(&u), s_v.clone(), nv(&t)).unwrap();
        let extra = compose_addition(&d, 1.0, w2).unwrap().sub(&s_v).unwrap();
        let scale = (s_v.norm() * extra.norm()).max(1.0);
        prop_assert!(extra.dot(&s_v).unwrap().abs() <= 1e-9 * scale);
    }

    #[test]
    fn removal_pieces_recombine((u, s, t) in triple()) {
        let t_v = nv(&t);
        prop_assume!(t_v.norm() > 1e-3);
        let d = GuidanceDeltas::new(nv(&u), nv(&s), t_v).unwrap();
        // w1 = 1, w2 = -1 gives back the source itself.
        let back = compose_removal(&d, 1.0, -1.0).unwrap();
        prop_assert!(dist(&back, &nv(&s)) <= 1e-10 * nv(&s).norm().max(1.0));
        let rejected = compose_removal(&d, 1.0, 0.0).unwrap();
        prop_assert!(rejected.dot(&d.delta_tgt).unwrap().abs() <= 1e-9 * (nv(&s).norm() * d.delta_tgt.norm()).max(1.0));
    }

    #[test]
    fn bayes_compositions_are_affine((u, s, t) in triple(), a in -3.0..3.0f64) {
        let d = GuidanceDeltas::new(nv(&u), nv(&s), nv(&t)).unwrap();
        let scaled = GuidanceDeltas::new(nv(&u).scaled(a), nv(&s).scaled(a), nv(&t).scaled(a)).unwrap();
        for f in [compose_bayes_addition, compose_bayes_removal] {
            let lhs = f(&scaled).unwrap();
            let rhs = f(&d).unwrap().scaled(a);
            prop_assert!(dist(&lhs, &rhs) <= 1e-12 * rhs.norm().max(1.0) * 10.0);
        }
    }

    #[test]
    fn plain_cfg_is_a_special_case((u, s, t) in triple(), cfg in 0.5..12.0f64) {
        let d = GuidanceDeltas::new(nv(&u), nv(&s), nv(&t)).unwrap();
        let got = assemble_guidance(&d, ManipulationMode::Addition, 1.0, 0.0, cfg).unwrap();
        let expected = nv(&u).combine(1.0, &nv(&s), cfg).unwrap();
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn zero_reference_is_degenerate() {
    let err = project(&nv(&[1.0, 2.0]), &NoiseVector::zeros(2)).unwrap_err();
    assert!(matches!(err, GtfError::DegenerateReference { .. }));
}

#[test]
fn non_finite_entries_are_rejected() {
    assert!(NoiseVector::new(vec![1.0, f64::NAN]).is_err());
    assert!(NoiseVector::new(vec![]).is_err());
}
