use gtf_core::{
    build_schedule, composed_target, demo_world, exact_epsilon, log_density, noised_mixture, product_gaussian,
    scene_world, score, ConditionId, GaussianComponent, GaussianMixture, ManipulationMode, NoiseVector,
};
use proptest::prelude::*;

fn two_component() -> GaussianMixture {
    GaussianMixture::new(vec![
        GaussianComponent::new(0.3, vec![-1.0, 2.0], vec![0.4, 1.5]).unwrap(),
        GaussianComponent::new(0.7, vec![2.0, -0.5], vec![1.2, 0.3]).unwrap(),
    ])
    .unwrap()
}

fn fd_gradient(m: &GaussianMixture, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            (log_density(m, &p).unwrap() - log_density(m, &q).unwrap()) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #[test]
    fn score_matches_finite_differences(x in -4.0..4.0f64, y in -4.0..4.0f64) {
        let m = two_component();
        let s = score(&m, &[x, y]).unwrap();
        let fd = fd_gradient(&m, &[x, y], 1e-5);
        for (a, b) in s.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn noised_mixture_keeps_unit_mass_and_shrinks_means(ab in 0.0..=1.0f64) {
        let n = noised_mixture(&two_component(), ab).unwrap();
        let w: f64 = n.components().iter().map(|c| c.weight).sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
        for (c, c0) in n.components().iter().zip(two_component().components()) {
            for i in 0..2 {
                prop_assert!((c.mean[i] - ab.sqrt() * c0.mean[i]).abs() < 1e-12);
                prop_assert!((c.var[i] - (ab * c0.var[i] + 1.0 - ab)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_epsilon_is_scaled_negative_score(t in 1usize..=1000, x in -3.0..3.0f64, y in -3.0..3.0f64, c in 0usize..4) {
        let world = scene_world();
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let id = if c == 3 { ConditionId::Unconditional } else { ConditionId::Label(c) };
        let eps = exact_epsilon(&world, &sched, &NoiseVector::new(vec![x, y]).unwrap(), t, id).unwrap();
        let noised = noised_mixture(world.get(id).unwrap(), sched.alpha_bar(t)).unwrap();
        let s = score(&noised, &[x, y]).unwrap();
        for (e, si) in eps.as_slice().iter().zip(&s) {
            prop_assert!((e + sched.sigma(t) * si).abs() <= 1e-12 * si.abs().max(1.0));
        }
    }
}

#[test]
fn product_of_unit_gaussians() {
    let a = GaussianComponent::isotropic(vec![0.0], 1.0);
    let b = GaussianComponent::isotropic(vec![2.0], 1.0);
    let p = product_gaussian(&a, &b).unwrap();
    assert!((p.mean[0] - 1.0).abs() < 1e-15);
    assert!((p.var[0] - 0.5).abs() < 1e-15);
}

#[test]
fn removal_of_c2_from_joint_recovers_c1() {
    let world = demo_world();
    let c1 = world.get(ConditionId::Label(0)).unwrap().components()[0].clone();
    let r = composed_target(&world, ManipulationMode::Removal, ConditionId::Label(2), ConditionId::Label(1)).unwrap();
    let r = &r.components()[0];
    for i in 0..2 {
        assert!((r.mean[i] - c1.mean[i]).abs() < 1e-12);
        assert!((r.var[i] - c1.var[i]).abs() < 1e-12);
    }
}

#[test]
fn joint_condition_has_expected_moments() {
    let world = demo_world();
    let joint = &world.get(ConditionId::Label(2)).unwrap().components()[0];
    assert!(joint.mean.iter().all(|m| m.abs() < 1e-12));
    assert!(joint.var.iter().all(|v| (v - 1.0 / 3.75).abs() < 1e-12));
}

#[test]
fn mixture_sources_have_no_closed_form_composition() {
    let world = scene_world();
    let (scene, c2) = (world.id_of("scene").unwrap(), world.id_of("c2").unwrap());
    assert!(composed_target(&world, ManipulationMode::Removal, scene, c2).is_err());
}
