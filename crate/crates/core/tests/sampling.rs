use gtf_core::eval::{sample_covariance, sample_mean};
use gtf_core::{
    build_schedule, demo_world, sample, select_timesteps, AnalyticDenoiser, AnalyticWorld, CompositionRule,
    ConditionId, GaussianComponent, GaussianMixture, GuidanceConfig, ManipulationMode, NoiseSchedule, NoiseVector,
    SamplerConfig, SamplerMethod,
};

fn schedule() -> NoiseSchedule {
    build_schedule(1000, 1e-4, 0.02).unwrap()
}

fn moments(xs: &[NoiseVector]) -> (Vec<f64>, Vec<f64>) {
    let pts: Vec<&[f64]> = xs.iter().map(NoiseVector::as_slice).collect();
    (sample_mean(&pts), sample_covariance(&pts).unwrap())
}

/// Per-axis `(slope, intercept)` of the exact noise prediction for an
/// isotropic Gaussian noised to `alpha_bar`.
fn affine_eps(mean: f64, var: f64, alpha_bar: f64) -> (f64, f64) {
    let sigma = (1.0 - alpha_bar).sqrt();
    let v = alpha_bar * var + 1.0 - alpha_bar;
    (sigma / v, -sigma * alpha_bar.sqrt() * mean / v)
}

/// Mean and variance of one axis after deterministic DDIM, propagated in
/// closed form through the affine composed field. `terms` lists
/// `(sign, mean, var)` of the Gaussians whose predictions are summed.
fn ddim_recursion(sched: &NoiseSchedule, steps: usize, terms: &[(f64, f64, f64)]) -> (f64, f64) {
    let ts = select_timesteps(sched.max_t(), steps).unwrap();
    let (mut m, mut v) = (0.0, 1.0);
    for (i, &s) in ts.iter().enumerate() {
        let level = s + 1;
        let prev = ts.get(i + 1).map_or(0, |p| p + 1);
        let (a, ap) = (sched.alpha_bar(level), sched.alpha_bar(prev));
        let (mut k, mut b) = (0.0, 0.0);
        for &(sign, mu, var) in terms {
            let (ki, bi) = affine_eps(mu, var, a);
            k += sign * ki;
            b += sign * bi;
        }
        // x' = sqrt(ap) * (x - sigma * eps) / sqrt(a) + sqrt(1 - ap) * eps
        let c_x = ap.sqrt() / a.sqrt();
        let c_e = (1.0 - ap).sqrt() - ap.sqrt() * (1.0 - a).sqrt() / a.sqrt();
        let slope = c_x + c_e * k;
        let shift = c_e * b;
        m = slope * m + shift;
        v *= slope * slope;
    }
    (m, v)
}

#[test]
fn standard_normal_world_samples_standard_normal() {
    let std = GaussianMixture::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0)).unwrap();
    let world = AnalyticWorld::new(std.clone(), vec![("n".into(), std)]).unwrap();
    let sched = schedule();
    let den = AnalyticDenoiser::new(world, sched.clone());
    let c = ConditionId::Label(0);
    let cfg = SamplerConfig {
        steps: 100,
        seed: 21,
        ..SamplerConfig::default()
    };
    let xs = sample(&den, &sched, &cfg, &GuidanceConfig::cfg_only(1.0), c, c, 20_000).unwrap();
    let (m, cov) = moments(&xs);
    assert!(m.iter().all(|v| v.abs() < 0.05), "{m:?}");
    assert!((cov[0] - 1.0).abs() < 0.05 && (cov[3] - 1.0).abs() < 0.05, "{cov:?}");
    assert!(cov[1].abs() < 0.05);
}

#[test]
fn both_samplers_recover_a_single_condition() {
    let world = demo_world();
    let sched = schedule();
    let den = AnalyticDenoiser::new(world, sched.clone());
    let (c1, c2) = (ConditionId::Label(0), ConditionId::Label(1));
    for method in [SamplerMethod::Ddim, SamplerMethod::Ddpm] {
        let cfg = SamplerConfig {
            steps: 200,
            method,
            seed: 22,
            ..SamplerConfig::default()
        };
        let xs = sample(&den, &sched, &cfg, &GuidanceConfig::cfg_only(1.0), c1, c2, 20_000).unwrap();
        let (m, cov) = moments(&xs);
        assert!((m[0] + 2.0).abs() < 0.05 && m[1].abs() < 0.05, "{method:?} {m:?}");
        assert!((cov[0] - 0.5).abs() < 0.05 && (cov[3] - 0.5).abs() < 0.05, "{method:?} {cov:?}");
    }
}

#[test]
fn bayes_addition_follows_its_closed_form_recursion() {
    let world = demo_world();
    let sched = schedule();
    let den = AnalyticDenoiser::new(world, sched.clone());
    let (c1, c2) = (ConditionId::Label(0), ConditionId::Label(1));
    let guidance = GuidanceConfig {
        rule: CompositionRule::Bayes,
        cfg_scale: 1.0,
        ..GuidanceConfig::default()
    };
    let steps = 200;
    let cfg = SamplerConfig {
        steps,
        seed: 23,
        ..SamplerConfig::default()
    };
    let n = 20_000;
    let xs = sample(&den, &sched, &cfg, &guidance, c1, c2, n).unwrap();
    let (m, cov) = moments(&xs);
    // e(c1) + e(c2) - e(0), axis by axis.
    let x_axis = ddim_recursion(&sched, steps, &[(1.0, -2.0, 0.5), (1.0, 2.0, 0.5), (-1.0, 0.0, 4.0)]);
    let y_axis = ddim_recursion(&sched, steps, &[(1.0, 0.0, 0.5), (1.0, 0.0, 0.5), (-1.0, 0.0, 4.0)]);
    for (i, (pm, pv)) in [x_axis, y_axis].into_iter().enumerate() {
        assert!((m[i] - pm).abs() < 5.0 * (pv / n as f64).sqrt() + 1e-9, "axis {i}: {} vs {pm}", m[i]);
        assert!((cov[i * 3] - pv).abs() < 0.05 * pv, "axis {i}: {} vs {pv}", cov[i * 3]);
    }
    // The composed field contracts harder than the product target
    // N(0, I / 3.75): composing noised scores is not noising the product.
    assert!(x_axis.1 < 0.5 / 3.75, "predicted variance {}", x_axis.1);
}

#[test]
fn exact_conditional_field_recursion_lands_on_the_condition() {
    let sched = schedule();
    let (m, v) = ddim_recursion(&sched, 200, &[(1.0, -2.0, 0.5)]);
    // Only the discretization error of 200 deterministic steps remains.
    assert!((m + 2.0).abs() < 0.02, "{m}");
    assert!((v - 0.5).abs() < 0.02, "{v}");
}

#[test]
fn removal_of_c2_from_joint_keeps_its_recursion_shape() {
    let world = demo_world();
    let sched = schedule();
    let den = AnalyticDenoiser::new(world, sched.clone());
    let (c2, joint) = (ConditionId::Label(1), ConditionId::Label(2));
    let guidance = GuidanceConfig {
        mode: ManipulationMode::Removal,
        rule: CompositionRule::Bayes,
        cfg_scale: 1.0,
        ..GuidanceConfig::default()
    };
    let steps = 200;
    let cfg = SamplerConfig {
        steps,
        seed: 24,
        ..SamplerConfig::default()
    };
    let n = 20_000;
    let xs = sample(&den, &sched, &cfg, &guidance, joint, c2, n).unwrap();
    let (m, cov) = moments(&xs);
    let jv = 1.0 / 3.75;
    let x_axis = ddim_recursion(&sched, steps, &[(1.0, 0.0, jv), (-1.0, 2.0, 0.5), (1.0, 0.0, 4.0)]);
    assert!((m[0] - x_axis.0).abs() < 5.0 * (x_axis.1 / n as f64).sqrt(), "{} vs {}", m[0], x_axis.0);
    assert!((cov[0] - x_axis.1).abs() < 0.05 * x_axis.1, "{} vs {}", cov[0], x_axis.1);
}

#[test]
fn samples_depend_only_on_seed() {
    let world = demo_world();
    let sched = schedule();
    let den = AnalyticDenoiser::new(world, sched.clone());
    let (c1, c2) = (ConditionId::Label(0), ConditionId::Label(1));
    let guidance = GuidanceConfig {
        w2: 0.5,
        ..GuidanceConfig::default()
    };
    let run = |seed| {
        let cfg = SamplerConfig {
            steps: 20,
            method: SamplerMethod::Ddpm,
            seed,
            ..SamplerConfig::default()
        };
        sample(&den, &sched, &cfg, &guidance, c1, c2, 64).unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}
