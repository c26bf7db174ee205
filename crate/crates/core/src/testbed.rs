//! Closed-form conditional distributions with exact noised scores.
//!
//! Mixtures of diagonal Gaussians stay mixtures of diagonal Gaussians under
//! forward noising, so `eps(x_t, t, c) = -sigma_t * grad log p_t(x_t | c)` can
//! be evaluated exactly and used as a ground-truth denoiser.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{ConditionId, ConditionedDenoiser, NoiseSchedule};
use crate::error::{ensure_same_dim, GtfError, Result};
use crate::geometry::{ManipulationMode, NoiseVector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One weighted Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-coordinate variances.
    pub var: Vec<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let c = Self { weight, mean, var };
        c.validate()?;
        Ok(c)
    }

    /// Isotropic component `N(mean, var * I)` with unit weight.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        Self {
            weight: 1.0,
            mean,
            var: vec![var; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(GtfError::InvalidDim("component mean is empty".into()));
        }
        ensure_same_dim(self.mean.len(), self.var.len())?;
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(GtfError::InvalidRange(format!(
                "component weight must be positive, got {}",
                self.weight
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(GtfError::InvalidRange("component mean must be finite".into()));
        }
        if self.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GtfError::InvalidRange(
                "component variances must be positive".into(),
            ));
        }
        Ok(())
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mi), vi) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - mi;
            acc += d * d / vi + vi.ln() + LN_2PI;
        }
        -0.5 * acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GaussianComponent>", into = "Vec<GaussianComponent>")]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl TryFrom<Vec<GaussianComponent>> for GaussianMixture {
    type Error = GtfError;

    fn try_from(components: Vec<GaussianComponent>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<GaussianMixture> for Vec<GaussianComponent> {
    fn from(m: GaussianMixture) -> Self {
        m.components
    }
}

impl GaussianMixture {
    /// Validates the components and normalizes their weights to sum to one.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| GtfError::InvalidRange("mixture has no components".into()))?;
        let d = first.dim();
        for c in &components {
            c.validate()?;
            ensure_same_dim(d, c.dim())?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    pub fn single(component: GaussianComponent) -> Result<Self> {
        Self::new(vec![component])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }

    /// Full covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for c in &self.components {
            for i in 0..d {
                cov[i * d + i] += c.weight * c.var[i];
                for j in 0..d {
                    cov[i * d + j] += c.weight * (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
                }
            }
        }
        cov
    }

    /// Draws `n` samples: pick a component by weight, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = self.components.last().expect("non-empty");
                for c in &self.components {
                    acc += c.weight;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                chosen
                    .mean
                    .iter()
                    .zip(&chosen.var)
                    .map(|(m, v)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + v.sqrt() * z
                    })
                    .collect()
            })
            .collect()
    }

    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect()
    }
}

/// Mixture of `x_t = sqrt(a) x_0 + sqrt(1 - a) eps` when `x_0 ~ m`.
pub fn noised_mixture(m: &GaussianMixture, alpha_bar_t: f64) -> Result<GaussianMixture> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0) {
        return Err(GtfError::OutOfRange {
            what: "alpha_bar",
            detail: format!("{alpha_bar_t} not in (0, 1]"),
        });
    }
    let s = alpha_bar_t.sqrt();
    let components = m
        .components
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight,
            mean: c.mean.iter().map(|v| s * v).collect(),
            var: c.var.iter().map(|v| alpha_bar_t * v + (1.0 - alpha_bar_t)).collect(),
        })
        .collect();
    Ok(GaussianMixture { components })
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::MIN;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log sum_k w_k N(x; mu_k, Sigma_k)`, stabilized by the max shift.
pub fn log_density(m: &GaussianMixture, x: &[f64]) -> Result<f64> {
    ensure_same_dim(m.dim(), x.len())?;
    Ok(log_sum_exp(&m.log_terms(x)).max(f64::MIN))
}

/// Exact `grad_x log m(x)`.
pub fn score(m: &GaussianMixture, x: &[f64]) -> Result<Vec<f64>> {
    ensure_same_dim(m.dim(), x.len())?;
    let terms = m.log_terms(x);
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let resp: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = resp.iter().sum();
    let mut g = vec![0.0; x.len()];
    for (c, r) in m.components.iter().zip(&resp) {
        let r = r / total;
        for ((gi, xi), (mi, vi)) in g.iter_mut().zip(x).zip(c.mean.iter().zip(&c.var)) {
            *gi += r * (mi - xi) / vi;
        }
    }
    Ok(g)
}

/// Prior plus named conditional distributions over a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticWorld {
    prior: GaussianMixture,
    conditions: Vec<(String, GaussianMixture)>,
}

impl AnalyticWorld {
    pub fn new(prior: GaussianMixture, conditions: Vec<(String, GaussianMixture)>) -> Result<Self> {
        for (name, m) in &conditions {
            ensure_same_dim(prior.dim(), m.dim())?;
            if conditions.iter().filter(|(n, _)| n == name).count() > 1 {
                return Err(GtfError::InvalidRange(format!("duplicate condition {name:?}")));
            }
        }
        Ok(Self { prior, conditions })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn prior(&self) -> &GaussianMixture {
        &self.prior
    }

    pub fn conditions(&self) -> &[(String, GaussianMixture)] {
        &self.conditions
    }

    pub fn condition_names(&self) -> Vec<String> {
        self.conditions.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn id_of(&self, name: &str) -> Result<ConditionId> {
        self.conditions
            .iter()
            .position(|(n, _)| n == name)
            .map(ConditionId::Label)
            .ok_or_else(|| GtfError::UnknownCondition(name.to_string()))
    }

    pub fn get(&self, c: ConditionId) -> Result<&GaussianMixture> {
        match c {
            ConditionId::Unconditional => Ok(&self.prior),
            ConditionId::Label(i) => self
                .conditions
                .get(i)
                .map(|(_, m)| m)
                .ok_or_else(|| GtfError::UnknownCondition(c.to_string())),
        }
    }
}

/// `-sqrt(1 - alpha_bar[t]) * grad log p_t(x | c)` for the exact noised mixture.
pub fn exact_epsilon(
    world: &AnalyticWorld,
    sched: &NoiseSchedule,
    x: &NoiseVector,
    t: usize,
    c: ConditionId,
) -> Result<NoiseVector> {
    sched.check_level(t)?;
    let m = world.get(c)?;
    let a = sched.alpha_bar(t);
    let sigma = (1.0 - a).sqrt();
    let g = score(&noised_mixture(m, a)?, x.as_slice())?;
    Ok(NoiseVector::from_raw(g.into_iter().map(|v| -sigma * v).collect()))
}

/// Ground-truth denoiser backed by an [`AnalyticWorld`].
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    world: AnalyticWorld,
    sched: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(world: AnalyticWorld, sched: NoiseSchedule) -> Self {
        Self { world, sched }
    }

    pub fn world(&self) -> &AnalyticWorld {
        &self.world
    }
}

impl ConditionedDenoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn predict(&self, x: &NoiseVector, t: usize, c: ConditionId) -> Result<NoiseVector> {
        exact_epsilon(&self.world, &self.sched, x, t, c)
    }
}

/// Precision-weighted fusion of `(component, exponent)` factors, where an
/// exponent of `-1` divides by that density.
fn fuse(factors: &[(&GaussianComponent, f64)]) -> Result<GaussianComponent> {
    let d = factors[0].0.dim();
    for (c, _) in factors {
        ensure_same_dim(d, c.dim())?;
    }
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for i in 0..d {
        let (mut prec, mut eta) = (0.0, 0.0);
        for (c, s) in factors {
            prec += s / c.var[i];
            eta += s * c.mean[i] / c.var[i];
        }
        if prec.is_nan() || prec <= 0.0 {
            return Err(GtfError::IndefinitePrecision {
                coord: i,
                precision: prec,
            });
        }
        mean.push(eta / prec);
        var.push(1.0 / prec);
    }
    let weight = factors.iter().map(|(c, s)| c.weight.powf(*s)).product();
    Ok(GaussianComponent { weight, mean, var })
}

/// Product of two Gaussian densities; the weight is left unnormalized.
pub fn product_gaussian(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent> {
    fuse(&[(a, 1.0), (b, 1.0)])
}

/// Quotient `a / b`, valid only while the fused precision stays positive.
pub fn quotient_gaussian(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent> {
    fuse(&[(a, 1.0), (b, -1.0)])
}

fn single_component<'a>(m: &'a GaussianMixture, what: &str) -> Result<&'a GaussianComponent> {
    match m.components() {
        [c] => Ok(c),
        _ => Err(GtfError::UnsupportedComposition(format!(
            "{what} has {} components; closed-form composition needs single Gaussians",
            m.components().len()
        ))),
    }
}

/// Distribution the Bayes composition targets.
///
/// Addition: `p(x) * [p(x|src)/p(x)] * [p(x|tgt)/p(x)]`.
/// Removal (src is the joint condition): `p(x) * p(x|src) / p(x|tgt)`.
pub fn composed_target(
    world: &AnalyticWorld,
    mode: ManipulationMode,
    src: ConditionId,
    tgt: ConditionId,
) -> Result<GaussianMixture> {
    let prior = single_component(world.prior(), "prior")?;
    let s = single_component(world.get(src)?, "source condition")?;
    let t = single_component(world.get(tgt)?, "target condition")?;
    let fused = match mode {
        ManipulationMode::Addition => fuse(&[(s, 1.0), (t, 1.0), (prior, -1.0)])?,
        ManipulationMode::Removal => fuse(&[(prior, 1.0), (s, 1.0), (t, -1.0)])?,
    };
    GaussianMixture::single(GaussianComponent { weight: 1.0, ..fused })
}

/// Log of the unnormalized composed density at `x`; works for mixtures.
pub fn composed_log_density(
    world: &AnalyticWorld,
    mode: ManipulationMode,
    src: ConditionId,
    tgt: ConditionId,
    x: &[f64],
) -> Result<f64> {
    let lp = log_density(world.prior(), x)?;
    let ls = log_density(world.get(src)?, x)?;
    let lt = log_density(world.get(tgt)?, x)?;
    Ok(match mode {
        ManipulationMode::Addition => ls + lt - lp,
        ManipulationMode::Removal => lp + ls - lt,
    })
}

/// Two-dimensional reference world: a broad prior, two well-separated
/// conditions `c1`, `c2` and their Bayes-composed `joint`.
pub fn demo_world() -> AnalyticWorld {
    let prior = GaussianMixture::single(GaussianComponent::isotropic(vec![0.0, 0.0], 4.0))
        .expect("valid prior");
    let c1 = GaussianMixture::single(GaussianComponent::isotropic(vec![-2.0, 0.0], 0.5))
        .expect("valid c1");
    let c2 = GaussianMixture::single(GaussianComponent::isotropic(vec![2.0, 0.0], 0.5))
        .expect("valid c2");
    let partial = AnalyticWorld::new(
        prior.clone(),
        vec![("c1".into(), c1.clone()), ("c2".into(), c2.clone())],
    )
    .expect("consistent dims");
    let joint = composed_target(
        &partial,
        ManipulationMode::Addition,
        ConditionId::Label(0),
        ConditionId::Label(1),
    )
    .expect("positive precisions");
    AnalyticWorld::new(
        prior,
        vec![("c1".into(), c1), ("c2".into(), c2), ("joint".into(), joint)],
    )
    .expect("consistent dims")
}

/// Demo world plus a two-object `scene` condition: an equal mixture of
/// `c1` and `c2`. Removing `c2` from `scene` should leave `c1`.
pub fn scene_world() -> AnalyticWorld {
    let demo = demo_world();
    let mut conditions = demo.conditions().to_vec();
    let parts: Vec<GaussianComponent> = conditions[..2]
        .iter()
        .map(|(_, m)| GaussianComponent {
            weight: 0.5,
            ..m.components()[0].clone()
        })
        .collect();
    conditions.push(("scene".into(), GaussianMixture::new(parts).expect("valid scene")));
    AnalyticWorld::new(demo.prior().clone(), conditions).expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn iso(mean: &[f64], var: f64) -> GaussianComponent {
        GaussianComponent::isotropic(mean.to_vec(), var)
    }

    fn single(mean: &[f64], var: f64) -> GaussianMixture {
        GaussianMixture::single(iso(mean, var)).unwrap()
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![]).is_err());
        assert!(GaussianComponent::new(1.0, vec![0.0], vec![0.0]).is_err());
        assert!(GaussianComponent::new(0.0, vec![0.0], vec![1.0]).is_err());
        let m = GaussianMixture::new(vec![iso(&[0.0], 1.0), {
            let mut c = iso(&[1.0], 1.0);
            c.weight = 3.0;
            c
        }])
        .unwrap();
        let total: f64 = m.components().iter().map(|c| c.weight).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_eq!(m.components()[1].weight, 0.75);
    }

    #[test]
    fn noised_mixture_examples() {
        let m = single(&[2.0, 0.0], 0.25);
        assert_eq!(noised_mixture(&m, 1.0).unwrap(), m);

        let std = single(&[0.0, 0.0], 1.0);
        for a in [0.01, 0.3, 0.99] {
            let n = noised_mixture(&std, a).unwrap();
            assert_eq!(n.components()[0].mean, vec![0.0, 0.0]);
            for v in &n.components()[0].var {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
            }
        }

        let n = noised_mixture(&m, 0.25).unwrap();
        assert_eq!(n.components()[0].mean, vec![1.0, 0.0]);
        assert_eq!(n.components()[0].var, vec![0.8125, 0.8125]);
        assert!(noised_mixture(&m, 0.0).is_err());
    }

    #[test]
    fn log_density_examples() {
        let m = single(&[0.0], 1.0);
        assert_abs_diff_eq!(log_density(&m, &[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert_abs_diff_eq!(
            log_density(&m, &[3.0]).unwrap(),
            -0.918_938_533_204_672_7 - 4.5,
            epsilon = 1e-12
        );
        let twin = GaussianMixture::new(vec![iso(&[0.0], 1.0), iso(&[0.0], 1.0)]).unwrap();
        assert_abs_diff_eq!(
            log_density(&twin, &[0.7]).unwrap(),
            log_density(&m, &[0.7]).unwrap(),
            epsilon = 1e-12
        );
        let far = log_density(&m, &[1e200]).unwrap();
        assert!(far.is_finite() && far < -1e300);
    }

    #[test]
    fn score_examples() {
        let std = single(&[0.0, 0.0], 1.0);
        assert_eq!(score(&std, &[0.5, -2.0]).unwrap(), vec![-0.5, 2.0]);

        let g = single(&[1.0, -1.0], 0.25);
        let s = score(&g, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(s[0], 4.0);
        assert_relative_eq!(s[1], -4.0);

        let sym = GaussianMixture::new(vec![iso(&[-2.0, 0.0], 0.5), iso(&[2.0, 0.0], 0.5)]).unwrap();
        let s = score(&sym, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_epsilon_examples() {
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let world = AnalyticWorld::new(single(&[0.0, 0.0], 1.0), vec![]).unwrap();
        let x = NoiseVector::new(vec![0.3, -1.1]).unwrap();
        let e = exact_epsilon(&world, &sched, &x, 400, ConditionId::Unconditional).unwrap();
        let sigma = sched.sigma(400);
        assert_relative_eq!(e.as_slice()[0], sigma * 0.3, max_relative = 1e-12);
        assert_relative_eq!(e.as_slice()[1], sigma * -1.1, max_relative = 1e-12);

        let e = exact_epsilon(&world, &sched, &x, 0, ConditionId::Unconditional).unwrap();
        assert_eq!(e.norm(), 0.0);
        assert!(matches!(
            exact_epsilon(&world, &sched, &x, 10, ConditionId::Label(0)),
            Err(GtfError::UnknownCondition(_))
        ));
    }

    #[test]
    fn product_examples() {
        let p = product_gaussian(&iso(&[0.0], 1.0), &iso(&[2.0], 1.0)).unwrap();
        assert_eq!((p.mean[0], p.var[0]), (1.0, 0.5));

        let p = product_gaussian(&iso(&[1.5], 0.3), &iso(&[1.5], 0.3)).unwrap();
        assert_relative_eq!(p.mean[0], 1.5);
        assert_relative_eq!(p.var[0], 0.15);

        // p(x|c1) p(x|c2) / p(x) with p = N(0, 4), c1 = N(1, 1), c2 = N(-1, 1).
        let pq = fuse(&[(&iso(&[1.0], 1.0), 1.0), (&iso(&[-1.0], 1.0), 1.0), (&iso(&[0.0], 4.0), -1.0)])
            .unwrap();
        assert_relative_eq!(1.0 / pq.var[0], 1.75);
        assert_abs_diff_eq!(pq.mean[0], 0.0);

        let err = quotient_gaussian(&iso(&[0.0], 2.0), &iso(&[0.0], 1.0)).unwrap_err();
        assert!(matches!(err, GtfError::IndefinitePrecision { .. }));
    }

    #[test]
    fn composed_target_examples() {
        let world = demo_world();
        let (c1, c2, joint) = (
            world.id_of("c1").unwrap(),
            world.id_of("c2").unwrap(),
            world.id_of("joint").unwrap(),
        );
        let j = &world.get(joint).unwrap().components()[0];
        assert_relative_eq!(1.0 / j.var[0], 3.75, max_relative = 1e-14);
        assert_abs_diff_eq!(j.mean[0], 0.0);

        let back = composed_target(&world, ManipulationMode::Removal, joint, c2).unwrap();
        let c1m = world.get(c1).unwrap();
        for (a, b) in back.components()[0].mean.iter().zip(&c1m.components()[0].mean) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in back.components()[0].var.iter().zip(&c1m.components()[0].var) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }

        // Self-composition sharpens to precision 2 * 2 - 0.25.
        let same = composed_target(&world, ManipulationMode::Addition, c1, c1).unwrap();
        assert_relative_eq!(1.0 / same.components()[0].var[0], 3.75, max_relative = 1e-14);
        assert_relative_eq!(same.components()[0].mean[0], -2.0 * 2.0 * 2.0 / 3.75, max_relative = 1e-14);

        let mix = AnalyticWorld::new(
            world.prior().clone(),
            vec![(
                "m".into(),
                GaussianMixture::new(vec![iso(&[0.0, 0.0], 1.0), iso(&[1.0, 0.0], 1.0)]).unwrap(),
            )],
        )
        .unwrap();
        let err = composed_target(
            &mix,
            ManipulationMode::Addition,
            ConditionId::Label(0),
            ConditionId::Label(0),
        )
        .unwrap_err();
        assert!(matches!(err, GtfError::UnsupportedComposition(_)));
    }

    #[test]
    fn mixture_moments() {
        let m = GaussianMixture::new(vec![iso(&[-1.0, 0.0], 0.5), iso(&[1.0, 2.0], 0.5)]).unwrap();
        assert_eq!(m.mean(), vec![0.0, 1.0]);
        let c = m.covariance();
        assert_relative_eq!(c[0], 1.5);
        assert_relative_eq!(c[3], 1.5);
        assert_relative_eq!(c[1], 1.0);
        assert_relative_eq!(c[2], 1.0);
    }
}
