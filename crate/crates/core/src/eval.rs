//! Distributional metrics for checking guided samples against their targets:
//! 2-D grid densities and histograms, grid KL, sliced Wasserstein distance
//! and moment errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GtfError, Result};
use crate::testbed::{log_density, GaussianMixture};

/// Additive smoothing applied to both grids before taking logs.
pub const KL_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(6.0, 64)
    }
}

impl GridSpec {
    pub fn square(half_width: f64, resolution: usize) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(GtfError::InvalidRange("grid bounds must be finite and ordered".into()));
        }
        if self.resolution < 8 {
            return Err(GtfError::InvalidRange(format!(
                "grid resolution must be >= 8, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.resolution as f64
    }

    fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Center of cell `(ix, iy)`; `iy = 0` is the bottom row.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.x_min + (ix as f64 + 0.5) * self.dx(),
            self.y_min + (iy as f64 + 0.5) * self.dy(),
        ]
    }

    /// Cell holding `p`, clamped to the border; the flag is set when clamping
    /// was needed.
    pub fn locate(&self, p: [f64; 2]) -> (usize, usize, bool) {
        let n = self.resolution as f64;
        let fx = ((p[0] - self.x_min) / self.dx()).floor();
        let fy = ((p[1] - self.y_min) / self.dy()).floor();
        let clamped = !(fx >= 0.0 && fx < n && fy >= 0.0 && fy < n);
        let ix = fx.clamp(0.0, n - 1.0) as usize;
        let iy = fy.clamp(0.0, n - 1.0) as usize;
        (ix, iy, clamped)
    }
}

/// Normalized cell probabilities, row-major from the bottom row up.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    spec: GridSpec,
    probs: Vec<f64>,
}

impl Grid2D {
    fn normalized(spec: GridSpec, mut probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(GtfError::InvalidRange("grid has no mass to normalize".into()));
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self { spec, probs })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.probs[iy * self.spec.resolution + ix]
    }

    fn cells(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        let n = self.spec.resolution;
        self.probs
            .iter()
            .enumerate()
            .map(move |(k, &p)| (self.spec.center(k % n, k / n), p))
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (c, p) in self.cells() {
            m[0] += p * c[0];
            m[1] += p * c[1];
        }
        m
    }

    /// Shannon entropy of the cell probabilities (nats).
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Mass inside the disc of `radius` around `center`, by cell centers.
    pub fn mass_within(&self, center: [f64; 2], radius: f64) -> f64 {
        self.cells()
            .filter(|(c, _)| (c[0] - center[0]).hypot(c[1] - center[1]) <= radius)
            .map(|(_, p)| p)
            .sum()
    }

    /// Grid conditioned on the cells whose centers satisfy `keep`.
    pub fn restricted(&self, keep: impl Fn([f64; 2]) -> bool) -> Result<Self> {
        let probs = self
            .cells()
            .map(|(c, p)| if keep(c) { p } else { 0.0 })
            .collect();
        Self::normalized(self.spec, probs)
    }

    /// Draws points: a cell by probability, then uniform inside it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let res = self.spec.resolution;
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1);
                let [cx, cy] = self.spec.center(k % res, k / res);
                let jx: f64 = rng.random::<f64>() - 0.5;
                let jy: f64 = rng.random::<f64>() - 0.5;
                vec![cx + jx * self.spec.dx(), cy + jy * self.spec.dy()]
            })
            .collect()
    }
}

/// Grid from a log-density evaluated at cell centers.
pub fn log_density_grid(spec: &GridSpec, log_density: impl Fn(&[f64]) -> Result<f64>) -> Result<Grid2D> {
    spec.validate()?;
    let n = spec.resolution;
    let mut logs = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            logs.push(log_density(&spec.center(ix, iy))?);
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let area = spec.cell_area();
    let probs = logs.iter().map(|l| (l - max).exp() * area).collect();
    Grid2D::normalized(*spec, probs)
}

/// Cell mass = density at the center times the cell area, renormalized.
pub fn density_grid(m: &GaussianMixture, spec: &GridSpec) -> Result<Grid2D> {
    if m.dim() != 2 {
        return Err(GtfError::DimensionUnsupported(m.dim()));
    }
    log_density_grid(spec, |x| log_density(m, x))
}

/// Normalized 2-D histogram and the number of samples clamped into border cells.
pub fn histogram_grid<S: AsRef<[f64]>>(samples: &[S], spec: &GridSpec) -> Result<(Grid2D, usize)> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(GtfError::InvalidRange("histogram needs at least one sample".into()));
    }
    let n = spec.resolution;
    let mut counts = vec![0.0; n * n];
    let mut clamped = 0;
    for s in samples {
        let s = s.as_ref();
        if s.len() != 2 {
            return Err(GtfError::DimensionUnsupported(s.len()));
        }
        let (ix, iy, c) = spec.locate([s[0], s[1]]);
        counts[iy * n + ix] += 1.0;
        clamped += usize::from(c);
    }
    Ok((Grid2D::normalized(*spec, counts)?, clamped))
}

/// `sum p log(p / q)` after both grids receive additive smoothing
/// [`KL_SMOOTHING`] and renormalization, so `grid_kl(p, p) == 0` exactly.
pub fn grid_kl(p: &Grid2D, q: &Grid2D) -> Result<f64> {
    if p.spec != q.spec {
        return Err(GtfError::SpecMismatch);
    }
    let norm = 1.0 + KL_SMOOTHING * q.probs.len() as f64;
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(pi, qi)| {
            let ps = (pi + KL_SMOOTHING) / norm;
            let qs = (qi + KL_SMOOTHING) / norm;
            ps * (ps / qs).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

/// One-dimensional W1 between two empirical distributions given sorted values.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Random unit directions in `dim` dimensions, reproducible from `seed`.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn sorted_projection<S: AsRef<[f64]>>(samples: &[S], dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = samples
        .iter()
        .map(|s| s.as_ref().iter().zip(dir).map(|(x, d)| x * d).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Mean over seeded random directions of the 1-D W1 distance between the
/// projected sample sets.
pub fn sliced_wasserstein<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    a: &[A],
    b: &[B],
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GtfError::InvalidRange("sliced Wasserstein needs non-empty sets".into()));
    }
    if n_projections == 0 {
        return Err(GtfError::InvalidRange("need at least one projection".into()));
    }
    let dim = a[0].as_ref().len();
    if a.iter().any(|s| s.as_ref().len() != dim) || b.iter().any(|s| s.as_ref().len() != dim) {
        return Err(GtfError::DimensionMismatch {
            expected: dim,
            found: b[0].as_ref().len(),
        });
    }
    let dirs = random_directions(dim, n_projections, seed);
    let total: f64 = dirs
        .iter()
        .map(|d| wasserstein_1d(&sorted_projection(a, d), &sorted_projection(b, d)))
        .sum();
    Ok(total / n_projections as f64)
}

pub fn sample_mean<S: AsRef<[f64]>>(samples: &[S]) -> Vec<f64> {
    let d = samples[0].as_ref().len();
    let mut m = vec![0.0; d];
    for s in samples {
        for (mi, x) in m.iter_mut().zip(s.as_ref()) {
            *mi += x;
        }
    }
    let n = samples.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Unbiased sample covariance, row-major; `None` with fewer than two samples.
pub fn sample_covariance<S: AsRef<[f64]>>(samples: &[S]) -> Option<Vec<f64>> {
    if samples.len() < 2 {
        return None;
    }
    let mean = sample_mean(samples);
    let d = mean.len();
    let mut c = vec![0.0; d * d];
    for s in samples {
        let s = s.as_ref();
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    let n = (samples.len() - 1) as f64;
    c.iter_mut().for_each(|v| *v /= n);
    Some(c)
}

/// Fraction of samples within `radius` of `center`.
pub fn fraction_within<S: AsRef<[f64]>>(samples: &[S], center: &[f64], radius: f64) -> f64 {
    let inside = samples
        .iter()
        .filter(|s| {
            let d2: f64 = s.as_ref().iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
            d2 <= radius * radius
        })
        .count();
    inside as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    /// Sample mean minus target mean.
    pub mean_error: Vec<f64>,
    /// Frobenius norm of the covariance difference; `None` when the sample
    /// covariance is undefined.
    pub cov_error: Option<f64>,
}

impl MomentReport {
    pub fn mean_error_inf(&self) -> f64 {
        self.mean_error.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sample mean and covariance against the exact mixture moments.
pub fn moment_report<S: AsRef<[f64]>>(samples: &[S], target: &GaussianMixture) -> Result<MomentReport> {
    if samples.is_empty() {
        return Err(GtfError::InvalidRange("moment report needs samples".into()));
    }
    let d = target.dim();
    if samples.iter().any(|s| s.as_ref().len() != d) {
        return Err(GtfError::DimensionMismatch {
            expected: d,
            found: samples[0].as_ref().len(),
        });
    }
    moments_against(samples, &target.mean(), &target.covariance())
}

pub(crate) fn moments_against<S: AsRef<[f64]>>(
    samples: &[S],
    mean: &[f64],
    cov: &[f64],
) -> Result<MomentReport> {
    let mean_error = sample_mean(samples)
        .iter()
        .zip(mean)
        .map(|(a, b)| a - b)
        .collect();
    let cov_error = sample_covariance(samples).map(|c| {
        c.iter()
            .zip(cov)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    });
    Ok(MomentReport { mean_error, cov_error })
}

/// Grid moments (mean, covariance) from cell centers.
pub fn grid_moments(grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let m = grid.mean();
    let mut c = vec![0.0; 4];
    for (p, w) in grid.cells() {
        let d = [p[0] - m[0], p[1] - m[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i * 2 + j] += w * d[i] * d[j];
            }
        }
    }
    (m.to_vec(), c)
}

/// Everything reported for one guided run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// `None` outside two dimensions.
    pub grid_kl: Option<f64>,
    pub sliced_wasserstein: f64,
    pub mean_error: Vec<f64>,
    pub cov_error: Option<f64>,
    pub clamped_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::GaussianComponent;
    use approx::assert_abs_diff_eq;

    fn std_normal() -> GaussianMixture {
        GaussianMixture::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0)).unwrap()
    }

    #[test]
    fn density_grid_of_standard_normal() {
        let spec = GridSpec::square(5.0, 200);
        let g = density_grid(&std_normal(), &spec).unwrap();
        assert_abs_diff_eq!(g.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let max = g.probs().iter().copied().fold(0.0, f64::max);
        for (ix, iy) in [(99, 99), (100, 100), (99, 100), (100, 99)] {
            assert_abs_diff_eq!(g.at(ix, iy), max, epsilon = 1e-15);
        }
        let m = g.mean();
        assert!(m[0].abs() < 1e-3 && m[1].abs() < 1e-3);
    }

    #[test]
    fn density_grid_far_component_sits_on_edge() {
        let far = GaussianMixture::single(GaussianComponent::isotropic(vec![40.0, 0.0], 1.0)).unwrap();
        let spec = GridSpec::square(5.0, 32);
        let g = density_grid(&far, &spec).unwrap();
        assert_abs_diff_eq!(g.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let edge: f64 = (0..32).map(|iy| g.at(31, iy)).sum();
        assert!(edge > 0.99);
    }

    #[test]
    fn density_grid_rejects_other_dimensions() {
        let m = GaussianMixture::single(GaussianComponent::isotropic(vec![0.0; 3], 1.0)).unwrap();
        assert_eq!(density_grid(&m, &GridSpec::default()), Err(GtfError::DimensionUnsupported(3)));
        assert!(density_grid(&std_normal(), &GridSpec::square(5.0, 4)).is_err());
    }

    #[test]
    fn histogram_examples() {
        let spec = GridSpec::square(5.0, 10);
        let pts = vec![vec![0.1, 0.2]; 7];
        let (g, clamped) = histogram_grid(&pts, &spec).unwrap();
        assert_eq!(clamped, 0);
        assert_eq!(g.at(5, 5), 1.0);
        assert_eq!(g.probs().iter().filter(|&&p| p == 0.0).count(), 99);

        let (g, clamped) = histogram_grid(&[vec![100.0, -100.0], vec![0.0, 0.0]], &spec).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(g.at(9, 0), 0.5);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(histogram_grid(&empty, &spec).is_err());
    }

    #[test]
    fn kl_examples() {
        let spec = GridSpec::square(6.0, 64);
        let p = density_grid(&std_normal(), &spec).unwrap();
        assert_eq!(grid_kl(&p, &p).unwrap(), 0.0);

        let (a, _) = histogram_grid(&[vec![-5.9, -5.9]], &spec).unwrap();
        let (b, _) = histogram_grid(&[vec![5.9, 5.9]], &spec).unwrap();
        let kl = grid_kl(&a, &b).unwrap();
        assert!(kl.is_finite() && kl > 10.0);
        assert!(kl <= (1.0 / KL_SMOOTHING).ln() + 1e-3);

        let other = density_grid(&std_normal(), &GridSpec::square(5.0, 64)).unwrap();
        assert_eq!(grid_kl(&p, &other), Err(GtfError::SpecMismatch));
    }

    #[test]
    fn wasserstein_1d_basics() {
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
        assert_abs_diff_eq!(wasserstein_1d(&[0.0, 1.0], &[2.0, 3.0]), 2.0, epsilon = 1e-15);
        // Unequal sizes: {0} vs {0, 2} moves half the mass by 2.
        assert_abs_diff_eq!(wasserstein_1d(&[0.0], &[0.0, 2.0]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sliced_wasserstein_basics() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.5]];
        assert_eq!(sliced_wasserstein(&a, &a, 16, 1).unwrap(), 0.0);
        let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + 0.7, p[1]]).collect();
        let ab = sliced_wasserstein(&a, &b, 64, 3).unwrap();
        let ba = sliced_wasserstein(&b, &a, 64, 3).unwrap();
        assert_eq!(ab, ba);
        assert!(ab <= 0.7 + 1e-12);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(sliced_wasserstein(&a, &empty, 4, 0).is_err());
        assert!(sliced_wasserstein(&a, &a, 0, 0).is_err());
    }

    #[test]
    fn moment_report_single_sample() {
        let r = moment_report(&[vec![1.0, -0.5]], &std_normal()).unwrap();
        assert_eq!(r.mean_error, vec![1.0, -0.5]);
        assert_eq!(r.cov_error, None);
        assert_eq!(r.mean_error_inf(), 1.0);
    }

    #[test]
    fn restriction_and_mass() {
        let spec = GridSpec::square(6.0, 64);
        let g = density_grid(&std_normal(), &spec).unwrap();
        let left = g.restricted(|c| c[0] < 0.0).unwrap();
        assert_abs_diff_eq!(left.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(left.mean()[0] < -0.7);
        assert_abs_diff_eq!(g.mass_within([0.0, 0.0], 20.0), 1.0, epsilon = 1e-12);
        assert!(g.entropy() > 0.0);
    }
}
