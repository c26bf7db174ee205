//! Discrete diffusion machinery: the linear-beta noise schedule, forward
//! noising, the conditioned-denoiser interface and guided DDPM/DDIM samplers.
//!
//! Timestep convention: a *level* `t` in `0..=T` indexes `alpha_bar[t]`, with
//! `alpha_bar[0] = 1`. Denoisers, forward noising and the weight schedulers all
//! take levels. [`select_timesteps`] returns step indices `s` in `0..T`; step
//! `s` moves a chain from level `s + 1` down to the next selected level (or to
//! level 0 after the last step).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, GtfError, Result};
use crate::geometry::{
    assemble_bayes_guidance, assemble_guidance, CompositionRule, GuidanceDeltas,
    ManipulationMode, NoiseVector,
};
use crate::schedulers::{SchedulerKind, SchedulerSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `max_t` steps.
pub fn build_schedule(max_t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if max_t < 2 {
        return Err(GtfError::InvalidRange(format!("T must be >= 2, got {max_t}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(GtfError::InvalidRange(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} .. {beta_end}"
        )));
    }
    let step = (beta_end - beta_start) / (max_t - 1) as f64;
    let betas: Vec<f64> = (0..max_t)
        .map(|i| {
            if i + 1 == max_t {
                beta_end
            } else {
                beta_start + step * i as f64
            }
        })
        .collect();
    Ok(NoiseSchedule::from_betas(betas))
}

impl NoiseSchedule {
    fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Self { betas, alpha_bar }
    }

    /// Schedule from explicit betas; each must lie in (0, 1).
    pub fn with_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(GtfError::InvalidRange("need at least two betas".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(GtfError::InvalidRange("betas must lie in (0, 1)".into()));
        }
        Ok(Self::from_betas(betas))
    }

    pub fn max_t(&self) -> usize {
        self.betas.len()
    }

    /// Beta applied when moving from level `t - 1` to level `t` (`t >= 1`).
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar` for levels `0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Noise scale `sqrt(1 - alpha_bar[t])`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub(crate) fn check_level(&self, t: usize) -> Result<()> {
        if t > self.max_t() {
            return Err(GtfError::OutOfRange {
                what: "timestep",
                detail: format!("{t} not in [0, {}]", self.max_t()),
            });
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps`.
pub fn forward_noise(
    x0: &NoiseVector,
    t: usize,
    eps: &NoiseVector,
    sched: &NoiseSchedule,
) -> Result<NoiseVector> {
    sched.check_level(t)?;
    let a = sched.alpha_bar(t);
    x0.combine(a.sqrt(), eps, (1.0 - a).sqrt())
}

/// Conditioning token. `Unconditional` plays the role of the empty prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionId {
    Unconditional,
    Label(usize),
}

impl std::fmt::Display for ConditionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Unconditional => f.write_str("unconditional"),
            Self::Label(i) => write!(f, "#{i}"),
        }
    }
}

/// Noise predictor `eps(x_t, t, c)`.
///
/// Implementations must be deterministic and return vectors of the input
/// dimension; they are shared read-only across sampling threads.
pub trait ConditionedDenoiser: Sync {
    fn dim(&self) -> usize;

    fn predict(&self, x: &NoiseVector, t: usize, c: ConditionId) -> Result<NoiseVector>;
}

impl<D: ConditionedDenoiser + ?Sized> ConditionedDenoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(&self, x: &NoiseVector, t: usize, c: ConditionId) -> Result<NoiseVector> {
        (**self).predict(x, t, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Ddpm,
    #[default]
    Ddim,
}

impl SamplerMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ddpm => "ddpm",
            Self::Ddim => "ddim",
        }
    }
}

impl std::str::FromStr for SamplerMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(format!("unknown sampler method {other:?} (expected ddpm|ddim)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub method: SamplerMethod,
    pub ddim_eta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            method: SamplerMethod::Ddim,
            ddim_eta: 0.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > sched.max_t() {
            return Err(GtfError::InvalidRange(format!(
                "steps must lie in [1, {}], got {}",
                sched.max_t(),
                self.steps
            )));
        }
        if !(self.ddim_eta.is_finite() && self.ddim_eta >= 0.0) {
            return Err(GtfError::InvalidRange(format!(
                "ddim_eta must be non-negative, got {}",
                self.ddim_eta
            )));
        }
        Ok(())
    }
}

/// Guidance parameters consulted at every reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub mode: ManipulationMode,
    pub rule: CompositionRule,
    pub w1: f64,
    /// Base value `w0` of the scheduled target weight.
    pub w2: f64,
    pub scheduler: SchedulerKind,
    pub cfg_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: ManipulationMode::Addition,
            rule: CompositionRule::Projection,
            w1: 1.0,
            w2: 0.0,
            scheduler: SchedulerKind::Cosine,
            cfg_scale: 7.5,
        }
    }
}

impl GuidanceConfig {
    /// Plain classifier-free guidance on the source condition.
    pub fn cfg_only(cfg_scale: f64) -> Self {
        Self {
            cfg_scale,
            ..Self::default()
        }
    }

    pub fn weight_schedule(&self, max_t: usize) -> Result<SchedulerSpec> {
        SchedulerSpec::new(self.scheduler, self.w2, max_t)
    }
}

/// Uniformly spaced step indices from `T - 1` down to `0`.
pub fn select_timesteps(max_t: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > max_t {
        return Err(GtfError::InvalidRange(format!(
            "steps must lie in [1, {max_t}], got {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![max_t - 1]);
    }
    let span = max_t - 1;
    Ok((0..steps)
        .map(|i| span * (steps - 1 - i) / (steps - 1))
        .collect())
}

fn checked_predict<D: ConditionedDenoiser + ?Sized>(
    denoiser: &D,
    x: &NoiseVector,
    t: usize,
    c: ConditionId,
) -> Result<NoiseVector> {
    let out = denoiser.predict(x, t, c)?;
    ensure_same_dim(x.dim(), out.dim())?;
    if !out.is_finite() {
        return Err(GtfError::DenoiserFailure { t });
    }
    Ok(out)
}

/// Composed noise prediction at level `t`.
///
/// Issues exactly three denoiser calls (unconditional, source, target) and
/// uses the scheduled `w2(t)` inside the composition.
#[allow(clippy::too_many_arguments)]
pub fn guided_epsilon<D: ConditionedDenoiser + ?Sized>(
    x: &NoiseVector,
    t: usize,
    src: ConditionId,
    tgt: ConditionId,
    denoiser: &D,
    guidance: &GuidanceConfig,
    weights: &SchedulerSpec,
) -> Result<NoiseVector> {
    if src == ConditionId::Unconditional || tgt == ConditionId::Unconditional {
        return Err(GtfError::InvalidRange(
            "source and target conditions must not be unconditional".into(),
        ));
    }
    let uncond = checked_predict(denoiser, x, t, ConditionId::Unconditional)?;
    let eps_src = checked_predict(denoiser, x, t, src)?;
    let eps_tgt = checked_predict(denoiser, x, t, tgt)?;
    let deltas = GuidanceDeltas::from_predictions(uncond, &eps_src, &eps_tgt)?;
    match guidance.rule {
        CompositionRule::Projection => {
            let w2 = weights.evaluate(t)?;
            assemble_guidance(&deltas, guidance.mode, guidance.w1, w2, guidance.cfg_scale)
        }
        CompositionRule::Bayes => assemble_bayes_guidance(&deltas, guidance.mode, guidance.cfg_scale),
    }
}

/// Everything a reverse chain needs, validated once.
pub struct GuidedSampler<'a, D: ?Sized> {
    denoiser: &'a D,
    sched: &'a NoiseSchedule,
    config: SamplerConfig,
    guidance: GuidanceConfig,
    weights: SchedulerSpec,
    src: ConditionId,
    tgt: ConditionId,
    timesteps: Vec<usize>,
}

impl<'a, D: ConditionedDenoiser + ?Sized> GuidedSampler<'a, D> {
    pub fn new(
        denoiser: &'a D,
        sched: &'a NoiseSchedule,
        config: SamplerConfig,
        guidance: GuidanceConfig,
        src: ConditionId,
        tgt: ConditionId,
    ) -> Result<Self> {
        config.validate(sched)?;
        let weights = guidance.weight_schedule(sched.max_t())?;
        let timesteps = select_timesteps(sched.max_t(), config.steps)?;
        Ok(Self {
            denoiser,
            sched,
            config,
            guidance,
            weights,
            src,
            tgt,
            timesteps,
        })
    }

    /// Initial state of chain `chain` and that chain's private generator.
    pub fn chain_start(&self, chain: u64) -> (NoiseVector, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(chain);
        let x = (0..self.denoiser.dim())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        (NoiseVector::from_raw(x), rng)
    }

    /// Runs every reverse step starting from `x` at level `T`.
    pub fn denoise(&self, mut x: NoiseVector, rng: &mut ChaCha8Rng) -> Result<NoiseVector> {
        for (i, &step) in self.timesteps.iter().enumerate() {
            let level = step + 1;
            let prev = self.timesteps.get(i + 1).map_or(0, |s| s + 1);
            let eps = guided_epsilon(
                &x,
                level,
                self.src,
                self.tgt,
                self.denoiser,
                &self.guidance,
                &self.weights,
            )?;
            x = self.step(&x, &eps, level, prev, rng);
        }
        Ok(x)
    }

    fn step(
        &self,
        x: &NoiseVector,
        eps: &NoiseVector,
        level: usize,
        prev: usize,
        rng: &mut ChaCha8Rng,
    ) -> NoiseVector {
        let a = self.sched.alpha_bar(level);
        let a_prev = self.sched.alpha_bar(prev);
        let (sa, s1a) = (a.sqrt(), (1.0 - a).sqrt());
        let x0 = x.as_slice().iter().zip(eps.as_slice()).map(|(xi, ei)| (xi - s1a * ei) / sa);
        let out: Vec<f64> = match self.config.method {
            SamplerMethod::Ddim => {
                let sigma = self.config.ddim_eta
                    * ((1.0 - a_prev) / (1.0 - a) * (1.0 - a / a_prev)).sqrt();
                let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
                x0.zip(eps.as_slice())
                    .map(|(x0i, ei)| {
                        let mut v = a_prev.sqrt() * x0i + dir * ei;
                        if sigma > 0.0 {
                            let z: f64 = StandardNormal.sample(rng);
                            v += sigma * z;
                        }
                        v
                    })
                    .collect()
            }
            SamplerMethod::Ddpm => {
                // Posterior q(x_prev | x_t, x0) with the effective beta of the
                // (possibly skipped) transition.
                let beta = 1.0 - a / a_prev;
                let c0 = a_prev.sqrt() * beta / (1.0 - a);
                let ct = (1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a);
                let var = beta * (1.0 - a_prev) / (1.0 - a);
                x0.zip(x.as_slice())
                    .map(|(x0i, xi)| {
                        let mut v = c0 * x0i + ct * xi;
                        if var > 0.0 {
                            let z: f64 = StandardNormal.sample(rng);
                            v += var.sqrt() * z;
                        }
                        v
                    })
                    .collect()
            }
        };
        NoiseVector::from_raw(out)
    }

    pub fn run_chain(&self, chain: u64) -> Result<NoiseVector> {
        let (x, mut rng) = self.chain_start(chain);
        self.denoise(x, &mut rng)
    }

    /// Runs `n` independent chains; chain `i` draws from stream `i` of the seed.
    pub fn sample(&self, n: usize) -> Result<Vec<NoiseVector>> {
        if n == 0 {
            return Err(GtfError::InvalidRange("need at least one sample".into()));
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n as u64)
                .into_par_iter()
                .map(|i| self.run_chain(i))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n as u64).map(|i| self.run_chain(i)).collect()
        }
    }
}

/// Draws `n` guided samples; a pure function of the inputs and the seed.
#[allow(clippy::too_many_arguments)]
pub fn sample<D: ConditionedDenoiser + ?Sized>(
    denoiser: &D,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    guidance: &GuidanceConfig,
    src: ConditionId,
    tgt: ConditionId,
    n: usize,
) -> Result<Vec<NoiseVector>> {
    GuidedSampler::new(denoiser, sched, *sampler, *guidance, src, tgt)?.sample(n)
}
