//! Training-free guidance composition in noise space.
//!
//! The crate combines conditional noise predictions of a diffusion model
//! geometrically (projection-based semantic addition and removal), schedules
//! the target weight over time, and ships the pieces needed to check the
//! result: closed-form Gaussian-mixture worlds, a small trainable denoiser,
//! distributional metrics and an experiment runner.

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod mlp;
pub mod schedulers;
pub mod testbed;

pub use diffusion::{
    build_schedule, forward_noise, guided_epsilon, sample, select_timesteps, ConditionId,
    ConditionedDenoiser, GuidanceConfig, GuidedSampler, NoiseSchedule, SamplerConfig,
    SamplerMethod,
};
pub use error::{GtfError, Result};
pub use eval::{
    density_grid, grid_kl, histogram_grid, moment_report, sliced_wasserstein, Grid2D, GridSpec, MetricReport,
};
pub use experiment::{ExperimentConfig, ToleranceProfile};
pub use geometry::{
    assemble_bayes_guidance, assemble_guidance, compose_addition, compose_bayes_addition,
    compose_bayes_removal, compose_removal, project, CompositionRule, GuidanceDeltas,
    ManipulationMode, NoiseVector, Projection,
};
pub use mlp::{gradient_check, train, Mlp, MlpSpec, TrainConfig, TrainReport};
pub use schedulers::{SchedulerKind, SchedulerSpec};
pub use testbed::{
    composed_target, demo_world, scene_world, exact_epsilon, log_density, noised_mixture, product_gaussian,
    score, AnalyticDenoiser, AnalyticWorld, GaussianComponent, GaussianMixture,
};
