//! Config-driven experiments: sweeps over guidance settings, metric tables,
//! heatmaps, training and the self-check suite.

mod check;
mod config;
mod run;

pub use check::{
    bayes_identity_error, check, projection_algebra_error, removal_mass_scan, scheduler_suite,
    score_identity_error, CheckItem, CheckReport, CheckStatus, ToleranceProfile,
};
pub use config::{
    ExperimentConfig, GuidanceSettings, OutputConfig, Reference, SamplerSettings, ScheduleConfig, Sweep,
    SweepAxis, SweepValue, TrainingSettings, WorldConfig, WorldPreset, WorldSource,
};
pub use run::{
    ablate, ablation_csv, metrics_csv, pgm_bytes, ranks, run, samples_csv, software_version,
    train_checkpoint, two_sigma_disc, Experiment, ReferenceTarget, RunPoint, RunRow, RunSummary,
    METRICS_HEADER,
};

/// Caps the worker pool at `GTF_THREADS` when it is set. Returns the cap.
pub fn configure_threads_from_env() -> crate::Result<Option<usize>> {
    let Ok(text) = std::env::var("GTF_THREADS") else {
        return Ok(None);
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::GtfError::InvalidRange(format!("GTF_THREADS must be a positive integer, got {text:?}")))?;
    #[cfg(feature = "parallel")]
    {
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(Some(n))
}
