//! Executing experiments and writing their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, Reference, Sweep, SweepAxis, SweepValue};
use crate::diffusion::{ConditionId, ConditionedDenoiser, GuidanceConfig, GuidedSampler, NoiseSchedule, SamplerConfig};
use crate::error::{GtfError, Result};
use crate::eval::{
    density_grid, fraction_within, grid_kl, grid_moments, histogram_grid, log_density_grid, moment_report,
    moments_against, sliced_wasserstein, Grid2D, GridSpec, MetricReport,
};
use crate::geometry::NoiseVector;
use crate::mlp::{train, Mlp, MlpSpec, OutputInit, TrainReport};
use crate::testbed::{composed_log_density, composed_target, AnalyticDenoiser, AnalyticWorld, GaussianMixture};

pub const METRICS_HEADER: &str =
    "run_id,mode,w1,w2_base,scheduler,cfg,steps,grid_kl,sliced_w,mean_err,cov_err,clamped_count";

/// Version string recorded in every manifest.
pub fn software_version() -> String {
    format!("gtf {}", env!("CARGO_PKG_VERSION"))
}

/// Scoring target of an experiment.
pub enum ReferenceTarget {
    /// Closed-form mixture: exact moments, exact samples.
    Mixture(GaussianMixture),
    /// Unnormalized density tabulated on the grid (mixture compositions).
    Density(Grid2D),
}

impl ReferenceTarget {
    fn grid(&self, spec: &GridSpec) -> Result<Option<Grid2D>> {
        match self {
            ReferenceTarget::Mixture(m) if m.dim() == 2 => density_grid(m, spec).map(Some),
            ReferenceTarget::Mixture(_) => Ok(None),
            ReferenceTarget::Density(g) => Ok(Some(g.clone())),
        }
    }

    fn samples(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        match self {
            ReferenceTarget::Mixture(m) => m.sample(n, &mut rng),
            ReferenceTarget::Density(g) => g.sample(n, &mut rng),
        }
    }
}

/// Mass of the disc of radius `2 sigma` around the mean of `m`, where
/// `sigma^2` is the average per-axis variance.
pub fn two_sigma_disc(m: &GaussianMixture) -> (Vec<f64>, f64) {
    let d = m.dim();
    let cov = m.covariance();
    let avg_var = (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
    (m.mean(), 2.0 * avg_var.sqrt())
}

/// One point of a sweep, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPoint {
    pub run_id: String,
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub point: RunPoint,
    pub report: MetricReport,
    /// Negative Shannon entropy of the sample histogram (sharpness proxy).
    pub neg_entropy: f64,
    /// Sample fraction inside the target condition's two-sigma disc.
    pub tgt_mass: f64,
}

impl RunRow {
    pub fn csv_line(&self) -> String {
        let g = &self.point.guidance;
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.point.run_id,
            g.mode.as_str(),
            g.w1,
            g.w2,
            g.scheduler.as_str(),
            g.cfg_scale,
            self.point.sampler.steps,
            r.grid_kl.map_or(String::new(), |v| v.to_string()),
            r.sliced_wasserstein,
            r.mean_error.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            r.cov_error.map_or(String::new(), |v| v.to_string()),
            r.clamped_count,
        )
    }
}

/// A loaded experiment: world, schedule, denoiser and reference.
pub struct Experiment {
    config: ExperimentConfig,
    world: AnalyticWorld,
    sched: NoiseSchedule,
    denoiser: Box<dyn ConditionedDenoiser>,
    src: ConditionId,
    tgt: ConditionId,
    reference: ReferenceTarget,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let world = config.world.analytic()?;
        let sched = config.schedule.build()?;
        let src = world.id_of(&config.guidance.src)?;
        let tgt = world.id_of(&config.guidance.tgt)?;
        let denoiser: Box<dyn ConditionedDenoiser> = match &config.world.checkpoint {
            None => Box::new(AnalyticDenoiser::new(world.clone(), sched.clone())),
            Some(path) => Box::new(load_checkpoint(path, &world, &sched)?),
        };
        let reference = build_reference(&config, &world, src, tgt)?;
        Ok(Self {
            config,
            world,
            sched,
            denoiser,
            src,
            tgt,
            reference,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn world(&self) -> &AnalyticWorld {
        &self.world
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn reference(&self) -> &ReferenceTarget {
        &self.reference
    }

    fn base_point(&self) -> (GuidanceConfig, SamplerConfig) {
        let g = &self.config.guidance;
        let s = &self.config.sampler;
        (
            GuidanceConfig {
                mode: g.mode,
                rule: g.rule,
                w1: g.w1,
                w2: g.w2,
                scheduler: g.scheduler,
                cfg_scale: g.cfg_scale,
            },
            SamplerConfig {
                steps: s.steps,
                method: s.method,
                ddim_eta: s.eta,
                seed: s.seed,
            },
        )
    }

    /// Sweep points in order; a single point without a sweep.
    pub fn points(&self) -> Vec<RunPoint> {
        let (guidance, sampler) = self.base_point();
        let Some(sweep) = &self.config.sweep else {
            return vec![RunPoint {
                run_id: "run_000".into(),
                guidance,
                sampler,
            }];
        };
        sweep
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut g = guidance;
                match (sweep.axis, *v) {
                    (SweepAxis::W1, SweepValue::Number(x)) => g.w1 = x,
                    (SweepAxis::W2, SweepValue::Number(x)) => g.w2 = x,
                    (SweepAxis::Cfg, SweepValue::Number(x)) => g.cfg_scale = x,
                    (SweepAxis::Scheduler, SweepValue::Scheduler(k)) => g.scheduler = k,
                    _ => unreachable!("sweep values are validated against the axis"),
                }
                RunPoint {
                    run_id: format!("run_{i:03}"),
                    guidance: g,
                    sampler,
                }
            })
            .collect()
    }

    /// Guided samples for one sweep point.
    pub fn sample(&self, point: &RunPoint) -> Result<Vec<NoiseVector>> {
        GuidedSampler::new(
            self.denoiser.as_ref(),
            &self.sched,
            point.sampler,
            point.guidance,
            self.src,
            self.tgt,
        )?
        .sample(self.config.sampler.n_samples)
    }

    /// Metrics of `samples` against the reference target.
    pub fn evaluate(&self, samples: &[NoiseVector]) -> Result<(MetricReport, Option<Grid2D>)> {
        let pts: Vec<&[f64]> = samples.iter().map(NoiseVector::as_slice).collect();
        let spec = self.config.output.grid;
        let (hist, clamped) = if self.world.dim() == 2 {
            let (h, c) = histogram_grid(&pts, &spec)?;
            (Some(h), c)
        } else {
            (None, 0)
        };
        let grid_kl = match (&hist, self.reference.grid(&spec)?) {
            (Some(h), Some(r)) => Some(grid_kl(h, &r)?),
            _ => None,
        };
        let reference_samples = self.reference.samples(pts.len(), self.config.sampler.seed);
        let sliced = sliced_wasserstein(
            &pts,
            &reference_samples,
            self.config.output.projections,
            self.config.sampler.seed,
        )?;
        let moments = match &self.reference {
            ReferenceTarget::Mixture(m) => moment_report(&pts, m)?,
            ReferenceTarget::Density(g) => {
                let (mean, cov) = grid_moments(g);
                moments_against(&pts, &mean, &cov)?
            }
        };
        Ok((
            MetricReport {
                grid_kl,
                sliced_wasserstein: sliced,
                mean_error: moments.mean_error,
                cov_error: moments.cov_error,
                clamped_count: clamped,
            },
            hist,
        ))
    }

    /// Samples and scores one point.
    pub fn run_point(&self, point: &RunPoint) -> Result<(RunRow, Vec<NoiseVector>, Grid2D)> {
        let samples = self.sample(point)?;
        let pts: Vec<&[f64]> = samples.iter().map(NoiseVector::as_slice).collect();
        let (report, hist) = self.evaluate(&samples)?;
        let heat = match hist {
            Some(h) => h,
            None => heatmap_grid(&samples, &self.config.output.grid)?,
        };
        let (center, radius) = two_sigma_disc(self.world.get(self.tgt)?);
        let tgt_mass = fraction_within(&pts, &center, radius);
        let row = RunRow {
            point: point.clone(),
            report,
            neg_entropy: -heat.entropy(),
            tgt_mass,
        };
        Ok((row, samples, heat))
    }
}

fn load_checkpoint(path: &Path, world: &AnalyticWorld, sched: &NoiseSchedule) -> Result<Mlp> {
    let text = fs::read_to_string(path).map_err(|e| GtfError::io(path, e))?;
    let net = Mlp::from_checkpoint(&text)?;
    let names = world.condition_names();
    if net.condition_names() != names.as_slice() {
        return Err(GtfError::ConfigValidation {
            key: "world.checkpoint".into(),
            message: format!(
                "checkpoint conditions {:?} differ from world conditions {:?}",
                net.condition_names(),
                names
            ),
        });
    }
    if net.spec().data_dim != world.dim() || net.spec().max_t != sched.max_t() {
        return Err(GtfError::ConfigValidation {
            key: "world.checkpoint".into(),
            message: "checkpoint dimension or horizon does not match the config".into(),
        });
    }
    Ok(net)
}

fn build_reference(
    config: &ExperimentConfig,
    world: &AnalyticWorld,
    src: ConditionId,
    tgt: ConditionId,
) -> Result<ReferenceTarget> {
    let mode = config.guidance.mode;
    match &config.guidance.reference {
        Reference::Condition(name) => Ok(ReferenceTarget::Mixture(world.get(world.id_of(name)?)?.clone())),
        Reference::Composed => match composed_target(world, mode, src, tgt) {
            Ok(m) => Ok(ReferenceTarget::Mixture(m)),
            Err(GtfError::UnsupportedComposition(_)) if world.dim() == 2 => {
                let grid = log_density_grid(&config.output.grid, |x| {
                    composed_log_density(world, mode, src, tgt, x)
                })?;
                Ok(ReferenceTarget::Density(grid))
            }
            Err(e) => Err(e),
        },
    }
}

/// Histogram of the first two coordinates (the second is zero in 1-D).
fn heatmap_grid(samples: &[NoiseVector], spec: &GridSpec) -> Result<Grid2D> {
    let planar: Vec<[f64; 2]> = samples
        .iter()
        .map(|s| {
            let v = s.as_slice();
            [v[0], v.get(1).copied().unwrap_or(0.0)]
        })
        .collect();
    Ok(histogram_grid(&planar, spec)?.0)
}

/// Binary PGM (P5), 8-bit, scaled so the largest cell is 255; the first
/// row written is the largest `y`.
pub fn pgm_bytes(grid: &Grid2D) -> Vec<u8> {
    let n = grid.spec().resolution;
    let max = grid.probs().iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    for iy in (0..n).rev() {
        for ix in 0..n {
            let v = if max > 0.0 { grid.at(ix, iy) / max * 255.0 } else { 0.0 };
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn samples_csv(samples: &[NoiseVector]) -> String {
    let d = samples.first().map_or(0, NoiseVector::dim);
    let mut out = (0..d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for s in samples {
        let line = s.as_slice().iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn metrics_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Ranks by grid KL (1 = closest to the reference), falling back to the
/// sliced Wasserstein distance when grid metrics are unavailable.
pub fn ranks(rows: &[RunRow]) -> Vec<usize> {
    let key = |r: &RunRow| r.report.grid_kl.unwrap_or(r.report.sliced_wasserstein);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| key(&rows[a]).total_cmp(&key(&rows[b])).then(a.cmp(&b)));
    let mut rank = vec![0; rows.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

pub fn ablation_csv(axis: SweepAxis, rows: &[RunRow]) -> String {
    let mut out = format!("{},value,neg_entropy,tgt_mass,rank\n", METRICS_HEADER);
    let rank = ranks(rows);
    for (r, k) in rows.iter().zip(rank) {
        let g = &r.point.guidance;
        let value = match axis {
            SweepAxis::W1 => g.w1.to_string(),
            SweepAxis::W2 => g.w2.to_string(),
            SweepAxis::Cfg => g.cfg_scale.to_string(),
            SweepAxis::Scheduler => g.scheduler.as_str().to_string(),
        };
        let _ = writeln!(out, "{},{},{},{},{}", r.csv_line(), value, r.neg_entropy, r.tgt_mass, k);
    }
    out
}

#[derive(Debug, Serialize)]
struct ManifestRun<'a> {
    run_id: &'a str,
    samples: String,
    heatmap: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    software: String,
    status: &'a str,
    config: serde_json::Value,
    runs: Vec<ManifestRun<'a>>,
}

/// What `run` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<RunRow>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| GtfError::io(path, e))
}

fn write_manifest(dir: &Path, config: &ExperimentConfig, status: &str, rows: &[RunRow]) -> Result<()> {
    let manifest = Manifest {
        software: software_version(),
        status,
        config: config.to_json_value(),
        runs: rows
            .iter()
            .map(|r| ManifestRun {
                run_id: &r.point.run_id,
                samples: format!("samples_{}.csv", r.point.run_id),
                heatmap: format!("heatmap_{}.pgm", r.point.run_id),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&dir.join("manifest.json"), text)
}

/// Runs every sweep point and writes metrics, samples, heatmaps and the
/// manifest into the configured output directory.
///
/// The manifest is written first with status `incomplete` and rewritten as
/// `complete` only after every artifact exists.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| GtfError::io(&dir, e))?;
    write_manifest(&dir, config, "incomplete", &[])?;
    let exp = Experiment::new(config.clone())?;
    let mut rows = Vec::new();
    for point in exp.points() {
        let (row, samples, heat) = exp.run_point(&point)?;
        write(&dir.join(format!("samples_{}.csv", point.run_id)), samples_csv(&samples))?;
        write(&dir.join(format!("heatmap_{}.pgm", point.run_id)), pgm_bytes(&heat))?;
        rows.push(row);
    }
    write(&dir.join("metrics.csv"), metrics_csv(&rows))?;
    write_manifest(&dir, config, "complete", &rows)?;
    Ok(RunSummary { out_dir: dir, rows })
}

/// [`run`] over an explicit axis, plus `ablation_<axis>.csv` with a rank
/// column.
pub fn ablate(config: &ExperimentConfig, sweep: Sweep) -> Result<RunSummary> {
    if sweep.values.len() < 2 {
        return Err(GtfError::ConfigValidation {
            key: "sweep.values".into(),
            message: "an ablation needs at least two values".into(),
        });
    }
    let axis = sweep.axis;
    let config = ExperimentConfig {
        sweep: Some(sweep),
        ..config.clone()
    };
    let summary = run(&config)?;
    write(
        &summary.out_dir.join(format!("ablation_{}.csv", axis.as_str())),
        ablation_csv(axis, &summary.rows),
    )?;
    Ok(summary)
}

/// Trains a network on the config's analytic world and writes a checkpoint.
pub fn train_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<(Mlp, TrainReport)> {
    let world = config.world.analytic()?;
    let sched = config.schedule.build()?;
    let t = &config.training;
    let spec = MlpSpec {
        data_dim: world.dim(),
        time_embed_dim: t.time_embed_dim,
        condition_count: world.conditions().len(),
        hidden: t.hidden.clone(),
        activation: t.activation,
        max_t: sched.max_t(),
    };
    let mut net = Mlp::new(spec, t.train.seed, OutputInit::Zero)?.with_condition_names(world.condition_names())?;
    let report = train(&mut net, &world, &sched, &t.train)?;
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| GtfError::io(parent, e))?;
    }
    write(checkpoint, net.to_checkpoint())?;
    Ok((net, report))
}
