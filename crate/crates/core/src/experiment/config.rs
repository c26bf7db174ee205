//! JSON experiment documents: parsing, defaults and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::{build_schedule, NoiseSchedule, SamplerMethod};
use crate::error::{GtfError, Result};
use crate::eval::GridSpec;
use crate::geometry::{CompositionRule, ManipulationMode};
use crate::mlp::{Activation, TrainConfig};
use crate::schedulers::SchedulerKind;
use crate::testbed::{demo_world, scene_world, AnalyticWorld, GaussianMixture};

/// Built-in analytic worlds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WorldPreset {
    /// Conditions `c1`, `c2` and their composition `joint`.
    #[default]
    Demo,
    /// The demo conditions plus `scene`, an equal mixture of `c1` and `c2`.
    Scene,
}

impl WorldPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            WorldPreset::Demo => "demo",
            WorldPreset::Scene => "scene",
        }
    }

    pub fn build(self) -> AnalyticWorld {
        match self {
            WorldPreset::Demo => demo_world(),
            WorldPreset::Scene => scene_world(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorldSource {
    Preset(WorldPreset),
    Custom {
        prior: GaussianMixture,
        conditions: Vec<(String, GaussianMixture)>,
    },
}

/// Analytic world used for training data and reference targets; when
/// `checkpoint` is set, sampling queries the learned network instead of the
/// exact field.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub source: WorldSource,
    pub checkpoint: Option<PathBuf>,
}

impl WorldConfig {
    pub fn analytic(&self) -> Result<AnalyticWorld> {
        match &self.source {
            WorldSource::Preset(p) => Ok(p.build()),
            WorldSource::Custom { prior, conditions } => {
                AnalyticWorld::new(prior.clone(), conditions.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub max_t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            max_t: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.max_t, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    pub method: SamplerMethod,
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Ddim,
            steps: 50,
            eta: 0.0,
            seed: 0,
            n_samples: 2000,
        }
    }
}

/// Distribution the samples are scored against.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Reference {
    /// Bayes composition of source and target under the guidance mode.
    #[default]
    Composed,
    /// A named condition of the world.
    Condition(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSettings {
    pub mode: ManipulationMode,
    pub rule: CompositionRule,
    pub src: String,
    pub tgt: String,
    pub w1: f64,
    pub w2: f64,
    pub scheduler: SchedulerKind,
    pub cfg_scale: f64,
    pub reference: Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    W1,
    W2,
    Scheduler,
    Cfg,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::W1 => "w1",
            SweepAxis::W2 => "w2",
            SweepAxis::Scheduler => "scheduler",
            SweepAxis::Cfg => "cfg",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = GtfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1" => Ok(SweepAxis::W1),
            "w2" => Ok(SweepAxis::W2),
            "scheduler" => Ok(SweepAxis::Scheduler),
            "cfg" => Ok(SweepAxis::Cfg),
            other => Err(invalid("sweep.axis", format!("unknown axis {other:?}; expected w1, w2, scheduler or cfg"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Number(f64),
    Scheduler(SchedulerKind),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Scheduler(k) => f.write_str(k.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

impl Sweep {
    /// Parses textual values for `axis`; `"all"` expands to every scheduler.
    pub fn parse(axis: SweepAxis, values: &[&str]) -> Result<Self> {
        let json: Vec<Value> = values
            .iter()
            .map(|v| match v.trim().parse::<f64>() {
                Ok(x) => serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number),
                Err(_) => Value::String(v.trim().to_string()),
            })
            .collect();
        Ok(Self {
            axis,
            values: parse_sweep_values(axis, &json)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub grid: GridSpec,
    /// Random directions used by the sliced Wasserstein distance.
    pub projections: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("gtf-out"),
            grid: GridSpec::default(),
            projections: 64,
        }
    }
}

/// Network shape and optimizer settings for `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSettings {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            time_embed_dim: 16,
            activation: Activation::Silu,
            train: TrainConfig::default(),
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerSettings,
    pub guidance: GuidanceSettings,
    pub sweep: Option<Sweep>,
    pub output: OutputConfig,
    pub training: TrainingSettings,
}

// ---------------------------------------------------------------------------
// Document shape

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    world: Option<RawWorld>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<RawSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampler: Option<RawSampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guidance: Option<RawGuidance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<RawSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<RawTraining>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<GaussianMixture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conditions: Option<Vec<RawCondition>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    name: String,
    components: GaussianMixture,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_end: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_samples: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tgt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scheduler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cfg_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    values: Vec<Value>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projections: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_embed_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_per_condition: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uncond_prob: Option<f64>,
}

// ---------------------------------------------------------------------------
// Validation

fn invalid(key: &str, message: impl Into<String>) -> GtfError {
    GtfError::ConfigValidation {
        key: key.to_string(),
        message: message.into(),
    }
}

fn keyed<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| invalid(key, e.to_string()))
}

fn finite(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be finite, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if finite(key, v)? >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be >= 0, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if finite(key, v)? > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be > 0, got {v}")))
    }
}

fn parse_enum<T: std::str::FromStr>(key: &str, text: Option<String>, default: T) -> Result<T> {
    match text {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| invalid(key, format!("unrecognized value {s:?}"))),
    }
}

fn parse_sweep_values(axis: SweepAxis, values: &[Value]) -> Result<Vec<SweepValue>> {
    let mut out = Vec::new();
    for v in values {
        match (axis, v) {
            (SweepAxis::Scheduler, Value::String(s)) if s == "all" => {
                out.extend(SchedulerKind::ALL.iter().map(|&k| SweepValue::Scheduler(k)));
            }
            (SweepAxis::Scheduler, Value::String(s)) => {
                let k = s
                    .parse()
                    .map_err(|_| invalid("sweep.values", format!("unknown scheduler {s:?}")))?;
                out.push(SweepValue::Scheduler(k));
            }
            (SweepAxis::Scheduler, other) => {
                return Err(invalid("sweep.values", format!("expected scheduler name, got {other}")))
            }
            (_, Value::Number(n)) => {
                let x = n
                    .as_f64()
                    .ok_or_else(|| invalid("sweep.values", format!("bad number {n}")))?;
                let key = "sweep.values";
                match axis {
                    SweepAxis::Cfg => positive(key, x)?,
                    _ => non_negative(key, x)?,
                };
                out.push(SweepValue::Number(x));
            }
            (_, other) => {
                return Err(invalid(
                    "sweep.values",
                    format!("expected a number for axis {}, got {other}", axis.as_str()),
                ))
            }
        }
    }
    if out.is_empty() {
        return Err(invalid("sweep.values", "need at least one value"));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parses and validates a JSON experiment document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| GtfError::ConfigParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GtfError::io(path, e))?;
        Self::from_json(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let rw = raw.world.unwrap_or_default();
        let source = match (rw.preset, rw.prior, rw.conditions) {
            (Some(p), None, None) => WorldSource::Preset(match p.as_str() {
                "demo" => WorldPreset::Demo,
                "scene" => WorldPreset::Scene,
                other => return Err(invalid("world.preset", format!("unknown preset {other:?}"))),
            }),
            (None, None, None) => WorldSource::Preset(WorldPreset::Demo),
            (None, Some(prior), Some(conds)) => WorldSource::Custom {
                prior,
                conditions: conds.into_iter().map(|c| (c.name, c.components)).collect(),
            },
            (Some(_), _, _) => {
                return Err(invalid("world.preset", "give either a preset or prior + conditions"))
            }
            (None, None, Some(_)) => return Err(invalid("world.prior", "custom worlds need a prior")),
            (None, Some(_), None) => {
                return Err(invalid("world.conditions", "custom worlds need conditions"))
            }
        };
        let world = WorldConfig {
            source,
            checkpoint: rw.checkpoint,
        };
        let analytic = keyed("world.conditions", world.analytic())?;
        let names = analytic.condition_names();
        if names.is_empty() {
            return Err(invalid("world.conditions", "need at least one condition"));
        }

        let rs = raw.schedule.unwrap_or_default();
        let d = ScheduleConfig::default();
        let schedule = ScheduleConfig {
            max_t: rs.max_t.unwrap_or(d.max_t),
            beta_start: rs.beta_start.unwrap_or(d.beta_start),
            beta_end: rs.beta_end.unwrap_or(d.beta_end),
        };
        keyed("schedule", schedule.build())?;

        let rp = raw.sampler.unwrap_or_default();
        let d = SamplerSettings::default();
        let sampler = SamplerSettings {
            method: parse_enum("sampler.method", rp.method, d.method)?,
            steps: rp.steps.unwrap_or(d.steps),
            eta: non_negative("sampler.eta", rp.eta.unwrap_or(d.eta))?,
            seed: rp.seed.unwrap_or(d.seed),
            n_samples: rp.n_samples.unwrap_or(d.n_samples),
        };
        if sampler.steps == 0 || sampler.steps > schedule.max_t {
            return Err(invalid(
                "sampler.steps",
                format!("must lie in [1, {}], got {}", schedule.max_t, sampler.steps),
            ));
        }
        if sampler.n_samples < 2 {
            return Err(invalid("sampler.n_samples", "need at least 2 samples"));
        }

        let rg = raw.guidance.unwrap_or_default();
        let condition = |key: &str, name: Option<String>, fallback: usize| -> Result<String> {
            let name = name.unwrap_or_else(|| names[fallback.min(names.len() - 1)].clone());
            if names.contains(&name) {
                Ok(name)
            } else {
                Err(invalid(key, format!("unknown condition {name:?}; world has {names:?}")))
            }
        };
        let reference = match rg.reference {
            None => Reference::Composed,
            Some(r) if r == "composed" => Reference::Composed,
            Some(r) => Reference::Condition(condition("guidance.reference", Some(r), 0)?),
        };
        let guidance = GuidanceSettings {
            mode: parse_enum("guidance.mode", rg.mode, ManipulationMode::Addition)?,
            rule: parse_enum("guidance.rule", rg.rule, CompositionRule::Projection)?,
            src: condition("guidance.src", rg.src, 0)?,
            tgt: condition("guidance.tgt", rg.tgt, 1)?,
            w1: finite("guidance.w1", rg.w1.unwrap_or(1.0))?,
            w2: non_negative("guidance.w2", rg.w2.unwrap_or(0.0))?,
            scheduler: parse_enum("guidance.scheduler", rg.scheduler, SchedulerKind::Cosine)?,
            cfg_scale: positive("guidance.cfg_scale", rg.cfg_scale.unwrap_or(7.5))?,
            reference,
        };

        let sweep = match raw.sweep {
            None => None,
            Some(s) => {
                let axis: SweepAxis = s.axis.parse()?;
                Some(Sweep {
                    axis,
                    values: parse_sweep_values(axis, &s.values)?,
                })
            }
        };

        let ro = raw.output.unwrap_or_default();
        let d = OutputConfig::default();
        let output = OutputConfig {
            dir: ro.dir.unwrap_or(d.dir),
            grid: ro.grid.unwrap_or(d.grid),
            projections: ro.projections.unwrap_or(d.projections),
        };
        keyed("output.grid", output.grid.validate())?;
        if output.projections == 0 {
            return Err(invalid("output.projections", "need at least one projection"));
        }

        let rt = raw.training.unwrap_or_default();
        let d = TrainingSettings::default();
        let dt = d.train;
        let training = TrainingSettings {
            hidden: rt.hidden.unwrap_or(d.hidden),
            time_embed_dim: rt.time_embed_dim.unwrap_or(d.time_embed_dim),
            activation: parse_enum("training.activation", rt.activation, d.activation)?,
            train: TrainConfig {
                epochs: rt.epochs.unwrap_or(dt.epochs),
                batch_size: rt.batch_size.unwrap_or(dt.batch_size),
                learning_rate: non_negative(
                    "training.learning_rate",
                    rt.learning_rate.unwrap_or(dt.learning_rate),
                )?,
                seed: rt.seed.unwrap_or(dt.seed),
                samples_per_condition: rt.samples_per_condition.unwrap_or(dt.samples_per_condition),
                uncond_prob: rt.uncond_prob.unwrap_or(dt.uncond_prob),
            },
        };
        if training.hidden.is_empty() || training.hidden.contains(&0) {
            return Err(invalid("training.hidden", "widths must be positive"));
        }
        if !training.time_embed_dim.is_multiple_of(2) {
            return Err(invalid("training.time_embed_dim", "must be even"));
        }
        if training.train.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&training.train.uncond_prob) {
            return Err(invalid("training.uncond_prob", "must lie in [0, 1]"));
        }

        Ok(Self {
            world,
            schedule,
            sampler,
            guidance,
            sweep,
            output,
            training,
        })
    }

    fn to_raw(&self) -> RawConfig {
        let world = match &self.world.source {
            WorldSource::Preset(p) => RawWorld {
                preset: Some(p.as_str().into()),
                ..RawWorld::default()
            },
            WorldSource::Custom { prior, conditions } => RawWorld {
                prior: Some(prior.clone()),
                conditions: Some(
                    conditions
                        .iter()
                        .map(|(name, m)| RawCondition {
                            name: name.clone(),
                            components: m.clone(),
                        })
                        .collect(),
                ),
                ..RawWorld::default()
            },
        };
        let g = &self.guidance;
        let t = &self.training;
        RawConfig {
            world: Some(RawWorld {
                checkpoint: self.world.checkpoint.clone(),
                ..world
            }),
            schedule: Some(RawSchedule {
                max_t: Some(self.schedule.max_t),
                beta_start: Some(self.schedule.beta_start),
                beta_end: Some(self.schedule.beta_end),
            }),
            sampler: Some(RawSampler {
                method: Some(self.sampler.method.as_str().into()),
                steps: Some(self.sampler.steps),
                eta: Some(self.sampler.eta),
                seed: Some(self.sampler.seed),
                n_samples: Some(self.sampler.n_samples),
            }),
            guidance: Some(RawGuidance {
                mode: Some(g.mode.as_str().into()),
                rule: Some(g.rule.as_str().into()),
                src: Some(g.src.clone()),
                tgt: Some(g.tgt.clone()),
                w1: Some(g.w1),
                w2: Some(g.w2),
                scheduler: Some(g.scheduler.as_str().into()),
                cfg_scale: Some(g.cfg_scale),
                reference: Some(match &g.reference {
                    Reference::Composed => "composed".into(),
                    Reference::Condition(c) => c.clone(),
                }),
            }),
            sweep: self.sweep.as_ref().map(|s| RawSweep {
                axis: s.axis.as_str().into(),
                values: s
                    .values
                    .iter()
                    .map(|v| match v {
                        SweepValue::Number(x) => {
                            serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number)
                        }
                        SweepValue::Scheduler(k) => Value::String(k.as_str().into()),
                    })
                    .collect(),
            }),
            output: Some(RawOutput {
                dir: Some(self.output.dir.clone()),
                grid: Some(self.output.grid),
                projections: Some(self.output.projections),
            }),
            training: Some(RawTraining {
                hidden: Some(t.hidden.clone()),
                time_embed_dim: Some(t.time_embed_dim),
                activation: Some(t.activation.as_str().into()),
                epochs: Some(t.train.epochs),
                batch_size: Some(t.train.batch_size),
                learning_rate: Some(t.train.learning_rate),
                seed: Some(t.train.seed),
                samples_per_condition: Some(t.train.samples_per_condition),
                uncond_prob: Some(t.train.uncond_prob),
            }),
        }
    }

    /// Fully explicit document that re-parses to an equal config.
    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self.to_raw()).expect("config documents serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("config documents serialize")
    }
}
