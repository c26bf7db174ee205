//! Browser bindings for the analytic demo: guided sampling on the toy
//! world, scheduler curves and the projection split of two vectors.
//!
//! Every export returns a flat `Float64Array`; the page in `www/` draws it.

use gtf_core::eval::{density_grid, GridSpec};
use gtf_core::{
    build_schedule, compose_addition, compose_removal, project, sample, scene_world, AnalyticDenoiser,
    ConditionId, GtfError, GuidanceConfig, GuidanceDeltas, ManipulationMode, NoiseVector, SamplerConfig,
    SchedulerKind, SchedulerSpec,
};
use wasm_bindgen::prelude::*;

const MAX_T: usize = 1000;
const C1: ConditionId = ConditionId::Label(0);
const C2: ConditionId = ConditionId::Label(1);
const JOINT: ConditionId = ConditionId::Label(2);
const SCENE: ConditionId = ConditionId::Label(3);

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, GtfError> {
    s.parse().map_err(GtfError::InvalidRange)
}

/// Source, target and reference conditions used by each mode.
fn roles(mode: ManipulationMode) -> (ConditionId, ConditionId, ConditionId) {
    match mode {
        ManipulationMode::Addition => (C1, C2, JOINT),
        ManipulationMode::Removal => (SCENE, C2, C1),
    }
}

pub struct SampleRequest<'a> {
    pub mode: &'a str,
    pub w1: f64,
    pub w2: f64,
    pub scheduler: &'a str,
    pub cfg_scale: f64,
    pub steps: usize,
    pub n: usize,
    pub seed: u64,
}

/// Interleaved `x0, x1` coordinates of `n` guided samples.
pub fn guided_points(req: &SampleRequest) -> Result<Vec<f64>, GtfError> {
    let mode: ManipulationMode = parse(req.mode)?;
    let sched = build_schedule(MAX_T, 1e-4, 0.02)?;
    let denoiser = AnalyticDenoiser::new(scene_world(), sched.clone());
    let (src, tgt, _) = roles(mode);
    let sampler = SamplerConfig {
        steps: req.steps,
        seed: req.seed,
        ..SamplerConfig::default()
    };
    let guidance = GuidanceConfig {
        mode,
        w1: req.w1,
        w2: req.w2,
        scheduler: parse(req.scheduler)?,
        cfg_scale: req.cfg_scale,
        ..GuidanceConfig::default()
    };
    let xs = sample(&denoiser, &sched, &sampler, &guidance, src, tgt, req.n)?;
    Ok(xs.into_iter().flat_map(NoiseVector::into_vec).collect())
}

/// Row-major density of the mode's reference condition on a square grid
/// of half-width `half_width`; row 0 is the lowest `x1`.
pub fn reference_grid(mode: &str, half_width: f64, resolution: usize) -> Result<Vec<f64>, GtfError> {
    let (_, _, reference) = roles(parse(mode)?);
    let world = scene_world();
    let grid = density_grid(world.get(reference)?, &GridSpec::square(half_width, resolution))?;
    Ok(grid.probs().to_vec())
}

/// `points` evenly spaced weights `w(t)` for `t` from `0` to `T`.
pub fn scheduler_curve(kind: &str, w0: f64, points: usize) -> Result<Vec<f64>, GtfError> {
    let spec = SchedulerSpec::new(parse::<SchedulerKind>(kind)?, w0, MAX_T)?;
    let points = points.max(2);
    (0..points)
        .map(|i| spec.evaluate(i * MAX_T / (points - 1)))
        .collect()
}

/// Splits the 2-D source and target deltas for `mode`: returns
/// `[parallel, perpendicular, composed]`, two coordinates each.
pub fn decomposition(mode: &str, src: [f64; 2], tgt: [f64; 2], w1: f64, w2: f64) -> Result<Vec<f64>, GtfError> {
    let mode: ManipulationMode = parse(mode)?;
    let src = NoiseVector::new(src.to_vec())?;
    let tgt = NoiseVector::new(tgt.to_vec())?;
    let deltas = GuidanceDeltas::new(NoiseVector::zeros(2), src.clone(), tgt.clone())?;
    let (split, composed) = match mode {
        ManipulationMode::Addition => (project(&tgt, &src)?, compose_addition(&deltas, w1, w2)?),
        ManipulationMode::Removal => (project(&src, &tgt)?, compose_removal(&deltas, w1, w2)?),
    };
    Ok([split.parallel, split.perpendicular, composed]
        .into_iter()
        .flat_map(NoiseVector::into_vec)
        .collect())
}

fn js(err: GtfError) -> JsError {
    JsError::new(&err.to_string())
}

#[wasm_bindgen(js_name = guidedPoints)]
#[allow(clippy::too_many_arguments)]
pub fn guided_points_js(
    mode: &str,
    w1: f64,
    w2: f64,
    scheduler: &str,
    cfg_scale: f64,
    steps: usize,
    n: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    guided_points(&SampleRequest {
        mode,
        w1,
        w2,
        scheduler,
        cfg_scale,
        steps,
        n,
        seed: seed.into(),
    })
    .map_err(js)
}

#[wasm_bindgen(js_name = referenceGrid)]
pub fn reference_grid_js(mode: &str, half_width: f64, resolution: usize) -> Result<Vec<f64>, JsError> {
    reference_grid(mode, half_width, resolution).map_err(js)
}

#[wasm_bindgen(js_name = schedulerCurve)]
pub fn scheduler_curve_js(kind: &str, w0: f64, points: usize) -> Result<Vec<f64>, JsError> {
    scheduler_curve(kind, w0, points).map_err(js)
}

#[wasm_bindgen]
pub fn decompose(mode: &str, sx: f64, sy: f64, tx: f64, ty: f64, w1: f64, w2: f64) -> Result<Vec<f64>, JsError> {
    decomposition(mode, [sx, sy], [tx, ty], w1, w2).map_err(js)
}
