//! Noise-space vector algebra: projections, the projection-based addition and
//! removal operators, the Bayes compositions and classifier-free guidance
//! assembly.
//!
//! Every vector is treated as a flat array and every inner product is the
//! plain Euclidean dot product over all of its entries.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, GtfError, Result};

/// A point or direction in the diffusion state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    /// Wraps `values`, rejecting empty vectors and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(GtfError::InvalidDim("noise vectors need at least one entry".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GtfError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values produced by arithmetic on already-validated vectors.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        ensure_same_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        ensure_same_dim(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }
}

impl TryFrom<Vec<f64>> for NoiseVector {
    type Error = GtfError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<NoiseVector> for Vec<f64> {
    fn from(v: NoiseVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for NoiseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm below which a vector is too small to define a direction.
pub fn degenerate_threshold(dim: usize) -> f64 {
    1e-8 * (dim as f64).sqrt()
}

/// Result of splitting a vector against a reference direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub parallel: NoiseVector,
    pub perpendicular: NoiseVector,
}

/// Splits `v` into the component along `onto` and the orthogonal remainder.
pub fn project(v: &NoiseVector, onto: &NoiseVector) -> Result<Projection> {
    ensure_same_dim(v.dim(), onto.dim())?;
    let norm_sq = dot(&onto.0, &onto.0);
    let norm = norm_sq.sqrt();
    let threshold = degenerate_threshold(onto.dim());
    if norm <= threshold {
        return Err(GtfError::DegenerateReference { norm, threshold });
    }
    let coef = dot(&v.0, &onto.0) / norm_sq;
    let parallel: Vec<f64> = onto.0.iter().map(|o| coef * o).collect();
    let perpendicular = v.0.iter().zip(&parallel).map(|(x, p)| x - p).collect();
    Ok(Projection {
        parallel: NoiseVector(parallel),
        perpendicular: NoiseVector(perpendicular),
    })
}

/// Which edit the guidance performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationMode {
    /// Inject target semantics orthogonal to the source direction.
    Addition,
    /// Erase the part of the source direction shared with the target.
    Removal,
}

impl ManipulationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Addition => "addition",
            Self::Removal => "removal",
        }
    }
}

impl std::str::FromStr for ManipulationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "addition" => Ok(Self::Addition),
            "removal" => Ok(Self::Removal),
            other => Err(format!("unknown mode {other:?} (expected addition|removal)")),
        }
    }
}

/// How the per-condition deltas are turned into one guidance direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionRule {
    /// Projection-decomposed operators weighted by `w1` and `w2`.
    #[default]
    Projection,
    /// Plain sums and differences of deltas; the weights are not used.
    Bayes,
}

impl CompositionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Projection => "projection",
            Self::Bayes => "bayes",
        }
    }
}

impl std::str::FromStr for CompositionRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "projection" => Ok(Self::Projection),
            "bayes" => Ok(Self::Bayes),
            other => Err(format!(
                "unknown composition {other:?} (expected projection|bayes)"
            )),
        }
    }
}

/// Unconditional prediction plus the source and target deltas relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceDeltas {
    pub unconditional: NoiseVector,
    pub delta_src: NoiseVector,
    pub delta_tgt: NoiseVector,
}

impl GuidanceDeltas {
    pub fn new(
        unconditional: NoiseVector,
        delta_src: NoiseVector,
        delta_tgt: NoiseVector,
    ) -> Result<Self> {
        ensure_same_dim(unconditional.dim(), delta_src.dim())?;
        ensure_same_dim(unconditional.dim(), delta_tgt.dim())?;
        Ok(Self {
            unconditional,
            delta_src,
            delta_tgt,
        })
    }

    /// Builds the deltas from three raw denoiser predictions.
    pub fn from_predictions(
        unconditional: NoiseVector,
        src: &NoiseVector,
        tgt: &NoiseVector,
    ) -> Result<Self> {
        let delta_src = src.sub(&unconditional)?;
        let delta_tgt = tgt.sub(&unconditional)?;
        Self::new(unconditional, delta_src, delta_tgt)
    }

    pub fn dim(&self) -> usize {
        self.unconditional.dim()
    }
}

/// `w1 * src + w2 * (tgt with its src-parallel part removed)`.
pub fn compose_addition(deltas: &GuidanceDeltas, w1: f64, w2: f64) -> Result<NoiseVector> {
    if w2 == 0.0 {
        return Ok(deltas.delta_src.scaled(w1));
    }
    let split = project(&deltas.delta_tgt, &deltas.delta_src)?;
    deltas.delta_src.combine(w1, &split.perpendicular, w2)
}

/// `w1 * (src rejected from tgt) - w2 * (src projected on tgt)`.
pub fn compose_removal(deltas: &GuidanceDeltas, w1: f64, w2: f64) -> Result<NoiseVector> {
    let split = project(&deltas.delta_src, &deltas.delta_tgt)?;
    if w2 == 0.0 {
        return Ok(split.perpendicular.scaled(w1));
    }
    split.perpendicular.combine(w1, &split.parallel, -w2)
}

/// Joint-conditional noise under conditional independence:
/// `e(0) + [e(c1) - e(0)] + [e(c2) - e(0)]`.
pub fn compose_bayes_addition(deltas: &GuidanceDeltas) -> Result<NoiseVector> {
    deltas
        .unconditional
        .add(&deltas.delta_src)?
        .add(&deltas.delta_tgt)
}

/// Residual-conditional noise: `e(0) + [e(c1,c2) - e(0)] - [e(c2) - e(0)]`,
/// with the joint prediction stored as `delta_src`.
pub fn compose_bayes_removal(deltas: &GuidanceDeltas) -> Result<NoiseVector> {
    let net = deltas.delta_src.sub(&deltas.delta_tgt)?;
    deltas.unconditional.add(&net)
}

fn check_guidance_scalars(w1: f64, w2: f64, cfg_scale: f64) -> Result<()> {
    if !w1.is_finite() || !w2.is_finite() {
        return Err(GtfError::InvalidRange(format!(
            "guidance weights must be finite (w1={w1}, w2={w2})"
        )));
    }
    if !(cfg_scale.is_finite() && cfg_scale > 0.0) {
        return Err(GtfError::InvalidRange(format!(
            "cfg_scale must be positive, got {cfg_scale}"
        )));
    }
    Ok(())
}

/// `e(0) + cfg_scale * compose_mode(deltas, w1, w2)`.
///
/// With `Addition`, `w1 = 1` and `w2 = 0` this is standard classifier-free
/// guidance on the source condition.
pub fn assemble_guidance(
    deltas: &GuidanceDeltas,
    mode: ManipulationMode,
    w1: f64,
    w2: f64,
    cfg_scale: f64,
) -> Result<NoiseVector> {
    check_guidance_scalars(w1, w2, cfg_scale)?;
    let composed = match mode {
        ManipulationMode::Addition => compose_addition(deltas, w1, w2)?,
        ManipulationMode::Removal => compose_removal(deltas, w1, w2)?,
    };
    deltas.unconditional.combine(1.0, &composed, cfg_scale)
}

/// Bayes composition with the delta part scaled by `cfg_scale`; at
/// `cfg_scale = 1` this is exactly the Bayes composition.
pub fn assemble_bayes_guidance(
    deltas: &GuidanceDeltas,
    mode: ManipulationMode,
    cfg_scale: f64,
) -> Result<NoiseVector> {
    check_guidance_scalars(0.0, 0.0, cfg_scale)?;
    let composed = match mode {
        ManipulationMode::Addition => compose_bayes_addition(deltas)?,
        ManipulationMode::Removal => compose_bayes_removal(deltas)?,
    };
    if cfg_scale == 1.0 {
        return Ok(composed);
    }
    let delta = composed.sub(&deltas.unconditional)?;
    deltas.unconditional.combine(1.0, &delta, cfg_scale)
}
