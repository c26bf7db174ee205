//! Time-varying weight functions for the target-semantics weight `w2`.
//!
//! `t` is the diffusion timestep: `t = T` is the noisiest step and `t = 0`
//! the last denoising step. Every kind integrates to `w0 * T` over `[0, T]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GtfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Static,
    Linear,
    #[default]
    Cosine,
    InverseLinear,
    Sine,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Static,
        SchedulerKind::Linear,
        SchedulerKind::Cosine,
        SchedulerKind::InverseLinear,
        SchedulerKind::Sine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Linear => "linear",
            Self::Cosine => "cosine",
            Self::InverseLinear => "inverse_linear",
            Self::Sine => "sine",
        }
    }

    /// Shape of the weight at relative position `s = t / T`, scaled to `w0 = 1`.
    fn shape(self, s: f64) -> f64 {
        match self {
            Self::Static => 1.0,
            Self::Linear => 2.0 * (1.0 - s),
            Self::Cosine => (PI * s).cos() + 1.0,
            Self::InverseLinear => 2.0 * s,
            Self::Sine => (PI * s - PI / 2.0).sin() + 1.0,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown scheduler {s:?} (expected static|linear|cosine|inverse_linear|sine)"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerSpec {
    kind: SchedulerKind,
    w0: f64,
    max_t: usize,
}

impl SchedulerSpec {
    pub fn new(kind: SchedulerKind, w0: f64, max_t: usize) -> Result<Self> {
        if !(w0.is_finite() && w0 >= 0.0) {
            return Err(GtfError::InvalidRange(format!(
                "scheduler base weight must be finite and non-negative, got {w0}"
            )));
        }
        if max_t < 2 {
            return Err(GtfError::InvalidRange(format!(
                "scheduler needs T >= 2, got {max_t}"
            )));
        }
        Ok(Self { kind, w0, max_t })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn max_t(&self) -> usize {
        self.max_t
    }

    pub fn evaluate(&self, t: usize) -> Result<f64> {
        if t > self.max_t {
            return Err(GtfError::OutOfRange {
                what: "timestep",
                detail: format!("{t} not in [0, {}]", self.max_t),
            });
        }
        let s = t as f64 / self.max_t as f64;
        // Clamp rounding noise such as cos(pi) + 1 = 1e-16 at the endpoints.
        Ok((self.w0 * self.kind.shape(s)).max(0.0))
    }

    /// Left Riemann sum of `w(t)` over integer timesteps `0..T`.
    pub fn discrete_mass(&self) -> f64 {
        (0..self.max_t)
            .map(|t| self.evaluate(t).expect("t < T is in range"))
            .sum()
    }
}
