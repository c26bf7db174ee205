//! Small fully-connected epsilon-prediction network with sinusoidal time
//! features and a one-hot condition input, trained from scratch with
//! hand-written backpropagation and Adam.
//!
//! Parameters live in one flat vector, layer by layer, each layer storing its
//! row-major `out x in` weight matrix followed by its bias.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_noise, ConditionId, ConditionedDenoiser, NoiseSchedule};
use crate::error::{ensure_same_dim, GtfError, Result};
use crate::geometry::NoiseVector;
use crate::testbed::AnalyticWorld;

pub const CHECKPOINT_VERSION: &str = "gtf-mlp-v1";

/// Sinusoidal features `[sin(t w_k), cos(t w_k)]` with
/// `w_k = exp(-k ln(10000) / (dim / 2))`.
pub fn time_embedding(t: usize, dim: usize, max_t: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(GtfError::InvalidDim(format!(
            "time embedding width must be even and positive, got {dim}"
        )));
    }
    if t > max_t {
        return Err(GtfError::OutOfRange {
            what: "timestep",
            detail: format!("{t} not in [0, {max_t}]"),
        });
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(k as f64) * 10000f64.ln() / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Silu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Silu => "silu",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Self::Relu),
            "silu" => Ok(Self::Silu),
            other => Err(format!("unknown activation {other:?} (expected relu|silu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub data_dim: usize,
    pub time_embed_dim: usize,
    /// Number of labelled conditions; one more one-hot slot is reserved for
    /// the unconditional token.
    pub condition_count: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Largest timestep the network is queried at.
    pub max_t: usize,
}

impl MlpSpec {
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim + self.condition_count + 1
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(GtfError::InvalidDim("data dimension must be positive".into()));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(GtfError::InvalidDim(format!(
                "time embedding width must be even and positive, got {}",
                self.time_embed_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(GtfError::InvalidDim(
                "need at least one hidden layer, all widths >= 1".into(),
            ));
        }
        if self.max_t < 1 {
            return Err(GtfError::InvalidRange("max_t must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.data_dim);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

/// How the final linear layer starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Zero weights and biases, so the untrained network predicts zero noise.
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    condition_names: Vec<String>,
}

/// One noised training example with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub condition: ConditionId,
    pub eps: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform hidden layers, zero biases.
    pub fn new(spec: MlpSpec, seed: u64, output: OutputInit) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            layers.push(Layer {
                fan_in: pair[0],
                fan_out: pair[1],
                offset,
            });
            offset += pair[0] * pair[1] + pair[1];
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            if i == last && output == OutputInit::Zero {
                continue;
            }
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut params[layer.weights()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        let condition_names = (0..spec.condition_count).map(|i| format!("c{i}")).collect();
        Ok(Self {
            spec,
            layers,
            params,
            condition_names,
        })
    }

    pub fn with_condition_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.spec.condition_count {
            return Err(GtfError::InvalidRange(format!(
                "expected {} condition names, got {}",
                self.spec.condition_count,
                names.len()
            )));
        }
        if names.iter().any(|n| n.is_empty() || n.chars().any(char::is_whitespace)) {
            return Err(GtfError::InvalidRange(
                "condition names must be non-empty and contain no whitespace".into(),
            ));
        }
        self.condition_names = names;
        Ok(self)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn condition_names(&self) -> &[String] {
        &self.condition_names
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter index ranges of each layer's weights and biases.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers.iter().map(|l| (l.weights(), l.biases())).collect()
    }

    fn input(&self, x: &[f64], t: usize, c: ConditionId) -> Result<Vec<f64>> {
        ensure_same_dim(self.spec.data_dim, x.len())?;
        let slot = match c {
            ConditionId::Unconditional => self.spec.condition_count,
            ConditionId::Label(i) if i < self.spec.condition_count => i,
            other => return Err(GtfError::UnknownCondition(other.to_string())),
        };
        let mut input = Vec::with_capacity(self.spec.input_dim());
        input.extend_from_slice(x);
        input.extend(time_embedding(t, self.spec.time_embed_dim, self.spec.max_t)?);
        let mut onehot = vec![0.0; self.spec.condition_count + 1];
        onehot[slot] = 1.0;
        input.extend(onehot);
        Ok(input)
    }

    /// Pre-activations of every layer; the last entry is the network output.
    fn forward_trace(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = &params[layer.weights()];
            let b = &params[layer.biases()];
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    b[o] + row.iter().zip(&act).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            if i < last {
                act = z.iter().map(|&v| self.spec.activation.apply(v)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, x: &NoiseVector, t: usize, c: ConditionId) -> Result<NoiseVector> {
        let input = self.input(x.as_slice(), t, c)?;
        let mut trace = self.forward_trace(&self.params, &input);
        NoiseVector::new(trace.pop().expect("at least one layer"))
    }

    /// Mean over the batch of `||eps - f(x_t, t, c)||^2`.
    pub fn loss(&self, batch: &[TrainExample]) -> Result<f64> {
        self.loss_with(&self.params, batch)
    }

    fn loss_with(&self, params: &[f64], batch: &[TrainExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let input = self.input(&ex.x_t, ex.t, ex.condition)?;
            let out = self.forward_trace(params, &input).pop().expect("output");
            total += out.iter().zip(&ex.eps).map(|(o, e)| (o - e) * (o - e)).sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    /// Accumulates `scale * d||f - eps||^2 / d params` into `grad`; returns the
    /// example's squared error.
    fn backprop_into(&self, ex: &TrainExample, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let input = self.input(&ex.x_t, ex.t, ex.condition)?;
        let pre = self.forward_trace(&self.params, &input);
        let out = pre.last().expect("output");
        let err: f64 = out.iter().zip(&ex.eps).map(|(o, e)| (o - e) * (o - e)).sum();
        let mut delta: Vec<f64> = out
            .iter()
            .zip(&ex.eps)
            .map(|(o, e)| 2.0 * scale * (o - e))
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = self.layers[li];
            let act_in: Vec<f64> = if li == 0 {
                input.clone()
            } else {
                pre[li - 1].iter().map(|&z| self.spec.activation.apply(z)).collect()
            };
            let w_range = layer.weights();
            for o in 0..layer.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[w_range.start + o * layer.fan_in..w_range.start + (o + 1) * layer.fan_in];
                for (g, a) in row.iter_mut().zip(&act_in) {
                    *g += d * a;
                }
            }
            for (g, d) in grad[layer.biases()].iter_mut().zip(&delta) {
                *g += d;
            }
            if li > 0 {
                let w = &self.params[w_range];
                let mut next = vec![0.0; layer.fan_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (n, wi) in next.iter_mut().zip(row) {
                        *n += d * wi;
                    }
                }
                for (n, z) in next.iter_mut().zip(&pre[li - 1]) {
                    *n *= self.spec.activation.derivative(*z);
                }
                delta = next;
            }
        }
        Ok(err)
    }

    /// Mean loss over the batch and its exact parameter gradient.
    pub fn loss_and_gradient(&self, batch: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(GtfError::DataExhausted("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        // Fixed-size chunks summed in order keep the result independent of
        // the thread count.
        const CHUNK: usize = 16;
        let chunk_grad = |chunk: &[TrainExample]| -> Result<(f64, Vec<f64>)> {
            let mut g = vec![0.0; self.params.len()];
            let mut l = 0.0;
            for ex in chunk {
                l += self.backprop_into(ex, scale, &mut g)?;
            }
            Ok((l, g))
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<(f64, Vec<f64>)> = {
            use rayon::prelude::*;
            batch
                .par_chunks(CHUNK)
                .map(chunk_grad)
                .collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<(f64, Vec<f64>)> = batch.chunks(CHUNK).map(chunk_grad).collect::<Result<_>>()?;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss * scale, grad))
    }

    /// Serializes to the line-oriented `gtf-mlp-v1` text format.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let sp = &self.spec;
        writeln!(s, "{CHECKPOINT_VERSION}").unwrap();
        writeln!(s, "data_dim {}", sp.data_dim).unwrap();
        writeln!(s, "time_embed_dim {}", sp.time_embed_dim).unwrap();
        writeln!(s, "condition_count {}", sp.condition_count).unwrap();
        writeln!(s, "max_t {}", sp.max_t).unwrap();
        writeln!(s, "activation {}", sp.activation.as_str()).unwrap();
        let hidden: Vec<String> = sp.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(s, "hidden {}", hidden.join(" ")).unwrap();
        writeln!(s, "conditions {}", self.condition_names.join(" ")).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(s, "layer {i} {} {}", layer.fan_in, layer.fan_out).unwrap();
            for range in [layer.weights(), layer.biases()] {
                let vals: Vec<String> = self.params[range].iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", vals.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| GtfError::Checkpoint(msg);
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
        };
        let version = next("version tag")?;
        if version.trim() != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version tag {version:?}")));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .ok_or_else(|| GtfError::Checkpoint(format!("expected key {key:?}, found {line:?}")))
        }
        fn num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| GtfError::Checkpoint(format!("bad value {s:?} for {key}")))
        }
        let data_dim = num(field(next("data_dim")?, "data_dim")?, "data_dim")?;
        let time_embed_dim = num(field(next("time_embed_dim")?, "time_embed_dim")?, "time_embed_dim")?;
        let condition_count = num(field(next("condition_count")?, "condition_count")?, "condition_count")?;
        let max_t = num(field(next("max_t")?, "max_t")?, "max_t")?;
        let activation = field(next("activation")?, "activation")?
            .trim()
            .parse::<Activation>()
            .map_err(bad)?;
        let hidden = field(next("hidden")?, "hidden")?
            .split_whitespace()
            .map(|v| num(v, "hidden"))
            .collect::<Result<Vec<usize>>>()?;
        let names: Vec<String> = field(next("conditions")?, "conditions")?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let spec = MlpSpec {
            data_dim,
            time_embed_dim,
            condition_count,
            hidden,
            activation,
            max_t,
        };
        let mut net = Mlp::new(spec, 0, OutputInit::Zero)?.with_condition_names(names)?;
        for i in 0..net.layers.len() {
            let layer = net.layers[i];
            let header = format!("layer {i} {} {}", layer.fan_in, layer.fan_out);
            let line = next("layer header")?;
            if line.trim() != header {
                return Err(bad(format!("expected {header:?}, found {line:?}")));
            }
            for range in [layer.weights(), layer.biases()] {
                let vals = next("parameter row")?
                    .split_whitespace()
                    .map(|v| num::<f64>(v, "parameter"))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != range.len() {
                    return Err(bad(format!(
                        "layer {i}: expected {} values, found {}",
                        range.len(),
                        vals.len()
                    )));
                }
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("layer {i}: non-finite parameter")));
                }
                net.params[range].copy_from_slice(&vals);
            }
        }
        Ok(net)
    }
}

impl ConditionedDenoiser for Mlp {
    fn dim(&self) -> usize {
        self.spec.data_dim
    }

    fn predict(&self, x: &NoiseVector, t: usize, c: ConditionId) -> Result<NoiseVector> {
        self.forward(x, t, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Clean samples drawn per condition.
    pub samples_per_condition: usize,
    /// Probability of replacing a label with the unconditional token.
    pub uncond_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            samples_per_condition: 4000,
            uncond_prob: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(GtfError::InvalidRange(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(GtfError::InvalidRange("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.uncond_prob) {
            return Err(GtfError::InvalidRange("uncond_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Fixed noised training set: every clean point gets one timestep drawn
/// uniformly from `1..=T`, one Gaussian noise draw, and with probability
/// `uncond_prob` its label replaced by the unconditional token.
pub fn noised_examples(
    data: &[(ConditionId, Vec<Vec<f64>>)],
    sched: &NoiseSchedule,
    uncond_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for (c, points) in data {
        for x0 in points {
            let t = rng.random_range(1..=sched.max_t());
            let eps: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect();
            let x0v = NoiseVector::new(x0.clone())?;
            let x_t = forward_noise(&x0v, t, &NoiseVector::from_raw(eps.clone()), sched)?;
            let condition = if rng.random::<f64>() < uncond_prob {
                ConditionId::Unconditional
            } else {
                *c
            };
            out.push(TrainExample {
                x_t: x_t.into_vec(),
                t,
                condition,
                eps,
            });
        }
    }
    Ok(out)
}

/// Clean samples from every condition of an analytic world.
pub fn world_dataset(
    world: &AnalyticWorld,
    per_condition: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(ConditionId, Vec<Vec<f64>>)> {
    world
        .conditions()
        .iter()
        .enumerate()
        .map(|(i, (_, m))| (ConditionId::Label(i), m.sample(per_condition, rng)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Per-example mean loss of each epoch, accumulated over its minibatches.
    pub loss_history: Vec<f64>,
    /// Loss of the untrained network on the whole training set.
    pub initial_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Minimizes the epsilon-prediction loss over labelled clean data.
pub fn train_on_data(
    net: &mut Mlp,
    data: &[(ConditionId, Vec<Vec<f64>>)],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if !data.iter().any(|(_, pts)| pts.len() >= cfg.batch_size) {
        return Err(GtfError::DataExhausted(format!(
            "no condition has at least batch_size = {} samples",
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut examples = noised_examples(data, sched, cfg.uncond_prob, &mut rng)?;
    let initial_loss = net.loss(&examples)?;
    let mut adam = Adam::new(net.param_count());
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in examples.chunks(cfg.batch_size) {
            let (loss, grad) = net.loss_and_gradient(batch)?;
            if !loss.is_finite() {
                return Err(GtfError::DivergedLoss { epoch });
            }
            if cfg.learning_rate > 0.0 {
                adam.update(&mut net.params, &grad, cfg.learning_rate);
            }
            total += loss * batch.len() as f64;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(GtfError::DivergedLoss { epoch });
        }
        loss_history.push(mean);
    }
    Ok(TrainReport {
        loss_history,
        initial_loss,
    })
}

/// Trains on fresh samples from every condition of `world`.
pub fn train(
    net: &mut Mlp,
    world: &AnalyticWorld,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = world_dataset(world, cfg.samples_per_condition, &mut rng);
    train_on_data(net, &data, sched, cfg)
}

/// Max relative error between `analytic` and central differences of the
/// mean loss at the parameter indices in `indices`.
pub fn compare_gradient(
    net: &Mlp,
    batch: &[TrainExample],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<f64> {
    let mut params = net.params.clone();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = params[i];
        params[i] = orig + h;
        let up = net.loss_with(&params, batch)?;
        params[i] = orig - h;
        let down = net.loss_with(&params, batch)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Parameter indices sampled so that every layer's weights and biases are
/// represented.
pub fn gradient_check_indices(net: &Mlp, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<std::ops::Range<usize>> = net
        .layer_ranges()
        .into_iter()
        .flat_map(|(w, b)| [w, b])
        .collect();
    (0..count.max(groups.len()))
        .map(|k| {
            let g = &groups[k % groups.len()];
            rng.random_range(g.clone())
        })
        .collect()
}

/// Backprop gradient of the mean loss checked against central differences
/// on `count` sampled parameters.
pub fn gradient_check(net: &Mlp, batch: &[TrainExample], count: usize, h: f64, seed: u64) -> Result<f64> {
    let (_, grad) = net.loss_and_gradient(batch)?;
    let idx = gradient_check_indices(net, count, seed);
    compare_gradient(net, batch, &grad, &idx, h)
}
