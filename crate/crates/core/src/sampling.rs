//! Seeded randomness and the reparameterized samplers used by the variational family.

use crate::autodiff::{sigmoid, softplus, Tape, TapeError, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp on Gumbel uniforms, mirrored at the top end.
pub const UNIFORM_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("scale must be positive, found {value} at index {index}")]
    NonPositiveScale { index: usize, value: f64 },
    #[error("inclusion probability must lie in (0, 1), found {0}")]
    ProbabilityOutOfRange(f64),
    #[error("temperature must be positive, found {0}")]
    BadTemperature(f64),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// What a random stream is used for. Part of the stream id so that streams never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 0,
    Train = 1,
    Shuffle = 2,
    Predict = 3,
    Data = 4,
    Test = 5,
}

/// Packs `(purpose, step, sample, layer)` into one ChaCha stream id.
///
/// Layout: 4 bits purpose, 36 bits step, 12 bits sample, 12 bits layer.
pub fn stream_id(purpose: Purpose, step: u64, sample: u64, layer: u64) -> u64 {
    debug_assert!(step < 1 << 36 && sample < 1 << 12 && layer < 1 << 12);
    ((purpose as u64) << 60) | (step << 24) | (sample << 12) | layer
}

/// ChaCha8 keyed by a 64-bit seed, positioned on an independent stream.
///
/// Equal `(seed, stream)` pairs give bit-identical draws on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            inner,
            seed,
            stream,
        }
    }

    pub fn for_purpose(seed: u64, purpose: Purpose, step: u64, sample: u64, layer: u64) -> Self {
        Self::new(seed, stream_id(purpose, step, sample, layer))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.standard_normal())
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        use rand::seq::SliceRandom;
        xs.shuffle(&mut self.inner);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConfig {
    pub temperature: f64,
    /// Forward with the hard indicator, backward through the relaxed one.
    pub hard_forward: bool,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            hard_forward: true,
        }
    }
}

impl RelaxationConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(SamplingError::BadTemperature(self.temperature))
        }
    }
}

fn check_positive(t: &Tensor) -> Result<(), SamplingError> {
    match t.data().iter().position(|&s| !(s > 0.0)) {
        Some(index) => Err(SamplingError::NonPositiveScale {
            index,
            value: t.data()[index],
        }),
        None => Ok(()),
    }
}

/// `μ + σ ⊙ e` with the noise `e` supplied by the caller.
pub fn gaussian_reparam_with_noise(tape: &mut Tape, mu: Var, sigma: Var, noise: Tensor) -> Result<Var, SamplingError> {
    check_positive(tape.value(sigma))?;
    let e = tape.constant(noise);
    let scaled = tape.mul(sigma, e)?;
    Ok(tape.add(mu, scaled)?)
}

/// `μ + σ ⊙ e`, `e ~ N(0, I)`. Gradients reach `μ` and `σ` only.
pub fn sample_gaussian_reparam(tape: &mut Tape, mu: Var, sigma: Var, rng: &mut SeededRng) -> Result<Var, SamplingError> {
    let noise = rng.normal_tensor(tape.value(mu).shape());
    gaussian_reparam_with_noise(tape, mu, sigma, noise)
}

/// `exp(μ + σ e)` with caller-supplied noise.
pub fn lognormal_with_noise(tape: &mut Tape, mu: Var, sigma: Var, noise: Tensor) -> Result<Var, SamplingError> {
    let log = gaussian_reparam_with_noise(tape, mu, sigma, noise)?;
    Ok(tape.exp(log))
}

/// `exp(μ + σ e)`, `e ~ N(0, 1)` elementwise.
pub fn sample_lognormal(tape: &mut Tape, mu: Var, sigma: Var, rng: &mut SeededRng) -> Result<Var, SamplingError> {
    let noise = rng.normal_tensor(tape.value(mu).shape());
    lognormal_with_noise(tape, mu, sigma, noise)
}

fn clamped_uniform(rng: &mut SeededRng) -> f64 {
    rng.uniform().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Relaxed and hard indicator for a single Bernoulli(γ) given a uniform `u`.
pub fn gumbel_softmax_from_uniform(gamma: f64, u: f64, cfg: &RelaxationConfig) -> Result<(f64, u8), SamplingError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(SamplingError::ProbabilityOutOfRange(gamma));
    }
    cfg.validate()?;
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    let eta = logit(gamma) + logit(u);
    let soft = sigmoid(eta / cfg.temperature);
    Ok((soft, u8::from(soft >= 0.5)))
}

/// Draws `(z̃, z)` for a single Bernoulli(γ) indicator.
pub fn sample_gumbel_softmax(gamma: f64, cfg: &RelaxationConfig, rng: &mut SeededRng) -> Result<(f64, u8), SamplingError> {
    let u = clamped_uniform(rng);
    gumbel_softmax_from_uniform(gamma, u, cfg)
}

/// Node indicators on the tape, parameterized by inclusion logits.
#[derive(Clone, Debug)]
pub struct RelaxedIndicators {
    /// What the forward pass multiplies by: hard `z` (straight-through) or `z̃`.
    pub gate: Var,
    pub relaxed: Var,
    pub hard: Tensor,
}

/// Gumbel-softmax relaxation of a vector of indicators with uniforms supplied by the caller.
pub fn gumbel_softmax_logits_with_uniform(
    tape: &mut Tape,
    logits: Var,
    uniforms: &[f64],
    cfg: &RelaxationConfig,
) -> Result<RelaxedIndicators, SamplingError> {
    cfg.validate()?;
    let noise = Tensor::new(
        tape.value(logits).shape().to_vec(),
        uniforms
            .iter()
            .map(|&u| logit(u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)))
            .collect(),
    )
    .map_err(|e| TapeError::ShapeMismatch {
        op: "gumbel_softmax",
        left: e.shape,
        right: vec![e.actual],
    })?;
    let noise = tape.constant(noise);
    let eta = tape.add(logits, noise)?;
    let scaled = tape.scale(eta, 1.0 / cfg.temperature);
    let relaxed = tape.sigmoid(scaled);
    let hard = tape.value(relaxed).map(|s| if s >= 0.5 { 1.0 } else { 0.0 });
    let gate = if cfg.hard_forward {
        tape.straight_through(hard.clone(), relaxed)?
    } else {
        relaxed
    };
    Ok(RelaxedIndicators { gate, relaxed, hard })
}

pub fn gumbel_softmax_logits(
    tape: &mut Tape,
    logits: Var,
    cfg: &RelaxationConfig,
    rng: &mut SeededRng,
) -> Result<RelaxedIndicators, SamplingError> {
    let n = tape.value(logits).numel();
    let uniforms: Vec<f64> = (0..n).map(|_| clamped_uniform(rng)).collect();
    gumbel_softmax_logits_with_uniform(tape, logits, &uniforms, cfg)
}

/// `log(1 + exp(ρ))` elementwise.
pub fn softplus_transform(rho: &Tensor) -> Tensor {
    rho.map(softplus)
}
