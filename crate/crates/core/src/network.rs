//! The Bayesian MLP: forward pass, likelihoods, negative ELBO and posterior-mean prediction.

use crate::autodiff::{Tape, Var};
use crate::layer::{
    global_kl, layer_forward, layer_kl, sample_global_with_noise, sample_layer_with_noise, BoundGlobal, BoundLayer, GlobalSample, GlobalScales,
    LayerNoise, LayerVariationalState, ModelError, SampledLayer,
};
use crate::prior::{Parameterization, PriorKind, PriorSpec};
use crate::sampling::{Purpose, RelaxationConfig, SeededRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

pub use crate::layer::ModelError as NetworkError;

/// Stream layer id reserved for the network-wide scale noise.
const GLOBAL_STREAM: u64 = 4095;
/// Rows per chunk when predicting.
const PREDICT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Swish,
    Relu,
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "swish" | "silu" => Ok(Activation::Swish),
            "relu" => Ok(Activation::Relu),
            _ => Err(format!("unknown activation '{s}' (expected swish or relu)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    /// Unit-variance Gaussian regression.
    GaussianRegression,
    Categorical,
}

impl FromStr for Likelihood {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian-regression" | "gaussian" | "regression" => Ok(Likelihood::GaussianRegression),
            "categorical" | "classification" => Ok(Likelihood::Categorical),
            _ => Err(format!("unknown likelihood '{s}' (expected gaussian-regression or categorical)")),
        }
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Likelihood::GaussianRegression => "gaussian-regression",
            Likelihood::Categorical => "categorical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[k₀, k₁, …, k_{L+1}]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
    pub parameterization: Parameterization,
    pub prior: PriorSpec,
    pub relaxation: RelaxationConfig,
}

impl NetworkConfig {
    pub fn num_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.len() < 3 {
            return Err(ModelError::InvalidConfig(format!(
                "need at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(ModelError::InvalidConfig(format!("widths must be positive, got {:?}", self.widths)));
        }
        self.prior.validate(self.num_layers())?;
        self.relaxation.validate()?;
        Ok(())
    }
}

/// Regression targets `[n × out]` or class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Values(Tensor),
    Classes { labels: Vec<usize>, num_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Values(t) => Targets::Values(t.select_rows(idx)),
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        }
    }
}

/// Parameters of every layer placed on one tape.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    pub layers: Vec<BoundLayer>,
    pub global: BoundGlobal,
}

impl BoundNetwork {
    /// Leaves in the order of [`BayesianMlp::params_mut`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|l| l.leaves()).collect();
        out.extend(self.global.leaves());
        out
    }
}

/// Noise for one Monte Carlo draw of the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkNoise {
    pub layers: Vec<LayerNoise>,
    pub global: [f64; 2],
}

/// The three parts of the negative ELBO.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub total: Var,
    /// Minibatch- and sample-scaled negative log-likelihood.
    pub nll: Var,
    pub kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Regression(Tensor),
    Classification { probabilities: Tensor, labels: Vec<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthDiagnostic {
    /// `½ · mean (η₀ − η̄)²`.
    pub kl: f64,
    /// `mean 1 − exp(−(η₀ − η̄)²/8)`.
    pub hellinger_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesianMlp {
    pub config: NetworkConfig,
    pub layers: Vec<LayerVariationalState>,
    pub global: GlobalScales,
}

impl BayesianMlp {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let n = config.num_layers();
        let layers = (0..n)
            .map(|l| {
                let mut rng = SeededRng::for_purpose(seed, Purpose::Init, 0, 0, l as u64);
                let select = l + 1 < n && config.prior.lambda[l] < 1.0;
                LayerVariationalState::init(config.widths[l], config.widths[l + 1], config.prior.kind, select, &mut rng)
            })
            .collect();
        let global = GlobalScales::init(config.prior.kind);
        Ok(Self { config, layers, global })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.config.prior
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.params().into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.extend(self.global.params().into_iter().map(|(n, t)| (format!("global.{n}"), t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.extend(self.global.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        BoundNetwork {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            global: self.global.bind(tape, trainable),
        }
    }

    /// Noise for one draw; layer streams are independent of each other.
    pub fn draw_noise(&self, seed: u64, purpose: Purpose, step: u64, sample: u64) -> NetworkNoise {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, s)| LayerNoise::draw(s, &mut SeededRng::for_purpose(seed, purpose, step, sample, l as u64)))
            .collect();
        let mut g = SeededRng::for_purpose(seed, purpose, step, sample, GLOBAL_STREAM);
        NetworkNoise {
            layers,
            global: [g.standard_normal(), g.standard_normal()],
        }
    }

    pub fn sample_with_noise(&self, tape: &mut Tape, bound: &BoundNetwork, noise: &NetworkNoise) -> Result<Vec<SampledLayer>, ModelError> {
        let global = match self.config.parameterization {
            Parameterization::NonCentered => sample_global_with_noise(tape, &bound.global, noise.global)?,
            Parameterization::Centered => GlobalSample::default(),
        };
        self.layers
            .iter()
            .zip(&bound.layers)
            .zip(&noise.layers)
            .map(|((state, b), n)| {
                sample_layer_with_noise(
                    tape,
                    state,
                    b,
                    &global,
                    &self.config.prior,
                    &self.config.relaxation,
                    self.config.parameterization,
                    n,
                )
            })
            .collect()
    }

    /// Alternating affine maps and activations, no activation after the last layer.
    pub fn forward(&self, tape: &mut Tape, x: Var, sampled: &[SampledLayer]) -> Result<Var, ModelError> {
        let width = tape.value(x).cols();
        if width != self.config.widths[0] {
            return Err(ModelError::WidthMismatch {
                expected: self.config.widths[0],
                found: width,
            });
        }
        let mut h = x;
        for (l, s) in sampled.iter().enumerate() {
            h = layer_forward(tape, h, s.weights)?;
            if l + 1 < sampled.len() {
                h = match self.config.activation {
                    Activation::Swish => tape.swish(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Per-layer KL contributions followed by the global term (if any).
    pub fn kl_parts(&self, tape: &mut Tape, bound: &BoundNetwork) -> Result<(Vec<Var>, Option<Var>), ModelError> {
        let prior = &self.config.prior;
        let layers = self
            .layers
            .iter()
            .zip(&bound.layers)
            .enumerate()
            .map(|(l, (state, b))| layer_kl(tape, state, b, &bound.global, prior, prior.lambda[l], self.config.parameterization))
            .collect::<Result<Vec<_>, _>>()?;
        let global = global_kl(tape, &bound.global, prior)?;
        Ok((layers, global))
    }

    pub fn kl_total(&self, tape: &mut Tape, bound: &BoundNetwork) -> Result<Var, ModelError> {
        let (layers, global) = self.kl_parts(tape, bound)?;
        let mut total = layers[0];
        for &k in &layers[1..] {
            total = tape.add(total, k)?;
        }
        if let Some(g) = global {
            total = tape.add(total, g)?;
        }
        Ok(total)
    }

    /// Summed negative log-likelihood of a batch.
    pub fn negative_log_likelihood(&self, tape: &mut Tape, eta: Var, targets: &Targets) -> Result<Var, ModelError> {
        negative_log_likelihood(tape, eta, targets, self.config.likelihood)
    }

    /// `(n/|B|)(1/S) Σ_s NLL_s + KL` with noise for sample `s` drawn from `(seed, step, s)`.
    #[allow(clippy::too_many_arguments)]
    pub fn negative_elbo(
        &self,
        tape: &mut Tape,
        bound: &BoundNetwork,
        x: &Tensor,
        y: &Targets,
        n: usize,
        samples: usize,
        seed: u64,
        step: u64,
    ) -> Result<ElboTerms, ModelError> {
        let noise: Vec<NetworkNoise> = (0..samples).map(|s| self.draw_noise(seed, Purpose::Train, step, s as u64)).collect();
        self.negative_elbo_with_noise(tape, bound, x, y, n, &noise)
    }

    pub fn negative_elbo_with_noise(
        &self,
        tape: &mut Tape,
        bound: &BoundNetwork,
        x: &Tensor,
        y: &Targets,
        n: usize,
        noise: &[NetworkNoise],
    ) -> Result<ElboTerms, ModelError> {
        if noise.is_empty() {
            return Err(ModelError::InvalidConfig("at least one Monte Carlo sample is required".into()));
        }
        if x.rows() == 0 || y.len() != x.rows() {
            return Err(ModelError::InvalidConfig(format!("batch has {} inputs and {} targets", x.rows(), y.len())));
        }
        let xv = tape.constant(x.clone());
        let mut nll: Option<Var> = None;
        for draw in noise {
            let sampled = self.sample_with_noise(tape, bound, draw)?;
            let eta = self.forward(tape, xv, &sampled)?;
            let term = self.negative_log_likelihood(tape, eta, y)?;
            nll = Some(match nll {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let nll = tape.scale(nll.expect("nonempty"), n as f64 / (x.rows() as f64 * noise.len() as f64));
        let kl = self.kl_total(tape, bound)?;
        let total = tape.add(nll, kl)?;
        Ok(ElboTerms { total, nll, kl })
    }

    /// Network outputs `[rows × k_{L+1}]` for one posterior draw.
    fn outputs_for_draw(&self, x: &Tensor, noise: &NetworkNoise) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let sampled = self.sample_with_noise(&mut tape, &bound, noise)?;
        let xv = tape.constant(x.clone());
        let eta = self.forward(&mut tape, xv, &sampled)?;
        Ok(tape.value(eta).clone())
    }

    /// Posterior-mean prediction from `samples` draws keyed by `seed`.
    ///
    /// Regression averages outputs; classification averages softmax probabilities
    /// and takes the argmax. Every row sees the same `samples` weight draws.
    pub fn predict_posterior_mean(&self, x: &Tensor, samples: usize, seed: u64) -> Result<Predictions, ModelError> {
        if samples == 0 {
            return Err(ModelError::InvalidConfig("at least one Monte Carlo sample is required".into()));
        }
        if x.cols() != self.config.widths[0] || x.shape().len() != 2 {
            return Err(ModelError::WidthMismatch {
                expected: self.config.widths[0],
                found: x.cols(),
            });
        }
        let (rows, out) = (x.rows(), *self.config.widths.last().unwrap());
        let mut acc = vec![0.0; rows * out];
        for s in 0..samples {
            let noise = self.draw_noise(seed, Purpose::Predict, 0, s as u64);
            let mut start = 0;
            while start < rows {
                let end = (start + PREDICT_CHUNK).min(rows);
                let idx: Vec<usize> = (start..end).collect();
                let eta = self.outputs_for_draw(&x.select_rows(&idx), &noise)?;
                let dst = &mut acc[start * out..end * out];
                match self.config.likelihood {
                    Likelihood::GaussianRegression => dst.iter_mut().zip(eta.data()).for_each(|(a, e)| *a += e),
                    Likelihood::Categorical => {
                        for (row, e) in dst.chunks_mut(out).zip(eta.data().chunks(out)) {
                            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
                            row.iter_mut().zip(e).for_each(|(a, v)| *a += (v - m).exp() / z);
                        }
                    }
                }
                start = end;
            }
        }
        acc.iter_mut().for_each(|a| *a /= samples as f64);
        let mean = Tensor::matrix(rows, out, acc).expect("shape");
        Ok(match self.config.likelihood {
            Likelihood::GaussianRegression => Predictions::Regression(mean),
            Likelihood::Categorical => {
                let labels = (0..rows).map(|i| argmax(mean.row(i))).collect();
                Predictions::Classification {
                    probabilities: mean,
                    labels,
                }
            }
        })
    }

    /// Divergence between the teacher and the posterior-mean network on `grid`.
    pub fn kl_to_truth_diagnostic(
        &self,
        teacher: impl Fn(&[f64]) -> f64,
        grid: &Tensor,
        samples: usize,
        seed: u64,
    ) -> Result<TruthDiagnostic, ModelError> {
        if self.config.likelihood != Likelihood::GaussianRegression {
            return Err(ModelError::InvalidConfig("the truth diagnostic needs a regression likelihood".into()));
        }
        let Predictions::Regression(pred) = self.predict_posterior_mean(grid, samples, seed)? else {
            unreachable!("regression likelihood")
        };
        let eta0: Vec<f64> = (0..grid.rows()).map(|i| teacher(grid.row(i))).collect();
        Ok(truth_diagnostic(&eta0, &pred.data().iter().step_by(pred.cols()).copied().collect::<Vec<_>>()))
    }

    pub fn is_prior(&self, kind: PriorKind) -> bool {
        self.config.prior.kind == kind
    }
}

/// Summed negative log-likelihood of `eta` under `likelihood`.
pub fn negative_log_likelihood(tape: &mut Tape, eta: Var, targets: &Targets, likelihood: Likelihood) -> Result<Var, ModelError> {
    match (likelihood, targets) {
        (Likelihood::GaussianRegression, Targets::Values(y)) => {
            let yv = tape.constant(y.clone());
            let r = tape.sub(yv, eta)?;
            let sq = tape.square(r);
            let s = tape.sum(sq);
            let s = tape.scale(s, 0.5);
            Ok(tape.offset(s, y.numel() as f64 * 0.5 * (2.0 * PI).ln()))
        }
        (Likelihood::Categorical, Targets::Classes { labels, .. }) => {
            let classes = tape.value(eta).cols();
            if let Some(&label) = labels.iter().find(|&&c| c >= classes) {
                return Err(ModelError::LabelOutOfRange { label, classes });
            }
            let lse = tape.log_sum_exp_rows(eta)?;
            let picked = tape.pick_cols(eta, labels)?;
            let diff = tape.sub(lse, picked)?;
            Ok(tape.sum(diff))
        }
        _ => Err(ModelError::InvalidConfig(format!("targets do not match the {likelihood} likelihood"))),
    }
}

/// KL and squared-Hellinger diagnostics for unit-variance Gaussian regression.
pub fn truth_diagnostic(eta0: &[f64], eta: &[f64]) -> TruthDiagnostic {
    let n = eta0.len() as f64;
    let (mut kl, mut h) = (0.0, 0.0);
    for (a, b) in eta0.iter().zip(eta) {
        let d2 = (a - b) * (a - b);
        kl += 0.5 * d2;
        h += 1.0 - (-d2 / 8.0).exp();
    }
    TruthDiagnostic { kl: kl / n, hellinger_sq: h / n }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Regular grid on `[0, 1]^p` with `per_dim` midpoints per axis.
pub fn unit_grid(p: usize, per_dim: usize) -> Tensor {
    let total = per_dim.pow(p as u32);
    let mut data = Vec::with_capacity(total * p);
    for i in 0..total {
        let mut r = i;
        for _ in 0..p {
            data.push(((r % per_dim) as f64 + 0.5) / per_dim as f64);
            r /= per_dim;
        }
    }
    Tensor::matrix(total, p, data).expect("grid shape")
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn rmse(predicted: &Tensor, targets: &Tensor) -> f64 {
    let se: f64 = predicted.data().iter().zip(targets.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    (se / targets.numel().max(1) as f64).sqrt()
}
