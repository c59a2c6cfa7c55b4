//! Optimizers, the stochastic training loop and the ELBO-change stop rule.

use crate::autodiff::Tape;
use crate::layer::ModelError;
use crate::metrics::SparsityReport;
use crate::network::{accuracy, rmse, BayesianMlp, Likelihood, Predictions, Targets};
use crate::sampling::{Purpose, SeededRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Consecutive small changes required before stopping.
pub const EARLY_STOP_WINDOW: usize = 3;
/// Posterior draws used when scoring held-out data.
pub const EVAL_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {term} at epoch {epoch}, step {step} (value {value})")]
    NonFinite {
        term: String,
        epoch: usize,
        step: u64,
        value: f64,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset does not fit the network: {0}")]
    DataMismatch(String),
    #[error("writing metrics: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" | "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(format!("unknown optimizer '{s}' (expected adam or sgd-momentum)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum for SGD, β₁ for Adam.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Velocity (SGD) or first moment (Adam).
    pub first: Vec<Tensor>,
    /// Second moment (Adam only).
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, 0.9)
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        Self::new(OptimizerKind::SgdMomentum, lr, momentum)
    }

    pub fn new(kind: OptimizerKind, lr: f64, beta1: f64) -> Self {
        Self {
            kind,
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of every parameter. Slots are created on first use.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            if self.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vi = self.beta1 * *vi + gi;
                        *pi -= self.lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - self.beta1.powi(self.step as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((pi, &gi), mi), vi) in it {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Monte Carlo samples per step.
    pub mc_samples: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub seed: u64,
    /// Stop once the epoch ELBO changes by at most this much for a full window.
    pub elbo_tolerance: Option<f64>,
    /// Evaluate held-out metrics every this many epochs (and always on the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 1024,
            mc_samples: 1,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            seed: 0,
            elbo_tolerance: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(TrainError::InvalidConfig("mc_samples must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("eval_every must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be a nonnegative number, found {}", self.lr)));
        }
        Ok(())
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        match self.optimizer {
            OptimizerKind::Adam => OptimizerState::adam(self.lr),
            OptimizerKind::SgdMomentum => OptimizerState::sgd_momentum(self.lr, self.momentum),
        }
    }
}

/// One row of the metric trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-step negative ELBO over the epoch.
    pub elbo: f64,
    pub nll: f64,
    pub kl: f64,
    /// Accuracy (classification) or RMSE (regression) on the evaluation data.
    pub score: f64,
    pub sparsity: SparsityReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTrace {
    pub likelihood: Option<Likelihood>,
    pub rows: Vec<EpochMetrics>,
}

impl MetricTrace {
    pub fn elbos(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.elbo).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let score = match self.likelihood {
            Some(Likelihood::Categorical) => "accuracy",
            _ => "rmse",
        };
        let mut h: Vec<String> = ["epoch", "elbo", "nll", "kl", score].iter().map(|s| s.to_string()).collect();
        let hidden = self.rows.first().map_or(0, |r| r.sparsity.node_sparsity.len());
        h.extend((1..=hidden).map(|l| format!("sparsity_{l}")));
        h.push("compression".into());
        h.push("flops_ratio".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.epoch.to_string(), r.elbo.to_string(), r.nll.to_string(), r.kl.to_string(), r.score.to_string()];
            rec.extend(r.sparsity.node_sparsity.iter().map(|s| s.to_string()));
            rec.push(r.sparsity.compression_ratio.to_string());
            rec.push(r.sparsity.flops_ratio.to_string());
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrainError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: MetricTrace,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub optimizer: OptimizerState,
}

/// `true` once the last [`EARLY_STOP_WINDOW`] epoch-to-epoch ELBO changes are all within `eps`.
pub fn early_stop(trace: &[f64], eps: f64) -> bool {
    if trace.len() < EARLY_STOP_WINDOW + 1 {
        return false;
    }
    trace[trace.len() - EARLY_STOP_WINDOW - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() <= eps)
}

fn check_data(model: &BayesianMlp, x: &Tensor, y: &Targets) -> Result<(), TrainError> {
    let widths = &model.config.widths;
    if x.rows() == 0 {
        return Err(TrainError::DataMismatch("dataset is empty".into()));
    }
    if x.shape().len() != 2 || x.cols() != widths[0] {
        return Err(TrainError::DataMismatch(format!("inputs have {} columns, network expects {}", x.cols(), widths[0])));
    }
    if y.len() != x.rows() {
        return Err(TrainError::DataMismatch(format!("{} inputs but {} targets", x.rows(), y.len())));
    }
    let out = *widths.last().unwrap();
    match (model.config.likelihood, y) {
        (Likelihood::Categorical, Targets::Classes { num_classes, .. }) if *num_classes <= out => Ok(()),
        (Likelihood::GaussianRegression, Targets::Values(t)) if t.cols() == out => Ok(()),
        _ => Err(TrainError::DataMismatch(format!(
            "targets do not fit a {} head of width {out}",
            model.config.likelihood
        ))),
    }
}

/// Accuracy or RMSE of the posterior-mean predictor.
pub fn evaluate(model: &BayesianMlp, x: &Tensor, y: &Targets, samples: usize, seed: u64) -> Result<f64, TrainError> {
    Ok(match (model.predict_posterior_mean(x, samples, seed)?, y) {
        (Predictions::Classification { labels, .. }, Targets::Classes { labels: truth, .. }) => accuracy(&labels, truth),
        (Predictions::Regression(p), Targets::Values(t)) => rmse(&p, t),
        _ => return Err(TrainError::DataMismatch("targets do not match the likelihood".into())),
    })
}

/// Data handed to [`train`].
pub struct TrainData<'a> {
    pub x: &'a Tensor,
    pub y: &'a Targets,
    /// Held-out data for the per-epoch score; training data is used when absent.
    pub eval: Option<(&'a Tensor, &'a Targets)>,
}

/// Runs the stochastic variational optimization loop.
///
/// Each step draws `mc_samples` forward passes with hard indicators, builds the
/// negative ELBO, backpropagates through the relaxed indicators and applies one
/// optimizer update. Metrics are recorded once per epoch.
pub fn train(
    model: &mut BayesianMlp,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_data(model, data.x, data.y)?;
    if let Some((ex, ey)) = data.eval {
        check_data(model, ex, ey)?;
    }
    let n = data.x.rows();
    let mut opt = cfg.optimizer_state();
    let mut trace = MetricTrace {
        likelihood: Some(model.config.likelihood),
        rows: Vec::new(),
    };
    let names = model.param_names();
    let mut step: u64 = 0;
    let mut stopped_early = false;
    let mut last_score = f64::NAN;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::for_purpose(cfg.seed, Purpose::Shuffle, epoch as u64, 0, 0).shuffle(&mut order);
        let (mut sum_total, mut sum_nll, mut sum_kl, mut batches) = (0.0, 0.0, 0.0, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            let bx = data.x.select_rows(chunk);
            let by = data.y.select(chunk);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let terms = model.negative_elbo(&mut tape, &bound, &bx, &by, n, cfg.mc_samples, cfg.seed, step)?;
            let (total, nll, kl) = (tape.item(terms.total), tape.item(terms.nll), tape.item(terms.kl));
            for (term, value) in [("negative log-likelihood", nll), ("KL divergence", kl)] {
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        term: term.into(),
                        epoch,
                        step,
                        value,
                    });
                }
            }
            tape.backward(terms.total).map_err(ModelError::from)?;
            let grads: Vec<Tensor> = bound.leaves().into_iter().map(|v| tape.grad(v)).collect();
            if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
                let value = grads[i].data().iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN);
                return Err(TrainError::NonFinite {
                    term: format!("gradient of {}", names[i]),
                    epoch,
                    step,
                    value,
                });
            }
            drop(tape);
            opt.step(&mut model.params_mut(), &grads);
            sum_total += total;
            sum_nll += nll;
            sum_kl += kl;
            batches += 1;
            step += 1;
        }

        if let Some((name, _)) = model.params().into_iter().find(|(_, t)| !t.all_finite()) {
            return Err(TrainError::NonFinite {
                term: format!("parameter {name}"),
                epoch,
                step,
                value: f64::NAN,
            });
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs || last_score.is_nan() {
            let (ex, ey) = data.eval.unwrap_or((data.x, data.y));
            last_score = evaluate(model, ex, ey, EVAL_SAMPLES, cfg.seed)?;
        }
        let b = batches as f64;
        let row = EpochMetrics {
            epoch,
            elbo: sum_total / b,
            nll: sum_nll / b,
            kl: sum_kl / b,
            score: last_score,
            sparsity: SparsityReport::from_model(model),
        };
        on_epoch(&row);
        trace.rows.push(row);

        if let Some(eps) = cfg.elbo_tolerance {
            if early_stop(&trace.elbos(), eps) {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        epochs_run: trace.rows.len(),
        trace,
        stopped_early,
        optimizer: opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_without_momentum_is_plain_gradient_step() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::vector(vec![0.5, 0.25]);
        let mut opt = OptimizerState::sgd_momentum(0.1, 0.0);
        opt.step(&mut [&mut p], std::slice::from_ref(&g));
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn adam_with_zero_gradient_is_stationary() {
        let mut p = Tensor::vector(vec![0.3, 7.0]);
        let mut opt = OptimizerState::adam(0.01);
        for _ in 0..10 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[2])]);
        }
        assert_eq!(p.data(), &[0.3, 7.0]);
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = OptimizerState::adam(0.1);
        // bias correction makes the first step exactly lr in the gradient's sign
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]);
        assert!((p.item() - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        for _ in 0..500 {
            let g = p.clone();
            opt.step(&mut [&mut p], &[g]);
        }
        assert!(p.item().abs() < 1e-3, "p = {}", p.item());
    }

    #[test]
    fn early_stop_rules() {
        let constant = [5.0; 10];
        let first = (2..=constant.len()).find(|&t| early_stop(&constant[..t], 1e-6)).unwrap();
        assert_eq!(first, 4);
        let improving: Vec<f64> = (0..50).map(|i| 100.0 - 2e-3 * i as f64).collect();
        assert!((2..=50).all(|t| !early_stop(&improving[..t], 1e-3)));
        assert!(!early_stop(&[1.0], 1.0));
    }

    #[test]
    fn early_stop_lands_in_noisy_plateau() {
        let mut trace: Vec<f64> = (0..20).map(|i| 1000.0 / (1.0 + i as f64)).collect();
        let plateau_start = trace.len();
        let mut rng = SeededRng::new(3, 0);
        trace.extend((0..30).map(|_| 48.0 + 0.05 * (rng.uniform() - 0.5)));
        let stop = (2..=trace.len()).find(|&t| early_stop(&trace[..t], 0.1)).unwrap();
        assert!(stop > plateau_start && stop <= plateau_start + EARLY_STOP_WINDOW + 1);
    }

    #[test]
    fn config_validation() {
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
