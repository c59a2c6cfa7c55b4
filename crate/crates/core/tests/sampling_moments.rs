//! Sampler moments against closed forms, and centered/non-centered equivalence in distribution.

use ssbnn::layer::{sample_layer_with_noise, GlobalSample, LayerNoise, LayerVariationalState, LocalScales};
use ssbnn::prior::{Parameterization, PriorKind, PriorSpec};
use ssbnn::sampling::{sample_gumbel_softmax, sample_lognormal, RelaxationConfig, SeededRng};
use ssbnn::{Tape, Tensor};

struct Moments {
    n: f64,
    mean: f64,
    var: f64,
    m4: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    Moments { n, mean, var, m4 }
}

impl Moments {
    fn se_mean(&self) -> f64 {
        (self.var / self.n).sqrt()
    }

    fn se_var(&self) -> f64 {
        ((self.m4 - self.var * self.var) / self.n).sqrt()
    }
}

#[test]
fn lognormal_mean_matches_closed_form() {
    let mut rng = SeededRng::new(21, 0);
    let mut t = Tape::new();
    let mu = t.constant(Tensor::zeros(&[100_000]));
    let sigma = t.constant(Tensor::full(&[100_000], 0.5));
    let x = sample_lognormal(&mut t, mu, sigma, &mut rng).unwrap();
    let m = moments(t.value(x).data());
    assert!((m.mean - 0.125f64.exp()).abs() < 3.0 * m.se_mean(), "{} vs {}", m.mean, 0.125f64.exp());
}

#[test]
fn hard_indicator_mean_is_gamma() {
    let mut rng = SeededRng::new(22, 0);
    let cfg = RelaxationConfig::default();
    let z: Vec<f64> = (0..100_000).map(|_| sample_gumbel_softmax(0.7, &cfg, &mut rng).unwrap().1 as f64).collect();
    let m = moments(&z);
    assert!((m.mean - 0.7).abs() < 3.0 * m.se_mean(), "{}", m.mean);
}

/// At temperature 0.01, `z̃ ∈ (0.01, 0.99)` only when `|η| < 0.01 ln 99`, where `η` is
/// logistic around `logit γ`; the observed fraction must match that small probability.
#[test]
fn low_temperature_saturates() {
    let mut rng = SeededRng::new(23, 0);
    let cfg = RelaxationConfig { temperature: 0.01, hard_forward: true };
    let gamma: f64 = 0.6;
    let n = 10_000;
    let inside = (0..n)
        .filter(|_| (0.01..=0.99).contains(&sample_gumbel_softmax(gamma, &cfg, &mut rng).unwrap().0))
        .count() as f64
        / n as f64;
    let edge = 0.01 * 99f64.ln();
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let l = (gamma / (1.0 - gamma)).ln();
    let p = logistic(edge + l) - logistic(-edge + l);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!(p < 0.03);
    assert!((inside - p).abs() < 3.0 * se, "{inside} vs {p}");
}

fn inverse_softplus(s: f64) -> f64 {
    s.exp_m1().ln()
}

fn draws(state: &LayerVariationalState, param: Parameterization, n: usize, stream: u64) -> Vec<Vec<f64>> {
    let prior = PriorSpec::new(PriorKind::SsGl, vec![1.0]);
    let cfg = RelaxationConfig::default();
    let mut rng = SeededRng::new(24, stream);
    let mut out = vec![Vec::with_capacity(n); state.weight_mu.numel()];
    for _ in 0..n {
        let noise = LayerNoise::draw(state, &mut rng);
        let mut t = Tape::new();
        let b = state.bind(&mut t, false);
        let s = sample_layer_with_noise(&mut t, state, &b, &GlobalSample::default(), &prior, &cfg, param, &noise).unwrap();
        for (k, &w) in t.value(s.weights).data().iter().enumerate() {
            out[k].push(w);
        }
    }
    out
}

/// `τ* w̃` with `ln τ*² ~ N(0, s²)` against a centered Gaussian with the same mean
/// `e^{s²/8} μ` and variance `e^{s²/2}(μ² + σ²) − e^{s²/4} μ²`.
#[test]
fn non_centered_matches_centered_in_distribution() {
    let n = 100_000;
    let s = 0.6;
    let mu = [0.4, -0.3, 1.2, 0.05];
    let sigma = [0.2, 0.5, 0.3, 0.8];
    let mut rng = SeededRng::new(25, 0);
    let mut nc = LayerVariationalState::init(1, 2, PriorKind::SsGl, false, &mut rng);
    nc.weight_mu = Tensor::matrix(2, 2, mu.to_vec()).unwrap();
    nc.weight_rho = Tensor::matrix(2, 2, sigma.iter().map(|&v| inverse_softplus(v)).collect()).unwrap();
    nc.local = LocalScales::GroupLasso {
        tau_mu: Tensor::zeros(&[2]),
        tau_rho: Tensor::full(&[2], inverse_softplus(s)),
    };

    let (e1, e2) = ((s * s / 8.0f64).exp(), (s * s / 2.0f64).exp());
    let mut c = nc.clone();
    c.weight_mu = nc.weight_mu.map(|m| e1 * m);
    let var: Vec<f64> = mu.iter().zip(&sigma).map(|(m, sd)| e2 * (m * m + sd * sd) - e1 * e1 * m * m).collect();
    c.weight_rho = Tensor::matrix(2, 2, var.iter().map(|v| inverse_softplus(v.sqrt())).collect()).unwrap();

    let a = draws(&nc, Parameterization::NonCentered, n, 1);
    let b = draws(&c, Parameterization::Centered, n, 2);
    for k in 0..4 {
        let (ma, mb) = (moments(&a[k]), moments(&b[k]));
        let se_m = ma.se_mean().hypot(mb.se_mean());
        let se_v = ma.se_var().hypot(mb.se_var());
        assert!((ma.mean - mb.mean).abs() < 3.0 * se_m, "weight {k} mean {} vs {}", ma.mean, mb.mean);
        assert!((ma.var - mb.var).abs() < 3.0 * se_v, "weight {k} variance {} vs {}", ma.var, mb.var);
    }
}
