//! Closed-form KL divergences of the spike-and-slab variational family.
//!
//! Each term comes in two flavours: a plain `f64` function, used by the Monte Carlo
//! oracles and the planner, and a tape builder in [`tape`], used inside the ELBO.
//! Tests check that the two agree.
//!
//! Conventions: Gamma(a, b) uses rate `b`, InvGamma(a, b) uses scale `b`, and a
//! log-normal is parameterized by the mean and standard deviation of its logarithm.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KlError {
    #[error("{name} must be positive and finite, found {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must lie in {range}, found {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("KL is infinite: inclusion probability {gamma} against prior probability {lambda}")]
    Infinite { gamma: f64, lambda: f64 },
    #[error("mean and scale vectors differ in length ({mu} vs {sigma})")]
    LengthMismatch { mu: usize, sigma: usize },
}

fn positive(name: &'static str, value: f64) -> Result<f64, KlError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(KlError::NonPositive { name, value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, KlError> {
        positive("log-normal sigma", sigma)?;
        Ok(Self { mu, sigma })
    }

    /// `E[X]`.
    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }

    /// `E[1/X]`.
    pub fn mean_inverse(&self) -> f64 {
        (-self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self, KlError> {
        positive("gamma shape", shape)?;
        positive("gamma rate", rate)?;
        Ok(Self { shape, rate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, KlError> {
        positive("inverse-gamma shape", shape)?;
        positive("inverse-gamma scale", scale)?;
        Ok(Self { shape, scale })
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Negative entropy of LN(μ, σ²) minus `μ`: `−ln σ − ½ln 2π − ½`.
fn lognormal_entropy_part(sigma: f64) -> f64 {
    -sigma.ln() - 0.5 * (2.0 * PI).ln() - 0.5
}

/// `KL(Ber(γ) ‖ Ber(λ))` with `0 · ln 0 = 0`.
pub fn kl_bernoulli(gamma: f64, lambda: f64) -> Result<f64, KlError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(KlError::OutOfRange {
            name: "gamma",
            range: "(0, 1]",
            value: gamma,
        });
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(KlError::OutOfRange {
            name: "lambda",
            range: "(0, 1]",
            value: lambda,
        });
    }
    if lambda == 1.0 && gamma < 1.0 {
        return Err(KlError::Infinite { gamma, lambda });
    }
    let on = gamma * (gamma / lambda).ln();
    let off = if gamma == 1.0 {
        0.0
    } else {
        (1.0 - gamma) * ((1.0 - gamma) / (1.0 - lambda)).ln()
    };
    Ok(on + off)
}

fn check_slab(mu: &[f64], sigma: &[f64], sigma0_sq: f64) -> Result<(), KlError> {
    if mu.len() != sigma.len() {
        return Err(KlError::LengthMismatch {
            mu: mu.len(),
            sigma: sigma.len(),
        });
    }
    positive("sigma0^2", sigma0_sq)?;
    for &s in sigma {
        positive("slab sigma", s)?;
    }
    Ok(())
}

/// `E_v[KL(N(μ, diag σ²) ‖ N(0, σ₀² v I))]` given `E[ln v]` and `E[1/v]`.
pub fn expected_kl_gaussian_slab(mu: &[f64], sigma: &[f64], sigma0_sq: f64, e_log_v: f64, e_inv_v: f64) -> Result<f64, KlError> {
    check_slab(mu, sigma, sigma0_sq)?;
    let d = mu.len() as f64;
    let log_det: f64 = sigma.iter().map(|s| s.ln()).sum();
    let second: f64 = mu.iter().zip(sigma).map(|(m, s)| s * s + m * m).sum();
    Ok(0.5 * d * (sigma0_sq.ln() + e_log_v - 1.0) - log_det + second / (2.0 * sigma0_sq) * e_inv_v)
}

/// `KL(N(μ, diag σ²) ‖ N(0, σ₀² I))`.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64], sigma0_sq: f64) -> Result<f64, KlError> {
    expected_kl_gaussian_slab(mu, sigma, sigma0_sq, 0.0, 1.0)
}

/// Group-lasso slab: the prior scale is `σ₀² τ²` with `τ² ~ LN(μ_τ, σ_τ²)` under q.
pub fn expected_kl_gaussian_slab_gl(mu: &[f64], sigma: &[f64], sigma0_sq: f64, tau: LogNormalParams) -> Result<f64, KlError> {
    positive("tau sigma", tau.sigma)?;
    expected_kl_gaussian_slab(mu, sigma, sigma0_sq, tau.mu, tau.mean_inverse())
}

/// `ln c² + m − ln(c² + exp(m + s²/2))`: plug-in value of `E[ln(c²T/(c²+T))]`, `ln T ~ N(m, s²)`.
pub fn ghs_plugin_log_scale(c_reg_sq: f64, m: f64, s_sq: f64) -> f64 {
    // ln(c² + e^x) = ln c² + softplus(x − ln c²), stable for large scales.
    let x = m + 0.5 * s_sq;
    m - crate::autodiff::softplus(x - c_reg_sq.ln())
}

/// Regularized group-horseshoe slab with `T = β α ζ_b ζ_a` and plug-in `E[ln(c² + T)]`.
#[allow(clippy::too_many_arguments)]
pub fn expected_kl_gaussian_slab_ghs(
    mu: &[f64],
    sigma: &[f64],
    sigma0_sq: f64,
    c_reg_sq: f64,
    beta: LogNormalParams,
    alpha: LogNormalParams,
    zeta_b: LogNormalParams,
    zeta_a: LogNormalParams,
) -> Result<f64, KlError> {
    positive("c_reg^2", c_reg_sq)?;
    let parts = [beta, alpha, zeta_b, zeta_a];
    for p in &parts {
        positive("log-normal sigma", p.sigma)?;
    }
    let m: f64 = parts.iter().map(|p| p.mu).sum();
    let s_sq: f64 = parts.iter().map(|p| p.sigma * p.sigma).sum();
    let e_log_v = ghs_plugin_log_scale(c_reg_sq, m, s_sq);
    let e_inv_v = (-m + 0.5 * s_sq).exp() + 1.0 / c_reg_sq;
    expected_kl_gaussian_slab(mu, sigma, sigma0_sq, e_log_v, e_inv_v)
}

/// `KL(LN(μ, σ²) ‖ Gamma(a, rate b))`.
pub fn kl_lognormal_gamma(q: LogNormalParams, p: GammaParams) -> f64 {
    let (a, b) = (p.shape, p.rate);
    ln_gamma(a) - a * b.ln() - a * q.mu + b * q.mean() + lognormal_entropy_part(q.sigma)
}

/// `KL(LN(μ, σ²) ‖ InvGamma(a, scale b))`.
pub fn kl_lognormal_invgamma(q: LogNormalParams, p: InvGammaParams) -> f64 {
    let (a, b) = (p.shape, p.scale);
    ln_gamma(a) - a * b.ln() + a * q.mu + b * q.mean_inverse() + lognormal_entropy_part(q.sigma)
}

/// `E_{ς²}[KL(LN(μ_τ, σ_τ²) ‖ Gamma((k+2)/2, rate ς²/2))]` with `ς² ~ LN(μ_ς, σ_ς²)`.
pub fn expected_kl_lognormal_gamma_random_rate(tau: LogNormalParams, fan_in: usize, varsigma: LogNormalParams) -> Result<f64, KlError> {
    if fan_in == 0 {
        return Err(KlError::OutOfRange {
            name: "fan-in",
            range: "[1, inf)",
            value: 0.0,
        });
    }
    positive("tau sigma", tau.sigma)?;
    positive("varsigma sigma", varsigma.sigma)?;
    let shape = (fan_in as f64 + 2.0) / 2.0;
    Ok(shape * (2f64.ln() - tau.mu - varsigma.mu)
        + ln_gamma(shape)
        + 0.5 * (tau.mu + 0.5 * tau.sigma * tau.sigma + varsigma.mu + 0.5 * varsigma.sigma * varsigma.sigma).exp()
        + lognormal_entropy_part(tau.sigma))
}

/// Tape builders mirroring the scalar functions above. All operate elementwise on
/// vectors of per-node parameters unless stated otherwise.
pub mod tape {
    use super::ln_gamma;
    use crate::autodiff::{Tape, TapeError, Var};
    use std::f64::consts::PI;

    fn entropy_part(t: &mut Tape, sigma: Var) -> Var {
        let ls = t.log(sigma);
        let neg = t.neg(ls);
        t.offset(neg, -0.5 * (2.0 * PI).ln() - 0.5)
    }

    /// `exp(μ + σ²/2)`, or `exp(−μ + σ²/2)` when `inverse`.
    pub fn lognormal_moment(t: &mut Tape, mu: Var, sigma: Var, inverse: bool) -> Result<Var, TapeError> {
        let s2 = t.square(sigma);
        let hs2 = t.scale(s2, 0.5);
        let arg = if inverse { t.sub(hs2, mu)? } else { t.add(mu, hs2)? };
        Ok(t.exp(arg))
    }

    /// Summed `KL(Ber(sigmoid(logit)) ‖ Ber(λ))` for `λ ∈ (0, 1)`.
    pub fn bernoulli_sum(t: &mut Tape, logits: Var, lambda: f64) -> Result<Var, TapeError> {
        let gamma = t.sigmoid(logits);
        let neg = t.neg(logits);
        let sp_neg = t.softplus(neg);
        let sp_pos = t.softplus(logits);
        // ln γ = −softplus(−ℓ), ln(1−γ) = −softplus(ℓ)
        let log_ratio_on = t.offset(sp_neg, lambda.ln());
        let log_ratio_on = t.neg(log_ratio_on);
        let on = t.mul(gamma, log_ratio_on)?;
        let one_minus = t.neg(gamma);
        let one_minus = t.offset(one_minus, 1.0);
        let log_ratio_off = t.offset(sp_pos, (-lambda).ln_1p());
        let log_ratio_off = t.neg(log_ratio_off);
        let off = t.mul(one_minus, log_ratio_off)?;
        let total = t.add(on, off)?;
        Ok(t.sum(total))
    }

    /// Per-row expected slab KL for `mu`, `sigma` of shape `[rows × d]`.
    ///
    /// `e_log_v` and `e_inv_v` are per-row vectors; `None` means a fixed unit scale.
    pub fn slab_rows(
        t: &mut Tape,
        mu: Var,
        sigma: Var,
        sigma0_sq: f64,
        e_log_v: Option<Var>,
        e_inv_v: Option<Var>,
    ) -> Result<Var, TapeError> {
        let d = t.value(mu).cols() as f64;
        let m2 = t.square(mu);
        let s2 = t.square(sigma);
        let second = t.add(m2, s2)?;
        let second = t.sum_rows(second)?;
        let mut quad = t.scale(second, 1.0 / (2.0 * sigma0_sq));
        if let Some(einv) = e_inv_v {
            quad = t.mul(quad, einv)?;
        }
        let ls = t.log(sigma);
        let log_det = t.sum_rows(ls)?;
        let mut out = t.sub(quad, log_det)?;
        out = t.offset(out, 0.5 * d * (sigma0_sq.ln() - 1.0));
        if let Some(elog) = e_log_v {
            let half = t.scale(elog, 0.5 * d);
            out = t.add(out, half)?;
        }
        Ok(out)
    }

    /// Elementwise `KL(LN(μ, σ²) ‖ Gamma(a, rate b))`.
    pub fn lognormal_gamma(t: &mut Tape, mu: Var, sigma: Var, shape: f64, rate: f64) -> Result<Var, TapeError> {
        let moment = lognormal_moment(t, mu, sigma, false)?;
        let lin = t.scale(mu, -shape);
        let m = t.scale(moment, rate);
        let mut out = t.add(lin, m)?;
        let ent = entropy_part(t, sigma);
        out = t.add(out, ent)?;
        Ok(t.offset(out, ln_gamma(shape) - shape * rate.ln()))
    }

    /// Elementwise `KL(LN(μ, σ²) ‖ InvGamma(a, scale b))`.
    pub fn lognormal_invgamma(t: &mut Tape, mu: Var, sigma: Var, shape: f64, scale: f64) -> Result<Var, TapeError> {
        let moment = lognormal_moment(t, mu, sigma, true)?;
        let lin = t.scale(mu, shape);
        let m = t.scale(moment, scale);
        let mut out = t.add(lin, m)?;
        let ent = entropy_part(t, sigma);
        out = t.add(out, ent)?;
        Ok(t.offset(out, ln_gamma(shape) - shape * scale.ln()))
    }

    /// Elementwise random-rate term for per-node `τ²` against the shared `ς²` (both scalars of `ς`).
    pub fn lognormal_gamma_random_rate(
        t: &mut Tape,
        mu_tau: Var,
        sigma_tau: Var,
        mu_vs: Var,
        sigma_vs: Var,
        fan_in: usize,
    ) -> Result<Var, TapeError> {
        let shape = (fan_in as f64 + 2.0) / 2.0;
        let mu_sum = t.add(mu_tau, mu_vs)?;
        let lin = t.scale(mu_sum, -shape);
        let st2 = t.square(sigma_tau);
        let sv2 = t.square(sigma_vs);
        let var_sum = t.add(st2, sv2)?;
        let half_var = t.scale(var_sum, 0.5);
        let arg = t.add(mu_sum, half_var)?;
        let e = t.exp(arg);
        let e = t.scale(e, 0.5);
        let mut out = t.add(lin, e)?;
        let ent = entropy_part(t, sigma_tau);
        out = t.add(out, ent)?;
        Ok(t.offset(out, shape * 2f64.ln() + ln_gamma(shape)))
    }
}
