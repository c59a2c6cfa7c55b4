//! The spike-and-slab variational linear layer.
//!
//! Weights are stored as `[fan_out × (fan_in + 1)]` matrices whose column 0 is the bias,
//! so a node's whole incoming group (bias included) shares one indicator.

use crate::autodiff::{sigmoid, Tape, TapeError, Var};
use crate::kl::{self, KlError};
use crate::prior::{Parameterization, PriorError, PriorKind, PriorSpec};
use crate::sampling::{gaussian_reparam_with_noise, gumbel_softmax_logits_with_uniform, RelaxationConfig, SamplingError, SeededRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INIT_RHO: f64 = -6.0;
pub const INIT_INCLUSION: f64 = 0.99;
pub const INIT_LOCAL_RANGE: f64 = 0.6;
pub const INIT_GLOBAL_MU: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Kl(#[from] KlError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("state was built for prior {found} but {expected} was requested")]
    PriorMismatch { expected: PriorKind, found: &'static str },
    #[error("input width {found} does not match the expected {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
}

/// Per-node scale parameters (log-normal means and pre-softplus deviations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LocalScales {
    None,
    GroupLasso { tau_mu: Tensor, tau_rho: Tensor },
    Horseshoe { beta_mu: Tensor, beta_rho: Tensor, alpha_mu: Tensor, alpha_rho: Tensor },
}

impl LocalScales {
    fn kind_name(&self) -> &'static str {
        match self {
            LocalScales::None => "ss-ig",
            LocalScales::GroupLasso { .. } => "ss-gl",
            LocalScales::Horseshoe { .. } => "ss-ghs",
        }
    }
}

/// Network-wide scale parameters, stored as one-element tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GlobalScales {
    None,
    GroupLasso { mu: Tensor, rho: Tensor },
    Horseshoe { zeta_b_mu: Tensor, zeta_b_rho: Tensor, zeta_a_mu: Tensor, zeta_a_rho: Tensor },
}

impl GlobalScales {
    pub fn init(kind: PriorKind) -> Self {
        let mu = || Tensor::scalar(INIT_GLOBAL_MU);
        let rho = || Tensor::scalar(INIT_RHO);
        match kind {
            PriorKind::SsIg => GlobalScales::None,
            PriorKind::SsGl => GlobalScales::GroupLasso { mu: mu(), rho: rho() },
            PriorKind::SsGhs => GlobalScales::Horseshoe {
                zeta_b_mu: mu(),
                zeta_b_rho: rho(),
                zeta_a_mu: mu(),
                zeta_a_rho: rho(),
            },
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            GlobalScales::None => vec![],
            GlobalScales::GroupLasso { mu, rho } => vec![("varsigma_mu", mu), ("varsigma_rho", rho)],
            GlobalScales::Horseshoe {
                zeta_b_mu,
                zeta_b_rho,
                zeta_a_mu,
                zeta_a_rho,
            } => vec![
                ("zeta_b_mu", zeta_b_mu),
                ("zeta_b_rho", zeta_b_rho),
                ("zeta_a_mu", zeta_a_mu),
                ("zeta_a_rho", zeta_a_rho),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            GlobalScales::None => vec![],
            GlobalScales::GroupLasso { mu, rho } => vec![mu, rho],
            GlobalScales::Horseshoe {
                zeta_b_mu,
                zeta_b_rho,
                zeta_a_mu,
                zeta_a_rho,
            } => vec![zeta_b_mu, zeta_b_rho, zeta_a_mu, zeta_a_rho],
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGlobal {
        let scale = |tape: &mut Tape, m: &Tensor, r: &Tensor| {
            let (m, r) = (put(tape, m, trainable), put(tape, r, trainable));
            (m, r, tape.softplus(r))
        };
        match self {
            GlobalScales::None => BoundGlobal::None,
            GlobalScales::GroupLasso { mu, rho } => {
                let (mu, rho, sigma) = scale(tape, mu, rho);
                BoundGlobal::GroupLasso { mu, rho, sigma }
            }
            GlobalScales::Horseshoe {
                zeta_b_mu,
                zeta_b_rho,
                zeta_a_mu,
                zeta_a_rho,
            } => {
                let zeta_b = scale(tape, zeta_b_mu, zeta_b_rho);
                let zeta_a = scale(tape, zeta_a_mu, zeta_a_rho);
                BoundGlobal::Horseshoe { zeta_b, zeta_a }
            }
        }
    }
}

/// Global scales placed on a tape. Tuples are `(mu, rho, sigma)`.
#[derive(Clone, Copy, Debug)]
pub enum BoundGlobal {
    None,
    GroupLasso { mu: Var, rho: Var, sigma: Var },
    Horseshoe { zeta_b: (Var, Var, Var), zeta_a: (Var, Var, Var) },
}

impl BoundGlobal {
    pub fn leaves(&self) -> Vec<Var> {
        match *self {
            BoundGlobal::None => vec![],
            BoundGlobal::GroupLasso { mu, rho, .. } => vec![mu, rho],
            BoundGlobal::Horseshoe { zeta_b, zeta_a } => vec![zeta_b.0, zeta_b.1, zeta_a.0, zeta_a.1],
        }
    }
}

/// All trainable variational parameters of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVariationalState {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_mu: Tensor,
    pub weight_rho: Tensor,
    /// `None` pins every γ to 1 (output layer, or a layer with λ = 1).
    pub inclusion_logit: Option<Tensor>,
    pub local: LocalScales,
}

/// Layer parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub mu: Var,
    pub rho: Var,
    pub sigma: Var,
    pub logit: Option<Var>,
    pub local: BoundLocal,
}

/// Tuples are `(mu, rho, sigma)`.
#[derive(Clone, Copy, Debug)]
pub enum BoundLocal {
    None,
    GroupLasso { tau: (Var, Var, Var) },
    Horseshoe { beta: (Var, Var, Var), alpha: (Var, Var, Var) },
}

impl BoundLayer {
    /// Leaves in the same order as [`LayerVariationalState::params_mut`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![self.mu, self.rho];
        out.extend(self.logit);
        match self.local {
            BoundLocal::None => {}
            BoundLocal::GroupLasso { tau } => out.extend([tau.0, tau.1]),
            BoundLocal::Horseshoe { beta, alpha } => out.extend([beta.0, beta.1, alpha.0, alpha.1]),
        }
        out
    }
}

/// Standard-normal and uniform draws consumed by one layer sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise {
    pub weight: Tensor,
    pub uniforms: Vec<f64>,
    /// One vector per local log-normal factor (τ², or β then α).
    pub local: Vec<Tensor>,
}

impl LayerNoise {
    pub fn draw(state: &LayerVariationalState, rng: &mut SeededRng) -> Self {
        let weight = rng.normal_tensor(state.weight_mu.shape());
        let uniforms = match &state.inclusion_logit {
            Some(_) => (0..state.fan_out).map(|_| rng.uniform()).collect(),
            None => Vec::new(),
        };
        let factors = match state.local {
            LocalScales::None => 0,
            LocalScales::GroupLasso { .. } => 1,
            LocalScales::Horseshoe { .. } => 2,
        };
        let local = (0..factors).map(|_| rng.normal_tensor(&[state.fan_out])).collect();
        Self { weight, uniforms, local }
    }

    /// Zero Gaussian noise and median uniforms.
    pub fn median(state: &LayerVariationalState) -> Self {
        let factors = match state.local {
            LocalScales::None => 0,
            LocalScales::GroupLasso { .. } => 1,
            LocalScales::Horseshoe { .. } => 2,
        };
        Self {
            weight: Tensor::zeros(state.weight_mu.shape()),
            uniforms: vec![0.5; if state.inclusion_logit.is_some() { state.fan_out } else { 0 }],
            local: vec![Tensor::zeros(&[state.fan_out]); factors],
        }
    }
}

/// Global scale draws shared by every layer of one Monte Carlo sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct GlobalSample {
    /// `ln(ζ_b ζ_a)` for the horseshoe.
    pub log_zeta: Option<Var>,
}

/// One Monte Carlo draw of a layer.
#[derive(Clone, Debug)]
pub struct SampledLayer {
    /// `[fan_out × (fan_in + 1)]`, rows of dropped nodes exactly zero.
    pub weights: Var,
    pub hard: Option<Tensor>,
    pub relaxed: Option<Var>,
    /// Non-centered per-node scale `τ*`.
    pub scale: Option<Var>,
}

impl SampledLayer {
    pub fn indicators(&self, fan_out: usize) -> Tensor {
        self.hard.clone().unwrap_or_else(|| Tensor::full(&[fan_out], 1.0))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LayerVariationalState {
    /// He-uniform means, `ρ = −6`, `γ = 0.99`, local means `U(−0.6, 0.6)`.
    pub fn init(fan_in: usize, fan_out: usize, kind: PriorKind, select_nodes: bool, rng: &mut SeededRng) -> Self {
        assert!(fan_in >= 1 && fan_out >= 1, "layer dimensions must be positive");
        let bound = (6.0 / fan_in as f64).sqrt();
        let shape = [fan_out, fan_in + 1];
        let weight_mu = Tensor::from_fn(&shape, |_| rng.uniform_range(-bound, bound));
        let weight_rho = Tensor::full(&shape, INIT_RHO);
        let inclusion_logit = select_nodes.then(|| Tensor::full(&[fan_out], logit(INIT_INCLUSION)));
        let mut local_mu = || Tensor::from_fn(&[fan_out], |_| rng.uniform_range(-INIT_LOCAL_RANGE, INIT_LOCAL_RANGE));
        let local = match kind {
            PriorKind::SsIg => LocalScales::None,
            PriorKind::SsGl => LocalScales::GroupLasso {
                tau_mu: local_mu(),
                tau_rho: Tensor::full(&[fan_out], INIT_RHO),
            },
            PriorKind::SsGhs => {
                let beta_mu = local_mu();
                let alpha_mu = local_mu();
                LocalScales::Horseshoe {
                    beta_mu,
                    beta_rho: Tensor::full(&[fan_out], INIT_RHO),
                    alpha_mu,
                    alpha_rho: Tensor::full(&[fan_out], INIT_RHO),
                }
            }
        };
        Self {
            fan_in,
            fan_out,
            weight_mu,
            weight_rho,
            inclusion_logit,
            local,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.local.kind_name()
    }

    /// Inclusion probabilities; all ones when node selection is off.
    pub fn gammas(&self) -> Vec<f64> {
        match &self.inclusion_logit {
            Some(l) => l.data().iter().map(|&x| sigmoid(x)).collect(),
            None => vec![1.0; self.fan_out],
        }
    }

    /// Node `j` is active iff `γ_j > threshold`.
    pub fn active_nodes(&self, threshold: f64) -> Vec<bool> {
        self.gammas().into_iter().map(|g| g > threshold).collect()
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("weight_mu", &self.weight_mu), ("weight_rho", &self.weight_rho)];
        if let Some(l) = &self.inclusion_logit {
            out.push(("inclusion_logit", l));
        }
        match &self.local {
            LocalScales::None => {}
            LocalScales::GroupLasso { tau_mu, tau_rho } => out.extend([("tau_mu", tau_mu), ("tau_rho", tau_rho)]),
            LocalScales::Horseshoe {
                beta_mu,
                beta_rho,
                alpha_mu,
                alpha_rho,
            } => out.extend([
                ("beta_mu", beta_mu),
                ("beta_rho", beta_rho),
                ("alpha_mu", alpha_mu),
                ("alpha_rho", alpha_rho),
            ]),
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight_mu, &mut self.weight_rho];
        if let Some(l) = &mut self.inclusion_logit {
            out.push(l);
        }
        match &mut self.local {
            LocalScales::None => {}
            LocalScales::GroupLasso { tau_mu, tau_rho } => out.extend([tau_mu, tau_rho]),
            LocalScales::Horseshoe {
                beta_mu,
                beta_rho,
                alpha_mu,
                alpha_rho,
            } => out.extend([beta_mu, beta_rho, alpha_mu, alpha_rho]),
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLayer {
        let mu = put(tape, &self.weight_mu, trainable);
        let rho = put(tape, &self.weight_rho, trainable);
        let logit = self.inclusion_logit.as_ref().map(|l| put(tape, l, trainable));
        let scale = |tape: &mut Tape, m: &Tensor, r: &Tensor| {
            let (m, r) = (put(tape, m, trainable), put(tape, r, trainable));
            (m, r, tape.softplus(r))
        };
        let local = match &self.local {
            LocalScales::None => BoundLocal::None,
            LocalScales::GroupLasso { tau_mu, tau_rho } => BoundLocal::GroupLasso {
                tau: scale(tape, tau_mu, tau_rho),
            },
            LocalScales::Horseshoe {
                beta_mu,
                beta_rho,
                alpha_mu,
                alpha_rho,
            } => {
                let beta = scale(tape, beta_mu, beta_rho);
                let alpha = scale(tape, alpha_mu, alpha_rho);
                BoundLocal::Horseshoe { beta, alpha }
            }
        };
        let sigma = tape.softplus(rho);
        BoundLayer {
            mu,
            rho,
            sigma,
            logit,
            local,
        }
    }
}

fn put(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

fn check_kind(prior: &PriorSpec, state: &LayerVariationalState) -> Result<(), ModelError> {
    if prior.kind.as_str() != state.kind_name() {
        return Err(ModelError::PriorMismatch {
            expected: prior.kind,
            found: state.kind_name(),
        });
    }
    Ok(())
}

/// Draws one sample of the layer's weights and indicators from caller-supplied noise.
#[allow(clippy::too_many_arguments)]
pub fn sample_layer_with_noise(
    tape: &mut Tape,
    state: &LayerVariationalState,
    bound: &BoundLayer,
    global: &GlobalSample,
    prior: &PriorSpec,
    cfg: &RelaxationConfig,
    parameterization: Parameterization,
    noise: &LayerNoise,
) -> Result<SampledLayer, ModelError> {
    check_kind(prior, state)?;
    let raw = gaussian_reparam_with_noise(tape, bound.mu, bound.sigma, noise.weight.clone())?;

    let indicators = match bound.logit {
        Some(l) => Some(gumbel_softmax_logits_with_uniform(tape, l, &noise.uniforms, cfg)?),
        None => None,
    };

    let scale = match parameterization {
        Parameterization::Centered => None,
        Parameterization::NonCentered => match bound.local {
            BoundLocal::None => None,
            BoundLocal::GroupLasso { tau } => {
                // τ* = exp(½ ln τ²)
                let log_tau_sq = gaussian_reparam_with_noise(tape, tau.0, tau.2, noise.local[0].clone())?;
                let half = tape.scale(log_tau_sq, 0.5);
                Some(tape.exp(half))
            }
            BoundLocal::Horseshoe { beta, alpha } => {
                let log_beta = gaussian_reparam_with_noise(tape, beta.0, beta.2, noise.local[0].clone())?;
                let log_alpha = gaussian_reparam_with_noise(tape, alpha.0, alpha.2, noise.local[1].clone())?;
                let mut log_t = tape.add(log_beta, log_alpha)?;
                let log_zeta = global.log_zeta.ok_or_else(|| ModelError::InvalidConfig("horseshoe sample is missing its global scale".into()))?;
                log_t = tape.add(log_t, log_zeta)?;
                // τ*² = c²T/(c²+T) = c² · sigmoid(ln T − ln c²)
                let shifted = tape.offset(log_t, -prior.c_reg_sq.ln());
                let frac = tape.sigmoid(shifted);
                let tau_sq = tape.scale(frac, prior.c_reg_sq);
                Some(tape.sqrt(tau_sq))
            }
        },
    };

    let gate = match (&indicators, scale) {
        (Some(ind), Some(s)) => Some(tape.mul(ind.gate, s)?),
        (Some(ind), None) => Some(ind.gate),
        (None, Some(s)) => Some(s),
        (None, None) => None,
    };
    let weights = match gate {
        Some(g) => tape.scale_rows(raw, g)?,
        None => raw,
    };
    Ok(SampledLayer {
        weights,
        hard: indicators.as_ref().map(|i| i.hard.clone()),
        relaxed: indicators.map(|i| i.relaxed),
        scale,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn sample_layer(
    tape: &mut Tape,
    state: &LayerVariationalState,
    bound: &BoundLayer,
    global: &GlobalSample,
    prior: &PriorSpec,
    cfg: &RelaxationConfig,
    parameterization: Parameterization,
    rng: &mut SeededRng,
) -> Result<SampledLayer, ModelError> {
    let noise = LayerNoise::draw(state, rng);
    sample_layer_with_noise(tape, state, bound, global, prior, cfg, parameterization, &noise)
}

/// `x · Wᵀ + b` where `x` is `[batch × fan_in]` and column 0 of `W` is `b`.
pub fn layer_forward(tape: &mut Tape, x: Var, weights: Var) -> Result<Var, ModelError> {
    let width = tape.value(x).cols();
    let expected = tape.value(weights).cols() - 1;
    if width != expected || tape.value(x).shape().len() != 2 {
        return Err(ModelError::WidthMismatch { expected, found: width });
    }
    let padded = tape.pad_ones(x)?;
    Ok(tape.matmul_nt(padded, weights)?)
}

/// `ln(ζ_b ζ_a)` and `s²` contributions of the horseshoe globals as tape values.
fn horseshoe_global_moments(tape: &mut Tape, global: &BoundGlobal) -> Result<(Var, Var), ModelError> {
    match *global {
        BoundGlobal::Horseshoe { zeta_b, zeta_a } => {
            let m = tape.add(zeta_b.0, zeta_a.0)?;
            let vb = tape.square(zeta_b.2);
            let va = tape.square(zeta_a.2);
            let v = tape.add(vb, va)?;
            Ok((m, v))
        }
        _ => Err(ModelError::InvalidConfig("horseshoe layer requires horseshoe global scales".into())),
    }
}

/// γ-weighted slab KL, Bernoulli KL and local-scale KL of one layer (global terms excluded).
pub fn layer_kl(
    tape: &mut Tape,
    state: &LayerVariationalState,
    bound: &BoundLayer,
    global: &BoundGlobal,
    prior: &PriorSpec,
    lambda: f64,
    parameterization: Parameterization,
) -> Result<Var, ModelError> {
    check_kind(prior, state)?;
    let centered = parameterization == Parameterization::Centered;

    let (e_log, e_inv) = match (bound.local, centered) {
        (_, false) | (BoundLocal::None, true) => (None, None),
        (BoundLocal::GroupLasso { tau }, true) => {
            let einv = kl::tape::lognormal_moment(tape, tau.0, tau.2, true)?;
            (Some(tau.0), Some(einv))
        }
        (BoundLocal::Horseshoe { beta, alpha }, true) => {
            let (gm, gv) = horseshoe_global_moments(tape, global)?;
            let m = tape.add(beta.0, alpha.0)?;
            let m = tape.add(m, gm)?;
            let vb = tape.square(beta.2);
            let va = tape.square(alpha.2);
            let v = tape.add(vb, va)?;
            let v = tape.add(v, gv)?;
            let half_v = tape.scale(v, 0.5);
            // E[ln v] ≈ m − softplus(m + s²/2 − ln c²)
            let x = tape.add(m, half_v)?;
            let x = tape.offset(x, -prior.c_reg_sq.ln());
            let sp = tape.softplus(x);
            let elog = tape.sub(m, sp)?;
            // E[1/v] = exp(−m + s²/2) + 1/c²
            let inv = tape.sub(half_v, m)?;
            let inv = tape.exp(inv);
            let einv = tape.offset(inv, 1.0 / prior.c_reg_sq);
            (Some(elog), Some(einv))
        }
    };
    let slab = kl::tape::slab_rows(tape, bound.mu, bound.sigma, prior.sigma0_sq, e_log, e_inv)?;

    let mut total = match bound.logit {
        Some(l) => {
            let gamma = tape.sigmoid(l);
            let weighted = tape.mul(gamma, slab)?;
            let weighted = tape.sum(weighted);
            if lambda >= 1.0 {
                return Err(ModelError::InvalidConfig("a layer with node selection needs lambda < 1".into()));
            }
            let bern = kl::tape::bernoulli_sum(tape, l, lambda)?;
            tape.add(weighted, bern)?
        }
        None => tape.sum(slab),
    };

    match bound.local {
        BoundLocal::None => {}
        BoundLocal::GroupLasso { tau } => {
            let BoundGlobal::GroupLasso { mu, sigma, .. } = *global else {
                return Err(ModelError::InvalidConfig("group-lasso layer requires group-lasso global scales".into()));
            };
            let rr = kl::tape::lognormal_gamma_random_rate(tape, tau.0, tau.2, mu, sigma, state.fan_in)?;
            let rr = tape.sum(rr);
            total = tape.add(total, rr)?;
        }
        BoundLocal::Horseshoe { beta, alpha } => {
            let kb = kl::tape::lognormal_invgamma(tape, beta.0, beta.2, 0.5, 1.0)?;
            let ka = kl::tape::lognormal_gamma(tape, alpha.0, alpha.2, 0.5, 1.0)?;
            let kb = tape.sum(kb);
            let ka = tape.sum(ka);
            total = tape.add(total, kb)?;
            total = tape.add(total, ka)?;
        }
    }
    Ok(total)
}

/// KL of the network-wide scales, counted once per network.
pub fn global_kl(tape: &mut Tape, global: &BoundGlobal, prior: &PriorSpec) -> Result<Option<Var>, ModelError> {
    Ok(match *global {
        BoundGlobal::None => None,
        BoundGlobal::GroupLasso { mu, sigma, .. } => {
            let k = kl::tape::lognormal_gamma(tape, mu, sigma, prior.a0, prior.b0)?;
            Some(tape.sum(k))
        }
        BoundGlobal::Horseshoe { zeta_b, zeta_a } => {
            let kb = kl::tape::lognormal_invgamma(tape, zeta_b.0, zeta_b.2, 0.5, 1.0)?;
            let ka = kl::tape::lognormal_gamma(tape, zeta_a.0, zeta_a.2, 0.5, 1.0 / prior.d0_sq)?;
            let s = tape.add(kb, ka)?;
            Some(tape.sum(s))
        }
    })
}

/// Draws the horseshoe global factor `ln(ζ_b ζ_a)` for one Monte Carlo sample.
pub fn sample_global_with_noise(tape: &mut Tape, global: &BoundGlobal, noise: [f64; 2]) -> Result<GlobalSample, ModelError> {
    match *global {
        BoundGlobal::Horseshoe { zeta_b, zeta_a } => {
            let lb = gaussian_reparam_with_noise(tape, zeta_b.0, zeta_b.2, Tensor::scalar(noise[0]))?;
            let la = gaussian_reparam_with_noise(tape, zeta_a.0, zeta_a.2, Tensor::scalar(noise[1]))?;
            Ok(GlobalSample {
                log_zeta: Some(tape.add(lb, la)?),
            })
        }
        _ => Ok(GlobalSample::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kl::{expected_kl_gaussian_slab_gl, expected_kl_lognormal_gamma_random_rate, kl_bernoulli, kl_lognormal_gamma, LogNormalParams, GammaParams};
    use crate::autodiff::softplus;

    fn rng() -> SeededRng {
        SeededRng::new(11, 0)
    }

    #[test]
    fn init_respects_he_bound_and_defaults() {
        let s = LayerVariationalState::init(784, 50, PriorKind::SsGl, true, &mut rng());
        let bound = (6.0f64 / 784.0).sqrt();
        assert!(s.weight_mu.data().iter().all(|&m| m.abs() <= bound));
        assert!(s.weight_rho.data().iter().all(|&r| r == INIT_RHO));
        assert!(s.gammas().iter().all(|&g| (g - 0.99).abs() < 1e-12));
        let LocalScales::GroupLasso { tau_mu, .. } = &s.local else { panic!() };
        assert!(tau_mu.data().iter().all(|m| m.abs() <= 0.6));
        assert_eq!(s.weight_mu.shape(), &[50, 785]);
    }

    #[test]
    fn active_nodes_threshold() {
        let mut s = LayerVariationalState::init(2, 2, PriorKind::SsIg, true, &mut rng());
        s.inclusion_logit = Some(Tensor::vector(vec![logit(0.2), logit(0.8)]));
        assert_eq!(s.active_nodes(0.5), vec![false, true]);
        assert_eq!(s.active_nodes(0.0), vec![true, true]);
    }

    #[test]
    fn dropped_rows_are_exact_zeros() {
        let s = LayerVariationalState::init(3, 4, PriorKind::SsIg, true, &mut rng());
        let prior = PriorSpec::new(PriorKind::SsIg, vec![0.5, 1.0]);
        let mut t = Tape::new();
        let b = s.bind(&mut t, true);
        let mut noise = LayerNoise::draw(&s, &mut rng());
        noise.uniforms = vec![1e-12, 0.5, 1e-12, 0.5];
        let out = sample_layer_with_noise(&mut t, &s, &b, &GlobalSample::default(), &prior, &RelaxationConfig::default(), Parameterization::Centered, &noise).unwrap();
        let w = t.value(out.weights);
        assert_eq!(out.hard.as_ref().unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
        for j in [0, 2] {
            assert!(w.row(j).iter().all(|&x| x == 0.0 && x.is_sign_positive()));
        }
        assert!(w.row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn non_centered_at_median_equals_centered() {
        let mut s = LayerVariationalState::init(3, 4, PriorKind::SsGl, true, &mut rng());
        s.local = LocalScales::GroupLasso {
            tau_mu: Tensor::zeros(&[4]),
            tau_rho: Tensor::full(&[4], INIT_RHO),
        };
        let prior = PriorSpec::new(PriorKind::SsGl, vec![0.5, 1.0]);
        let mut noise = LayerNoise::draw(&s, &mut rng());
        noise.local = vec![Tensor::zeros(&[4])];
        let run = |p: Parameterization| {
            let mut t = Tape::new();
            let b = s.bind(&mut t, true);
            let out = sample_layer_with_noise(&mut t, &s, &b, &GlobalSample::default(), &prior, &RelaxationConfig::default(), p, &noise).unwrap();
            t.value(out.weights).clone()
        };
        assert_eq!(run(Parameterization::Centered), run(Parameterization::NonCentered));
    }

    #[test]
    fn horseshoe_scale_is_capped() {
        let mut s = LayerVariationalState::init(2, 1, PriorKind::SsGhs, false, &mut rng());
        // β α ζ_b ζ_a = 10⁶ at median noise
        let l = (1e6f64).ln() / 4.0;
        s.local = LocalScales::Horseshoe {
            beta_mu: Tensor::full(&[1], l),
            beta_rho: Tensor::full(&[1], INIT_RHO),
            alpha_mu: Tensor::full(&[1], l),
            alpha_rho: Tensor::full(&[1], INIT_RHO),
        };
        let g = GlobalScales::Horseshoe {
            zeta_b_mu: Tensor::scalar(l),
            zeta_b_rho: Tensor::scalar(INIT_RHO),
            zeta_a_mu: Tensor::scalar(l),
            zeta_a_rho: Tensor::scalar(INIT_RHO),
        };
        let prior = PriorSpec::new(PriorKind::SsGhs, vec![1.0]);
        let mut t = Tape::new();
        let bg = g.bind(&mut t, true);
        let gs = sample_global_with_noise(&mut t, &bg, [0.0, 0.0]).unwrap();
        let b = s.bind(&mut t, true);
        let out = sample_layer_with_noise(&mut t, &s, &b, &gs, &prior, &RelaxationConfig::default(), Parameterization::NonCentered, &LayerNoise::median(&s)).unwrap();
        let tau = t.value(out.scale.unwrap()).data()[0];
        assert!((tau * tau - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut r = rng();
        let (b, i, o) = (3, 4, 5);
        let x: Vec<f64> = (0..b * i).map(|_| r.standard_normal()).collect();
        let w: Vec<f64> = (0..o * (i + 1)).map(|_| r.standard_normal()).collect();
        let mut t = Tape::new();
        let xv = t.constant(Tensor::matrix(b, i, x.clone()).unwrap());
        let wv = t.constant(Tensor::matrix(o, i + 1, w.clone()).unwrap());
        let out = layer_forward(&mut t, xv, wv).unwrap();
        for r_ in 0..b {
            for c in 0..o {
                let mut acc = w[c * (i + 1)];
                for k in 0..i {
                    acc += x[r_ * i + k] * w[c * (i + 1) + k + 1];
                }
                assert!((t.value(out).get2(r_, c) - acc).abs() < 1e-12);
            }
        }
        let bad = t.constant(Tensor::matrix(b, i + 1, vec![0.0; b * (i + 1)]).unwrap());
        assert!(matches!(layer_forward(&mut t, bad, wv), Err(ModelError::WidthMismatch { .. })));
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        let w = t.constant(Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let out = layer_forward(&mut t, x, w).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, -2.0, 3.5, 0.25]);
    }

    #[test]
    fn group_lasso_toy_layer_kl_matches_scalar_assembly() {
        let mut s = LayerVariationalState::init(1, 1, PriorKind::SsGl, true, &mut rng());
        s.weight_mu = Tensor::matrix(1, 2, vec![0.3, -0.4]).unwrap();
        s.weight_rho = Tensor::matrix(1, 2, vec![-1.0, 0.5]).unwrap();
        s.inclusion_logit = Some(Tensor::vector(vec![0.7]));
        let prior = PriorSpec::new(PriorKind::SsGl, vec![0.2, 1.0]);
        let g = GlobalScales::GroupLasso {
            mu: Tensor::scalar(0.8),
            rho: Tensor::scalar(-1.5),
        };
        let mut t = Tape::new();
        let bg = g.bind(&mut t, true);
        let b = s.bind(&mut t, true);
        let k = layer_kl(&mut t, &s, &b, &bg, &prior, 0.2, Parameterization::Centered).unwrap();

        let LocalScales::GroupLasso { tau_mu, tau_rho } = &s.local else { panic!() };
        let tau = LogNormalParams::new(tau_mu.data()[0], softplus(tau_rho.data()[0])).unwrap();
        let vs = LogNormalParams::new(0.8, softplus(-1.5)).unwrap();
        let gamma = sigmoid(0.7);
        let sig = [softplus(-1.0), softplus(0.5)];
        let want = gamma * expected_kl_gaussian_slab_gl(&[0.3, -0.4], &sig, 1.0, tau).unwrap()
            + kl_bernoulli(gamma, 0.2).unwrap()
            + expected_kl_lognormal_gamma_random_rate(tau, 1, vs).unwrap();
        assert!((t.item(k) - want).abs() < 1e-12);

        let gk = global_kl(&mut t, &bg, &prior).unwrap().unwrap();
        let want_g = kl_lognormal_gamma(vs, GammaParams::new(4.0, 2.0).unwrap());
        assert!((t.item(gk) - want_g).abs() < 1e-12);
    }

    #[test]
    fn all_dropped_leaves_only_bernoulli_terms() {
        let mut s = LayerVariationalState::init(3, 4, PriorKind::SsIg, true, &mut rng());
        s.inclusion_logit = Some(Tensor::full(&[4], -800.0));
        let prior = PriorSpec::new(PriorKind::SsIg, vec![0.3, 1.0]);
        let mut t = Tape::new();
        let b = s.bind(&mut t, true);
        let k = layer_kl(&mut t, &s, &b, &BoundGlobal::None, &prior, 0.3, Parameterization::Centered).unwrap();
        let want = 4.0 * (1.0f64 / 0.7).ln();
        assert!((t.item(k) - want).abs() < 1e-12);
    }

    #[test]
    fn matching_prior_gives_zero() {
        let mut s = LayerVariationalState::init(3, 2, PriorKind::SsIg, false, &mut rng());
        s.weight_mu = Tensor::zeros(&[2, 4]);
        // softplus(ρ) = 1
        s.weight_rho = Tensor::full(&[2, 4], (1f64.exp() - 1.0).ln());
        let prior = PriorSpec::new(PriorKind::SsIg, vec![1.0]);
        let mut t = Tape::new();
        let b = s.bind(&mut t, true);
        let k = layer_kl(&mut t, &s, &b, &BoundGlobal::None, &prior, 1.0, Parameterization::Centered).unwrap();
        assert!(t.item(k).abs() < 1e-12);
    }

    #[test]
    fn prior_mismatch_is_reported() {
        let s = LayerVariationalState::init(3, 2, PriorKind::SsIg, false, &mut rng());
        let prior = PriorSpec::new(PriorKind::SsGl, vec![1.0]);
        let mut t = Tape::new();
        let b = s.bind(&mut t, true);
        assert!(matches!(
            layer_kl(&mut t, &s, &b, &BoundGlobal::None, &prior, 1.0, Parameterization::Centered),
            Err(ModelError::PriorMismatch { .. })
        ));
    }
}
