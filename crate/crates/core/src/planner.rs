//! Rate quantities, contraction radius and layer-wise inclusion probabilities.
//!
//! For a topology with widths `k = (k₀, …, k_{L+1})`:
//!
//! ```text
//! u_l = log n + log L + Σ_m log k_m + Σ_m log k_{m+1}      (+ log c_reg² for SS-GHS)
//! ϑ_l = −log(B_l² p_l/(k_l+1)) + B_l² p_l/(k_l+1) + 2 log n + 2L + 2 Σ_m log B_m
//! r_l = s_l (k_l+1) ϑ_l / n
//! ε_n = √((Σ r_l + ξ) Σ u_l)
//! λ_l = exp(−C_l (k_l+1) ϑ_l) / k_{l+1}
//! ```
//!
//! with penalty `p_l = 1/(t₀″(k_l+1))` for SS-GL and `p_l = 1/(t₀t₀′) + 1/c_reg²` for
//! SS-GHS. `log L` is taken as printed; the prior-mass argument behind it would give
//! `log(L+1)`, which differs only by a constant.

use crate::prior::PriorKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp on planned inclusion probabilities.
pub const LAMBDA_FLOOR: f64 = 1e-50;
pub const DEFAULT_C: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("{name} must be positive, found {value}")]
    NonPositive { name: String, value: f64 },
    #[error("need at least one hidden layer (k has {0} entries)")]
    TooFewLayers(usize),
    #[error("{name} has {found} entries, expected {expected}")]
    Length { name: &'static str, expected: usize, found: usize },
    #[error("s[{layer}] = {s} exceeds the layer width {width}")]
    SparsityExceedsWidth { layer: usize, s: f64, width: u64 },
    #[error("SS-IG has no rate quantities")]
    UnsupportedPrior,
}

fn default_one() -> f64 {
    1.0
}

/// Network topology and theory constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// Training sample size.
    pub n: f64,
    /// Widths `k₀, …, k_{L+1}`.
    pub k: Vec<u64>,
    /// Node sparsity bound of each layer `0..=L`.
    pub s: Vec<f64>,
    /// Norm bound of each layer; defaults to `k_l + 1`.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub xi: f64,
    #[serde(default = "default_one")]
    pub t0: f64,
    #[serde(default = "default_one")]
    pub t0_prime: f64,
    #[serde(default = "default_one")]
    pub t0_double_prime: f64,
    #[serde(default = "default_one")]
    pub c_reg_sq: f64,
    /// Per-layer `C_l`; defaults to `1e-9` everywhere.
    #[serde(default)]
    pub c: Option<Vec<f64>>,
}

impl TopologySpec {
    /// Spec with `s_l = k_{l+1}`, `ξ = 0` and all constants at their defaults.
    pub fn new(n: f64, k: Vec<u64>) -> Self {
        let s = k[1..].iter().map(|&w| w as f64).collect();
        Self {
            n,
            k,
            s,
            b: None,
            xi: 0.0,
            t0: 1.0,
            t0_prime: 1.0,
            t0_double_prime: 1.0,
            c_reg_sq: 1.0,
            c: None,
        }
    }

    /// Number of hidden layers `L`.
    pub fn hidden_layers(&self) -> usize {
        self.k.len().saturating_sub(2)
    }

    /// Layers `0..=L`, one per weight matrix.
    pub fn num_layers(&self) -> usize {
        self.k.len().saturating_sub(1)
    }

    pub fn norm_bounds(&self) -> Vec<f64> {
        self.b
            .clone()
            .unwrap_or_else(|| self.k[..self.num_layers()].iter().map(|&k| (k + 1) as f64).collect())
    }

    pub fn c_constants(&self) -> Vec<f64> {
        self.c.clone().unwrap_or_else(|| vec![DEFAULT_C; self.num_layers()])
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.k.len() < 3 {
            return Err(PlannerError::TooFewLayers(self.k.len()));
        }
        let layers = self.num_layers();
        let pos = |name: String, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(PlannerError::NonPositive { name, value })
            }
        };
        pos("n".into(), self.n)?;
        for (i, &k) in self.k.iter().enumerate() {
            pos(format!("k[{i}]"), k as f64)?;
        }
        let check_len = |name, v: &[f64]| {
            if v.len() == layers {
                Ok(())
            } else {
                Err(PlannerError::Length { name, expected: layers, found: v.len() })
            }
        };
        check_len("s", &self.s)?;
        for (l, &s) in self.s.iter().enumerate() {
            pos(format!("s[{l}]"), s)?;
            if s > self.k[l + 1] as f64 {
                return Err(PlannerError::SparsityExceedsWidth { layer: l, s, width: self.k[l + 1] });
            }
        }
        let b = self.norm_bounds();
        check_len("b", &b)?;
        for (l, &v) in b.iter().enumerate() {
            pos(format!("b[{l}]"), v)?;
        }
        let c = self.c_constants();
        check_len("c", &c)?;
        for (l, &v) in c.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PlannerError::NonPositive { name: format!("c[{l}]"), value: v });
            }
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(PlannerError::NonPositive { name: "xi".into(), value: self.xi });
        }
        for (name, v) in [
            ("t0", self.t0),
            ("t0_prime", self.t0_prime),
            ("t0_double_prime", self.t0_double_prime),
            ("c_reg_sq", self.c_reg_sq),
        ] {
            pos(name.into(), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateQuantities {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
}

/// `−log x + x`, minimized at `x = 1`.
pub fn penalized_rate_term(x: f64) -> f64 {
    -x.ln() + x
}

fn rates(spec: &TopologySpec, penalty: impl Fn(usize) -> f64, u_extra: f64) -> Result<RateQuantities, PlannerError> {
    spec.validate()?;
    let layers = spec.num_layers();
    let big_l = spec.hidden_layers() as f64;
    let b = spec.norm_bounds();
    let k = |l: usize| spec.k[l] as f64;
    let log_k_sum: f64 = (0..layers).map(|l| k(l).ln() + k(l + 1).ln()).sum();
    let u_l = spec.n.ln() + big_l.ln() + log_k_sum + u_extra;
    let shared = 2.0 * spec.n.ln() + 2.0 * big_l + 2.0 * b.iter().map(|v| v.ln()).sum::<f64>();
    let mut out = RateQuantities { u: vec![u_l; layers], theta: Vec::with_capacity(layers), r: Vec::with_capacity(layers) };
    for l in 0..layers {
        let arg = b[l] * b[l] / (k(l) + 1.0) * penalty(l);
        if !(arg > 0.0 && arg.is_finite()) {
            return Err(PlannerError::NonPositive { name: format!("penalty argument of layer {l}"), value: arg });
        }
        let theta = penalized_rate_term(arg) + shared;
        out.r.push(spec.s[l] * (k(l) + 1.0) * theta / spec.n);
        out.theta.push(theta);
    }
    Ok(out)
}

pub fn rate_quantities_gl(spec: &TopologySpec) -> Result<RateQuantities, PlannerError> {
    rates(spec, |l| 1.0 / (spec.t0_double_prime * (spec.k[l] as f64 + 1.0)), 0.0)
}

/// SS-GHS penalty `1/(t₀t₀′) + 1/c_reg²`.
pub fn ghs_penalty(spec: &TopologySpec) -> f64 {
    1.0 / (spec.t0 * spec.t0_prime) + 1.0 / spec.c_reg_sq
}

pub fn rate_quantities_ghs(spec: &TopologySpec) -> Result<RateQuantities, PlannerError> {
    let pen = ghs_penalty(spec);
    rates(spec, |_| pen, spec.c_reg_sq.ln())
}

pub fn rate_quantities(kind: PriorKind, spec: &TopologySpec) -> Result<RateQuantities, PlannerError> {
    match kind {
        PriorKind::SsGl => rate_quantities_gl(spec),
        PriorKind::SsGhs => rate_quantities_ghs(spec),
        PriorKind::SsIg => Err(PlannerError::UnsupportedPrior),
    }
}

pub fn epsilon_n(xi: f64, rates: &RateQuantities) -> f64 {
    let r: f64 = rates.r.iter().sum();
    let u: f64 = rates.u.iter().sum();
    ((r + xi) * u).sqrt()
}

/// Inclusion probabilities for every layer, the output layer fixed at 1.
pub fn lambda_l(spec: &TopologySpec, theta: &[f64]) -> Vec<f64> {
    let c = spec.c_constants();
    let last = theta.len().saturating_sub(1);
    theta
        .iter()
        .enumerate()
        .map(|(l, &th)| {
            if l == last {
                1.0
            } else {
                let k_in = spec.k[l] as f64 + 1.0;
                ((-c[l] * k_in * th).exp() / spec.k[l + 1] as f64).max(LAMBDA_FLOOR)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub prior: PriorKind,
    pub rates: RateQuantities,
    pub lambda: Vec<f64>,
    pub epsilon_n: f64,
}

impl Plan {
    pub fn compute(kind: PriorKind, spec: &TopologySpec) -> Result<Self, PlannerError> {
        let rates = rate_quantities(kind, spec)?;
        Ok(Self {
            prior: kind,
            lambda: lambda_l(spec, &rates.theta),
            epsilon_n: epsilon_n(spec.xi, &rates),
            rates,
        })
    }

    /// `layer,u,theta,r,lambda` rows followed by an `epsilon_n` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "u", "theta", "r", "lambda"]).expect("memory write");
        for l in 0..self.lambda.len() {
            w.write_record([
                l.to_string(),
                format!("{:.12e}", self.rates.u[l]),
                format!("{:.12e}", self.rates.theta[l]),
                format!("{:.12e}", self.rates.r[l]),
                format!("{:.12e}", self.lambda[l]),
            ])
            .expect("memory write");
        }
        w.write_record(["epsilon_n".to_string(), format!("{:.12e}", self.epsilon_n), String::new(), String::new(), String::new()])
            .expect("memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Topology of the smoothness regime with `α`-smooth truth on `[0,1]^p`.
///
/// `L = ⌈log n⌉`, hidden width `⌈n^{p(1−ρ)/(2α+p)}/log n⌉`, `s_l = ⌈n^{pρ/(2α+p)}⌉` capped
/// at the layer width, `ξ = n^{−2α/(2α+p)}` and one output.
pub fn smoothness_regime(n: f64, alpha: f64, p: u64, rho: f64) -> TopologySpec {
    let pf = p as f64;
    let depth = n.ln().ceil() as usize;
    let width = (n.powf(pf * (1.0 - rho) / (2.0 * alpha + pf)) / n.ln()).ceil().max(1.0) as u64;
    let s = n.powf(pf * rho / (2.0 * alpha + pf)).ceil();
    let mut k = vec![p];
    k.extend(std::iter::repeat_n(width, depth));
    k.push(1);
    let mut spec = TopologySpec::new(n, k);
    spec.s = spec.k[1..].iter().map(|&w| s.min(w as f64)).collect();
    spec.xi = n.powf(-2.0 * alpha / (2.0 * alpha + pf));
    spec
}

/// The minimax rate `n^{−α/(α+p)}` that ε_n is compared against.
pub fn reference_rate(n: f64, alpha: f64, p: u64) -> f64 {
    n.powf(-alpha / (alpha + p as f64))
}
