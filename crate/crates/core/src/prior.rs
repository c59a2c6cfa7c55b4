//! Prior families and their fixed hyperparameters.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("unknown prior '{0}' (expected ss-ig, ss-gl or ss-ghs)")]
    UnknownKind(String),
    #[error("unknown parameterization '{0}' (expected centered or non-centered)")]
    UnknownParameterization(String),
    #[error("{name} must be positive, found {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("lambda has {found} entries but the network has {expected} layers")]
    LambdaLength { expected: usize, found: usize },
    #[error("lambda[{layer}] = {value} is outside (0, 1]")]
    LambdaRange { layer: usize, value: f64 },
    #[error("the output layer's lambda must be 1, found {0}")]
    OutputLambda(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    /// Gaussian slab with fixed variance `σ₀²`.
    #[serde(rename = "ss-ig")]
    SsIg,
    /// Group-lasso slab: Gamma-mixed variance with a shared global rate.
    #[serde(rename = "ss-gl")]
    SsGl,
    /// Regularized group-horseshoe slab.
    #[serde(rename = "ss-ghs")]
    SsGhs,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::SsIg => "ss-ig",
            PriorKind::SsGl => "ss-gl",
            PriorKind::SsGhs => "ss-ghs",
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorKind {
    type Err = PriorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ss-ig" | "ig" => Ok(PriorKind::SsIg),
            "ss-gl" | "gl" => Ok(PriorKind::SsGl),
            "ss-ghs" | "ghs" => Ok(PriorKind::SsGhs),
            _ => Err(PriorError::UnknownKind(s.to_string())),
        }
    }
}

/// How slab weights are expressed relative to their scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `w ~ N(0, σ₀² v)` directly.
    #[default]
    Centered,
    /// `w = τ* w⁰` with `w⁰ ~ N(0, σ₀²)`.
    NonCentered,
}

impl FromStr for Parameterization {
    type Err = PriorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "centered" => Ok(Parameterization::Centered),
            "non-centered" | "noncentered" => Ok(Parameterization::NonCentered),
            _ => Err(PriorError::UnknownParameterization(s.to_string())),
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::Centered => "centered",
            Parameterization::NonCentered => "non-centered",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Base slab variance.
    pub sigma0_sq: f64,
    /// Shape and rate of the Gamma prior on the global group-lasso scale.
    pub a0: f64,
    pub b0: f64,
    /// Squared scale of the horseshoe global half-Cauchy.
    pub d0_sq: f64,
    /// Squared slab width cap of the regularized horseshoe.
    pub c_reg_sq: f64,
    /// Prior inclusion probability per layer, output layer last (always 1).
    pub lambda: Vec<f64>,
}

impl PriorSpec {
    /// Default hyperparameters with the given inclusion probabilities.
    pub fn new(kind: PriorKind, lambda: Vec<f64>) -> Self {
        Self {
            kind,
            sigma0_sq: 1.0,
            a0: 4.0,
            b0: 2.0,
            d0_sq: 1.0,
            c_reg_sq: 1.0,
            lambda,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<(), PriorError> {
        for (name, value) in [
            ("sigma0_sq", self.sigma0_sq),
            ("a0", self.a0),
            ("b0", self.b0),
            ("d0_sq", self.d0_sq),
            ("c_reg_sq", self.c_reg_sq),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PriorError::NonPositive { name, value });
            }
        }
        if self.lambda.len() != num_layers {
            return Err(PriorError::LambdaLength {
                expected: num_layers,
                found: self.lambda.len(),
            });
        }
        for (layer, &value) in self.lambda.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(PriorError::LambdaRange { layer, value });
            }
        }
        let last = *self.lambda.last().expect("at least one layer");
        if last != 1.0 {
            return Err(PriorError::OutputLambda(last));
        }
        Ok(())
    }
}
