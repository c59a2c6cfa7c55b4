//! Run configuration: one flat TOML table.
//!
//! Every key is optional except where a subcommand needs it. Unknown keys are rejected.
//! Command-line `--set key=value` pairs are parsed as TOML values (falling back to a
//! bare string) and replace file values before validation.
//!
//! ```toml
//! prior = "ss-gl"              # ss-ig | ss-gl | ss-ghs
//! parameterization = "centered"
//! widths = [784, 128, 128, 10]
//! likelihood = "categorical"   # or gaussian-regression
//! activation = "swish"
//! lambda = [0.0078, 0.0078, 1.0]  # omitted: planned from n and widths
//! epochs = 30
//! batch_size = 1024
//! lr = 1e-3
//! seed = 1
//! train_x = "data/mnist/train-images-idx3-ubyte.gz"
//! train_y = "data/mnist/train-labels-idx1-ubyte.gz"
//! output_dir = "runs/mnist"
//! ```

use crate::network::{Activation, Likelihood, NetworkConfig};
use crate::planner::{lambda_l, rate_quantities, PlannerError, TopologySpec, DEFAULT_C};
use crate::prior::{Parameterization, PriorKind, PriorSpec};
use crate::sampling::RelaxationConfig;
use crate::train::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override '{0}' is not of the form key=value")]
    Override(String),
    #[error("missing required key '{0}'")]
    Missing(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // network
    pub widths: Option<Vec<usize>>,
    pub prior: Option<PriorKind>,
    pub parameterization: Option<Parameterization>,
    pub activation: Option<Activation>,
    pub likelihood: Option<Likelihood>,
    pub temperature: Option<f64>,
    pub hard_forward: Option<bool>,
    // prior
    pub lambda: Option<Vec<f64>>,
    pub sigma0_sq: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    pub d0_sq: Option<f64>,
    pub c_reg_sq: Option<f64>,
    // training
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mc_samples: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    pub elbo_tolerance: Option<f64>,
    pub eval_every: Option<usize>,
    // topology
    pub n: Option<f64>,
    pub s: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub xi: Option<f64>,
    pub t0: Option<f64>,
    pub t0_prime: Option<f64>,
    pub t0_double_prime: Option<f64>,
    pub c: Option<Vec<f64>>,
    // data and output
    pub train_x: Option<PathBuf>,
    pub train_y: Option<PathBuf>,
    pub test_x: Option<PathBuf>,
    pub test_y: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    /// Keep this many training rows after a seeded shuffle.
    pub train_subset: Option<usize>,
    pub pixel_scale: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

fn parse_override(pair: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = pair.split_once('=').ok_or_else(|| ConfigError::Override(pair.into()))?;
    let key = key.trim().replace('-', "_");
    if key.is_empty() {
        return Err(ConfigError::Override(pair.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()));
    Ok((key, value))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads `path` (if given) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string()).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
    }

    pub fn prior_kind(&self) -> PriorKind {
        self.prior.unwrap_or(PriorKind::SsGl)
    }

    /// Topology for the planner; `k` comes from `widths`.
    pub fn topology(&self) -> Result<TopologySpec, ConfigError> {
        let k: Vec<u64> = self.widths.as_ref().ok_or(ConfigError::Missing("widths"))?.iter().map(|&w| w as u64).collect();
        let n = self.n.ok_or(ConfigError::Missing("n"))?;
        if k.len() < 3 {
            return Err(PlannerError::TooFewLayers(k.len()).into());
        }
        let mut spec = TopologySpec::new(n, k);
        if let Some(s) = &self.s {
            spec.s = s.clone();
        }
        spec.b = self.b.clone();
        spec.xi = self.xi.unwrap_or(0.0);
        spec.t0 = self.t0.unwrap_or(1.0);
        spec.t0_prime = self.t0_prime.unwrap_or(1.0);
        spec.t0_double_prime = self.t0_double_prime.unwrap_or(1.0);
        spec.c_reg_sq = self.c_reg_sq.unwrap_or(1.0);
        spec.c = Some(self.c.clone().unwrap_or_else(|| vec![DEFAULT_C; spec.num_layers()]));
        spec.validate()?;
        Ok(spec)
    }

    /// Explicit `lambda`, or planned values when `n` is known, or 1 everywhere.
    ///
    /// SS-IG has no rate quantities, so its planned values use the SS-GL rates.
    pub fn lambda_for(&self, n_train: Option<usize>) -> Result<Vec<f64>, ConfigError> {
        if let Some(l) = &self.lambda {
            return Ok(l.clone());
        }
        let layers = self.widths.as_ref().ok_or(ConfigError::Missing("widths"))?.len().saturating_sub(1);
        let n = self.n.or(n_train.map(|n| n as f64));
        let Some(n) = n else {
            return Ok(vec![1.0; layers]);
        };
        let mut cfg = self.clone();
        cfg.n = Some(n);
        let spec = cfg.topology()?;
        let kind = match self.prior_kind() {
            PriorKind::SsIg => PriorKind::SsGl,
            k => k,
        };
        let rates = rate_quantities(kind, &spec)?;
        Ok(lambda_l(&spec, &rates.theta))
    }

    pub fn network_config(&self, n_train: Option<usize>) -> Result<NetworkConfig, ConfigError> {
        let widths = self.widths.clone().ok_or(ConfigError::Missing("widths"))?;
        let mut prior = PriorSpec::new(self.prior_kind(), self.lambda_for(n_train)?);
        if let Some(v) = self.sigma0_sq {
            prior.sigma0_sq = v;
        }
        if let Some(v) = self.a0 {
            prior.a0 = v;
        }
        if let Some(v) = self.b0 {
            prior.b0 = v;
        }
        if let Some(v) = self.d0_sq {
            prior.d0_sq = v;
        }
        if let Some(v) = self.c_reg_sq {
            prior.c_reg_sq = v;
        }
        let mut relaxation = RelaxationConfig::default();
        if let Some(t) = self.temperature {
            relaxation.temperature = t;
        }
        if let Some(h) = self.hard_forward {
            relaxation.hard_forward = h;
        }
        let config = NetworkConfig {
            widths,
            activation: self.activation.unwrap_or_default(),
            likelihood: self.likelihood.unwrap_or(Likelihood::Categorical),
            parameterization: self.parameterization.unwrap_or_default(),
            prior,
            relaxation,
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            lr: self.lr.unwrap_or(d.lr),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            momentum: self.momentum.unwrap_or(d.momentum),
            seed: self.seed.ok_or(ConfigError::Missing("seed"))?,
            elbo_tolerance: self.elbo_tolerance,
            eval_every: self.eval_every.unwrap_or(d.eval_every),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks the widths against the data dimensions.
    pub fn check_data_dims(&self, input_dim: usize, output_dim: usize) -> Result<(), ConfigError> {
        let widths = self.widths.as_ref().ok_or(ConfigError::Missing("widths"))?;
        let (first, last) = (widths[0], *widths.last().expect("nonempty"));
        if first != input_dim || last != output_dim {
            return Err(ConfigError::Invalid(format!(
                "widths {widths:?} do not match data with {input_dim} inputs and {output_dim} outputs"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
prior = "ss-ghs"
parameterization = "non-centered"
widths = [784, 128, 128, 10]
epochs = 30
lr = 1e-3
seed = 7
train_x = "data/x.gz"
"#;

    #[test]
    fn roundtrip_is_a_fixed_point() {
        let a = RunConfig::from_toml_str(SAMPLE).unwrap();
        let text = a.to_toml_string();
        let b = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, b.to_toml_string());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("epoch = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, SAMPLE).unwrap();
        let c = RunConfig::load(Some(&p), &["epochs=3".into(), "prior=ss-gl".into(), "batch-size=64".into()]).unwrap();
        assert_eq!(c.epochs, Some(3));
        assert_eq!(c.prior, Some(PriorKind::SsGl));
        assert_eq!(c.batch_size, Some(64));
        assert!(RunConfig::load(Some(&p), &["nonsense".into()]).is_err());
        assert!(RunConfig::load(Some(&p), &["bogus=1".into()]).is_err());
    }

    #[test]
    fn seed_required_and_epochs_validated() {
        let mut c = RunConfig::from_toml_str(SAMPLE).unwrap();
        c.seed = None;
        assert!(matches!(c.train_config(), Err(ConfigError::Missing("seed"))));
        c.seed = Some(1);
        c.epochs = Some(0);
        assert!(matches!(c.train_config(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn planned_lambda_matches_planner() {
        let mut c = RunConfig::from_toml_str("prior = \"ss-gl\"\nwidths = [784, 400, 400, 10]\nn = 60000").unwrap();
        let lam = c.lambda_for(None).unwrap();
        assert!(((lam[0] - 0.0024998737920381238) / lam[0]).abs() < 1e-10);
        assert_eq!(lam[2], 1.0);
        c.n = None;
        assert_eq!(c.lambda_for(None).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn data_dims_checked() {
        let c = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert!(c.check_data_dims(784, 10).is_ok());
        assert!(c.check_data_dims(785, 10).is_err());
    }
}
