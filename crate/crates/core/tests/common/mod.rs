#![allow(dead_code)]

use ssbnn::io::dataset::{gen_synthetic, load_mnist, Dataset, Split, Teacher};
use ssbnn::network::{Activation, BayesianMlp, Likelihood, NetworkConfig, NetworkNoise, Targets};
use ssbnn::planner::{lambda_l, rate_quantities, TopologySpec};
use ssbnn::prior::{Parameterization, PriorKind, PriorSpec};
use ssbnn::sampling::{Purpose, RelaxationConfig, SeededRng};
use ssbnn::train::{train, MetricTrace, TrainConfig, TrainData};
use ssbnn::{Tape, Tensor};
use std::path::{Path, PathBuf};

pub const KINDS: [PriorKind; 3] = [PriorKind::SsIg, PriorKind::SsGl, PriorKind::SsGhs];
pub const PARAMS: [Parameterization; 2] = [Parameterization::Centered, Parameterization::NonCentered];

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(
    kind: PriorKind,
    param: Parameterization,
    widths: Vec<usize>,
    likelihood: Likelihood,
    lambda: Vec<f64>,
) -> NetworkConfig {
    NetworkConfig {
        widths,
        activation: Activation::Swish,
        likelihood,
        parameterization: param,
        prior: PriorSpec::new(kind, lambda),
        relaxation: RelaxationConfig::default(),
    }
}

/// Hidden layers at `lambda_hidden`, output layer at 1.
pub fn lambdas(layers: usize, lambda_hidden: f64) -> Vec<f64> {
    let mut l = vec![lambda_hidden; layers];
    l[layers - 1] = 1.0;
    l
}

/// Moves every variational parameter to a generic point so no term sits at a symmetric spot.
pub fn randomize(model: &mut BayesianMlp, seed: u64) {
    let mut rng = SeededRng::new(seed, 77);
    let names = model.param_names();
    for (name, t) in names.iter().zip(model.params_mut()) {
        for v in t.data_mut() {
            *v = if name.ends_with("rho") {
                rng.uniform_range(-2.5, -0.5)
            } else if name.ends_with("inclusion_logit") {
                rng.uniform_range(-1.5, 1.5)
            } else if name.starts_with("global") {
                rng.uniform_range(-0.3, 0.3)
            } else {
                rng.uniform_range(-0.8, 0.8)
            };
        }
    }
}

pub fn toy_batch(widths: &[usize], likelihood: Likelihood, rows: usize, seed: u64) -> (Tensor, Targets) {
    let mut rng = SeededRng::new(seed, 91);
    let x = Tensor::from_fn(&[rows, widths[0]], |_| rng.uniform_range(-1.0, 1.0));
    let out = *widths.last().unwrap();
    let y = match likelihood {
        Likelihood::Categorical => Targets::Classes {
            labels: (0..rows).map(|_| rng.below(out)).collect(),
            num_classes: out,
        },
        Likelihood::GaussianRegression => Targets::Values(Tensor::from_fn(&[rows, out], |_| rng.standard_normal())),
    };
    (x, y)
}

/// Negative ELBO value with frozen noise.
pub fn elbo_value(model: &BayesianMlp, x: &Tensor, y: &Targets, n: usize, noise: &[NetworkNoise]) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let terms = model.negative_elbo_with_noise(&mut tape, &bound, x, y, n, noise).unwrap();
    tape.item(terms.total)
}

/// Negative ELBO gradients in `params_mut` order.
pub fn elbo_grads(model: &BayesianMlp, x: &Tensor, y: &Targets, n: usize, noise: &[NetworkNoise]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let terms = model.negative_elbo_with_noise(&mut tape, &bound, x, y, n, noise).unwrap();
    tape.backward(terms.total).unwrap();
    bound.leaves().into_iter().map(|v| tape.grad(v)).collect()
}

/// Largest `|analytic − fd| / max(1, |fd|)` over every parameter entry, with its name.
pub fn max_fd_error(model: &BayesianMlp, x: &Tensor, y: &Targets, n: usize, noise: &[NetworkNoise], h: f64) -> (f64, String) {
    let grads = elbo_grads(model, x, y, n, noise);
    let names = model.param_names();
    let mut worst = (0.0, String::new());
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.numel() {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[i] -= h;
            let fd = (elbo_value(&plus, x, y, n, noise) - elbo_value(&minus, x, y, n, noise)) / (2.0 * h);
            let err = (g.data()[i] - fd).abs() / fd.abs().max(1.0);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]", names[p]));
            }
        }
    }
    worst
}

/// Network outputs for one posterior draw with the given noise.
pub fn outputs(model: &BayesianMlp, x: &Tensor, noise: &NetworkNoise) -> Tensor {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let sampled = model.sample_with_noise(&mut tape, &bound, noise).unwrap();
    let xv = tape.constant(x.clone());
    let eta = model.forward(&mut tape, xv, &sampled).unwrap();
    tape.value(eta).clone()
}

/// Hard indicators of every layer for one draw (`None` where selection is off).
pub fn hard_indicators(model: &BayesianMlp, noise: &NetworkNoise) -> Vec<Option<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let sampled = model.sample_with_noise(&mut tape, &bound, noise).unwrap();
    sampled.iter().map(|s| s.hard.as_ref().map(|h| h.data().to_vec())).collect()
}

pub struct SparsityCheck {
    pub pruned_nodes: usize,
    pub violations: Vec<String>,
}

/// Perturbs every parameter attached to nodes whose hard indicator is 0 in this draw and
/// checks the outputs stay bitwise identical.
///
/// Perturbed: row `j` of the layer's weight means and ρ, the node's local scale
/// parameters, and column `j + 1` of the next layer's weight means and ρ.
pub fn exact_sparsity_check(model: &BayesianMlp, x: &Tensor, noise: &NetworkNoise, seed: u64) -> SparsityCheck {
    let base = outputs(model, x, noise);
    let hard = hard_indicators(model, noise);
    let mut rng = SeededRng::new(seed, 5);
    let mut pruned_nodes = 0;
    let mut violations = Vec::new();
    for (l, z) in hard.iter().enumerate() {
        let Some(z) = z else { continue };
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                continue;
            }
            pruned_nodes += 1;
            let mut m = model.clone();
            let layer = &mut m.layers[l];
            let cols = layer.fan_in + 1;
            for k in 0..cols {
                layer.weight_mu.data_mut()[j * cols + k] += rng.uniform_range(-50.0, 50.0);
                layer.weight_rho.data_mut()[j * cols + k] += rng.uniform_range(-3.0, 3.0);
            }
            for t in local_params_mut(layer) {
                t.data_mut()[j] += rng.uniform_range(-2.0, 2.0);
            }
            if l + 1 < m.layers.len() {
                let next = &mut m.layers[l + 1];
                let cols = next.fan_in + 1;
                for r in 0..next.fan_out {
                    next.weight_mu.data_mut()[r * cols + j + 1] += rng.uniform_range(-50.0, 50.0);
                    next.weight_rho.data_mut()[r * cols + j + 1] += rng.uniform_range(-3.0, 3.0);
                }
            }
            let after = outputs(&m, x, noise);
            let same = base.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                violations.push(format!("layer {l} node {j}"));
            }
        }
    }
    SparsityCheck { pruned_nodes, violations }
}

fn local_params_mut(layer: &mut ssbnn::layer::LayerVariationalState) -> Vec<&mut Tensor> {
    use ssbnn::layer::LocalScales;
    match &mut layer.local {
        LocalScales::None => vec![],
        LocalScales::GroupLasso { tau_mu, tau_rho } => vec![tau_mu, tau_rho],
        LocalScales::Horseshoe {
            beta_mu,
            beta_rho,
            alpha_mu,
            alpha_rho,
        } => vec![beta_mu, beta_rho, alpha_mu, alpha_rho],
    }
}

pub fn mnist_split() -> (Dataset, Dataset) {
    let d = repo_root().join("data/mnist");
    let tr = load_mnist(
        &d.join("train-images-idx3-ubyte.gz"),
        &d.join("train-labels-idx1-ubyte.gz"),
        Split::Train,
        126.0,
    )
    .expect("bundled training images");
    let te = load_mnist(
        &d.join("test-images-idx3-ubyte.gz"),
        &d.join("test-labels-idx1-ubyte.gz"),
        Split::Test,
        126.0,
    )
    .expect("bundled test images");
    (tr, te)
}

pub fn planned_lambda(kind: PriorKind, n: usize, widths: &[usize]) -> Vec<f64> {
    let spec = TopologySpec::new(n as f64, widths.iter().map(|&w| w as u64).collect());
    let rates_kind = if kind == PriorKind::SsIg { PriorKind::SsGl } else { kind };
    lambda_l(&spec, &rate_quantities(rates_kind, &spec).unwrap().theta)
}

pub struct MnistRun {
    pub model: BayesianMlp,
    pub trace: MetricTrace,
}

/// 784-128-128-10 on the bundled split: 30 epochs, batch 1024, Adam at 1e-3.
pub fn mnist_run(kind: PriorKind, seed: u64, tr: &Dataset, te: &Dataset) -> MnistRun {
    let widths = vec![784, 128, 128, 10];
    let lambda = planned_lambda(kind, tr.len(), &widths);
    let mut model = BayesianMlp::new(config(kind, Parameterization::Centered, widths, Likelihood::Categorical, lambda), seed).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 1024,
        lr: 1e-3,
        seed,
        eval_every: 30,
        ..TrainConfig::default()
    };
    let out = train(
        &mut model,
        TrainData {
            x: &tr.inputs,
            y: &tr.targets,
            eval: Some((&te.inputs, &te.targets)),
        },
        &tc,
        |_| {},
    )
    .unwrap();
    MnistRun { model, trace: out.trace }
}

pub fn sin_teacher() -> Teacher {
    Teacher::sin(1)
}

/// 1-64-1 SS-GL on 2000 noisy sin samples: 500 epochs, batch 100, Adam at 1e-3.
pub fn synthetic_run(data_seed: u64, seed: u64) -> (BayesianMlp, MetricTrace) {
    let (tr, te) = gen_synthetic(&sin_teacher(), 2000, 2000, 1.0, data_seed).unwrap();
    let widths = vec![1, 64, 1];
    let lambda = planned_lambda(PriorKind::SsGl, tr.len(), &widths);
    let mut model = BayesianMlp::new(
        config(PriorKind::SsGl, Parameterization::Centered, widths, Likelihood::GaussianRegression, lambda),
        seed,
    )
    .unwrap();
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 100,
        lr: 1e-3,
        seed,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let out = train(
        &mut model,
        TrainData {
            x: &tr.inputs,
            y: &tr.targets,
            eval: Some((&te.inputs, &te.targets)),
        },
        &tc,
        |_| {},
    )
    .unwrap();
    (model, out.trace)
}

pub fn draw(model: &BayesianMlp, seed: u64, step: u64) -> NetworkNoise {
    model.draw_noise(seed, Purpose::Test, step, 0)
}
