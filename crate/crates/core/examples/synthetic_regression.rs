//! Fits a 1-64-1 SS-GL network to noisy `sin(2πx)` data and reports recovery of the teacher.
//!
//! `cargo run --release --example synthetic_regression [epochs]`

use ssbnn::io::dataset::{gen_synthetic, Teacher};
use ssbnn::network::{unit_grid, Activation, BayesianMlp, Likelihood, NetworkConfig};
use ssbnn::planner::{Plan, TopologySpec};
use ssbnn::prior::{Parameterization, PriorKind, PriorSpec};
use ssbnn::sampling::RelaxationConfig;
use ssbnn::train::{train, TrainConfig, TrainData};
use ssbnn::Tensor;

fn main() {
    let epochs = std::env::args().nth(1).map_or(500, |s| s.parse().expect("epochs"));
    let teacher = Teacher::sin(1);
    let (tr, te) = gen_synthetic(&teacher, 2000, 2000, 1.0, 7).unwrap();

    let widths = vec![1, 64, 1];
    let plan = Plan::compute(PriorKind::SsGl, &TopologySpec::new(tr.len() as f64, widths.iter().map(|&w| w as u64).collect())).unwrap();
    let cfg = NetworkConfig {
        widths,
        activation: Activation::Swish,
        likelihood: Likelihood::GaussianRegression,
        parameterization: Parameterization::Centered,
        prior: PriorSpec::new(PriorKind::SsGl, plan.lambda),
        relaxation: RelaxationConfig::default(),
    };
    let mut model = BayesianMlp::new(cfg, 3).unwrap();
    let tc = TrainConfig { epochs, batch_size: 100, lr: 1e-3, seed: 3, eval_every: 50, ..TrainConfig::default() };
    let data = TrainData { x: &tr.inputs, y: &tr.targets, eval: Some((&te.inputs, &te.targets)) };
    train(&mut model, data, &tc, |m| {
        if m.epoch % 50 == 0 {
            println!("epoch {:>4}  elbo {:>9.2}  test rmse {:.4}  active {:?}", m.epoch, m.elbo, m.score, m.sparsity.active_nodes);
        }
    })
    .unwrap();

    let truth = |x: &[f64]| teacher.eval(&Tensor::matrix(1, x.len(), x.to_vec()).unwrap())[0];
    let d = model.kl_to_truth_diagnostic(truth, &unit_grid(1, 1000), 10, 0).unwrap();
    println!("kl to truth {:.4}  squared hellinger {:.5}", d.kl, d.hellinger_sq);
}
