//! Trains 784-128-128-10 networks under SS-GL and SS-GHS on the bundled digits and
//! compares accuracy and node sparsity.
//!
//! `cargo run --release --example mnist_sparse [epochs]`

use ssbnn::io::dataset::{load_mnist, Split};
use ssbnn::metrics::SparsityReport;
use ssbnn::network::{Activation, BayesianMlp, Likelihood, NetworkConfig};
use ssbnn::planner::{Plan, TopologySpec};
use ssbnn::prior::{Parameterization, PriorKind, PriorSpec};
use ssbnn::sampling::RelaxationConfig;
use ssbnn::train::{evaluate, train, TrainConfig, TrainData};
use std::path::Path;

fn main() {
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let load = |stem: &str, split| {
        let images = dir.join(format!("{stem}-images-idx3-ubyte.gz"));
        let labels = dir.join(format!("{stem}-labels-idx1-ubyte.gz"));
        load_mnist(&images, &labels, split, 126.0).unwrap()
    };
    let (train_set, test_set) = (load("train", Split::Train), load("test", Split::Test));

    let widths = vec![784, 128, 128, 10];
    let spec = TopologySpec::new(train_set.len() as f64, widths.iter().map(|&w| w as u64).collect());
    for kind in [PriorKind::SsGl, PriorKind::SsGhs] {
        let cfg = NetworkConfig {
            widths: widths.clone(),
            activation: Activation::Swish,
            likelihood: Likelihood::Categorical,
            parameterization: Parameterization::NonCentered,
            prior: PriorSpec::new(kind, Plan::compute(kind, &spec).unwrap().lambda),
            relaxation: RelaxationConfig::default(),
        };
        let mut model = BayesianMlp::new(cfg, 1).unwrap();
        let tc = TrainConfig { epochs, batch_size: 1024, lr: 1e-3, seed: 1, eval_every: epochs, ..TrainConfig::default() };
        let data = TrainData { x: &train_set.inputs, y: &train_set.targets, eval: None };
        train(&mut model, data, &tc, |m| println!("{kind} epoch {:>3}  elbo {:.1}", m.epoch, m.elbo)).unwrap();
        let acc = evaluate(&model, &test_set.inputs, &test_set.targets, 10, 1).unwrap();
        let report = SparsityReport::from_model(&model);
        println!(
            "{kind}: test accuracy {acc:.4}  node sparsity {:?}  compression {:.4}  flops ratio {:.4}",
            report.node_sparsity, report.compression_ratio, report.flops_ratio
        );
    }
}
