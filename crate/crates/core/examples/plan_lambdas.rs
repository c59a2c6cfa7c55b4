//! Theory-driven inclusion probabilities for an MLP topology under both mixed priors.

use ssbnn::planner::{Plan, TopologySpec};
use ssbnn::prior::PriorKind;

fn main() {
    let spec = TopologySpec::new(60_000.0, vec![784, 400, 400, 10]);
    for kind in [PriorKind::SsGl, PriorKind::SsGhs] {
        let plan = Plan::compute(kind, &spec).unwrap();
        println!("{kind}");
        print!("{}", plan.to_csv());
        println!();
    }

    println!("lambda_0 against the rate constant C:");
    for c in [0.0, 1e-9, 1e-5, 1e-4, 1e-3] {
        let mut s = spec.clone();
        s.c = Some(vec![c; s.num_layers()]);
        let plan = Plan::compute(PriorKind::SsGl, &s).unwrap();
        println!("  C = {c:<6e}  lambda_0 = {:.6e}", plan.lambda[0]);
    }
}
