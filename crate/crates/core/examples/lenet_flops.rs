//! FLOPs of LeNet-5 before and after channel and node pruning.

use ssbnn::metrics::{flops_table, parse_architecture, ConvShape, LayerShape, LinearShape};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/lenet5.arch");
    let dense = parse_architecture(&std::fs::read_to_string(path).unwrap()).unwrap();
    print!("{}", flops_table(&dense).unwrap().to_csv());

    // Keep a third of every hidden layer's outputs; inputs follow from the previous layer.
    let last = dense.len() - 1;
    let pruned: Vec<LayerShape> = dense
        .iter()
        .enumerate()
        .map(|(l, s)| match s {
            _ if l == last => s.clone(),
            LayerShape::Conv2d(c) => LayerShape::Conv2d(ConvShape { c_out_pr: c.c_out.div_ceil(3), ..c.clone() }),
            LayerShape::Linear(f) => LayerShape::Linear(LinearShape { o_pr: f.o.div_ceil(3), ..f.clone() }),
        })
        .collect();
    println!();
    print!("{}", flops_table(&pruned).unwrap().to_csv());
}
