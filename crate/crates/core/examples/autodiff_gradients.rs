//! Builds a small expression on the tape and compares its gradient with central differences.

use ssbnn::{Tape, Tensor};

fn loss(t: &mut Tape, w: ssbnn::Var, x: ssbnn::Var) -> ssbnn::Var {
    let h = t.matmul(x, w).unwrap();
    let h = t.swish(h);
    t.log_sum_exp(h)
}

fn main() {
    let w0 = Tensor::matrix(3, 2, vec![0.4, -0.2, 0.1, 0.7, -0.5, 0.3]).unwrap();
    let x0 = Tensor::matrix(2, 3, vec![1.0, -1.0, 0.5, 0.2, 0.3, -0.8]).unwrap();

    let mut t = Tape::new();
    let w = t.leaf(w0.clone());
    let x = t.constant(x0.clone());
    let root = loss(&mut t, w, x);
    t.backward(root).unwrap();
    let grad = t.grad(w);

    let h = 1e-6;
    println!("{:>5} {:>14} {:>14}", "entry", "analytic", "central diff");
    for i in 0..w0.numel() {
        let eval = |delta: f64| {
            let mut p = w0.clone();
            p.data_mut()[i] += delta;
            let mut t = Tape::new();
            let w = t.leaf(p);
            let x = t.constant(x0.clone());
            let r = loss(&mut t, w, x);
            t.item(r)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        println!("{i:>5} {:>14.9} {fd:>14.9}", grad.data()[i]);
    }
}
