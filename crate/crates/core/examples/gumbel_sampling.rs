//! Relaxed Bernoulli draws at several temperatures, and reproducible seeded streams.

use ssbnn::sampling::{sample_gumbel_softmax, Purpose, RelaxationConfig, SeededRng};

fn main() {
    let gamma = 0.7;
    for temperature in [2.0, 0.5, 0.1, 0.01] {
        let cfg = RelaxationConfig { temperature, hard_forward: true };
        let mut rng = SeededRng::new(42, 0);
        let n = 20_000;
        let (mut soft, mut hard, mut saturated) = (0.0, 0.0, 0usize);
        for _ in 0..n {
            let (z, h) = sample_gumbel_softmax(gamma, &cfg, &mut rng).unwrap();
            soft += z;
            hard += h as f64;
            saturated += usize::from(!(0.01..=0.99).contains(&z));
        }
        println!(
            "temperature {temperature:<5} mean relaxed {:.4}  mean hard {:.4}  saturated {:.3}",
            soft / n as f64,
            hard / n as f64,
            saturated as f64 / n as f64
        );
    }

    let a: Vec<f64> = (0..3).map({
        let mut r = SeededRng::for_purpose(7, Purpose::Train, 12, 0, 1);
        move |_| r.standard_normal()
    }).collect();
    let b: Vec<f64> = (0..3).map({
        let mut r = SeededRng::for_purpose(7, Purpose::Train, 12, 0, 1);
        move |_| r.standard_normal()
    }).collect();
    println!("same (seed, stream) twice: {a:?} == {b:?}");
}
