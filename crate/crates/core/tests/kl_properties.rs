//! KL terms: non-negativity, tape gradients against central differences and Monte Carlo spot checks.

use proptest::prelude::*;
use ssbnn::kl::{self, tape as klt, GammaParams, InvGammaParams, LogNormalParams};
use ssbnn::sampling::SeededRng;
use ssbnn::{Tape, Tensor, Var};
use statrs::distribution::{Continuous, Gamma, LogNormal, Normal};

const H: f64 = 1e-6;

fn ln(mu: f64, sigma: f64) -> LogNormalParams {
    LogNormalParams::new(mu, sigma).unwrap()
}

/// Checks every input gradient of `f` against central differences.
fn fd_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> Result<(), String> {
    let eval = |vals: &[Tensor]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = f(&mut t, &vars);
        let total = t.sum(out);
        t.item(total)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let out = f(&mut t, &vars);
    let total = t.sum(out);
    t.backward(total).map_err(|e| e.to_string())?;
    for (k, v) in vars.iter().enumerate() {
        let g = t.grad(*v);
        for i in 0..g.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let err = (g.data()[i] - fd).abs() / fd.abs().max(1.0);
            if err >= 1e-5 {
                return Err(format!("input {k}[{i}]: analytic {} fd {fd}", g.data()[i]));
            }
        }
    }
    Ok(())
}

fn vec_in(lo: f64, hi: f64, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn scalar_terms_are_non_negative(
        g in 0.001f64..1.0, l in 0.001f64..0.999,
        mu in vec_in(-3.0, 3.0, 4), sigma in vec_in(0.01, 3.0, 4), s0 in 0.05f64..5.0,
        qm in -3.0f64..3.0, qs in 0.01f64..3.0, a in 0.1f64..8.0, b in 0.1f64..8.0,
        vm in -3.0f64..3.0, vs in 0.01f64..3.0, k in 1usize..50,
    ) {
        let q = ln(qm, qs);
        let values = [
            kl::kl_bernoulli(g, l).unwrap(),
            kl::kl_gaussian(&mu, &sigma, s0).unwrap(),
            kl::expected_kl_gaussian_slab_gl(&mu, &sigma, s0, q).unwrap(),
            kl::kl_lognormal_gamma(q, GammaParams::new(a, b).unwrap()),
            kl::kl_lognormal_invgamma(q, InvGammaParams::new(a, b).unwrap()),
            kl::expected_kl_lognormal_gamma_random_rate(q, k, ln(vm, vs)).unwrap(),
        ];
        for v in values {
            prop_assert!(v >= -1e-10, "negative KL {}", v);
        }
    }

    #[test]
    fn bernoulli_tape_gradient(logits in vec_in(-4.0, 4.0, 5), l in 0.01f64..0.99) {
        fd_check(&[Tensor::vector(logits)], |t, v| klt::bernoulli_sum(t, v[0], l).unwrap())
            .map_err(TestCaseError::fail)?;
    }

    #[test]
    fn slab_rows_tape_gradient(
        mu in vec_in(-2.0, 2.0, 6), sigma in vec_in(0.1, 2.0, 6),
        elog in vec_in(-1.0, 1.0, 2), einv in vec_in(0.2, 3.0, 2), s0 in 0.2f64..3.0,
    ) {
        let inputs = [
            Tensor::matrix(2, 3, mu).unwrap(),
            Tensor::matrix(2, 3, sigma).unwrap(),
            Tensor::vector(elog),
            Tensor::vector(einv),
        ];
        fd_check(&inputs, |t, v| klt::slab_rows(t, v[0], v[1], s0, Some(v[2]), Some(v[3])).unwrap())
            .map_err(TestCaseError::fail)?;
    }

    #[test]
    fn lognormal_tape_gradients(
        mu in vec_in(-2.0, 2.0, 3), sigma in vec_in(0.05, 2.0, 3),
        a in 0.2f64..6.0, b in 0.2f64..4.0,
        vm in -1.5f64..1.5, vs in 0.05f64..1.5, k in 1usize..20,
    ) {
        let inputs = [Tensor::vector(mu), Tensor::vector(sigma)];
        fd_check(&inputs, |t, v| klt::lognormal_gamma(t, v[0], v[1], a, b).unwrap())
            .map_err(TestCaseError::fail)?;
        fd_check(&inputs, |t, v| klt::lognormal_invgamma(t, v[0], v[1], a, b).unwrap())
            .map_err(TestCaseError::fail)?;
        let with_global = [inputs[0].clone(), inputs[1].clone(), Tensor::vector(vec![vm; 3]), Tensor::vector(vec![vs; 3])];
        fd_check(&with_global, |t, v| klt::lognormal_gamma_random_rate(t, v[0], v[1], v[2], v[3], k).unwrap())
            .map_err(TestCaseError::fail)?;
    }

    #[test]
    fn tape_builders_agree_with_scalar_forms(qm in -2.0f64..2.0, qs in 0.05f64..2.0, a in 0.2f64..6.0, b in 0.2f64..4.0) {
        let mut t = Tape::new();
        let m = t.constant(Tensor::vector(vec![qm]));
        let s = t.constant(Tensor::vector(vec![qs]));
        let g = klt::lognormal_gamma(&mut t, m, s, a, b).unwrap();
        let ig = klt::lognormal_invgamma(&mut t, m, s, a, b).unwrap();
        let want_g = kl::kl_lognormal_gamma(ln(qm, qs), GammaParams::new(a, b).unwrap());
        let want_ig = kl::kl_lognormal_invgamma(ln(qm, qs), InvGammaParams::new(a, b).unwrap());
        prop_assert!((t.value(g).data()[0] - want_g).abs() < 1e-10 * want_g.abs().max(1.0));
        prop_assert!((t.value(ig).data()[0] - want_ig).abs() < 1e-10 * want_ig.abs().max(1.0));
    }
}

/// Sample mean and standard error over 10⁶ draws.
fn mc(seed: u64, mut f: impl FnMut(&mut SeededRng) -> f64) -> (f64, f64) {
    let n = 1_000_000;
    let mut r = SeededRng::new(seed, 0);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = f(&mut r);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
}

fn within_3se(cf: f64, (mean, se): (f64, f64)) {
    assert!((cf - mean).abs() < 3.0 * se, "closed form {cf}, Monte Carlo {mean} ± {se}");
}

#[test]
fn gl_slab_spot_check() {
    let (mu, sigma, tau) = ([0.3, -0.2], [0.5, 0.8], ln(0.2, 0.4));
    let cf = kl::expected_kl_gaussian_slab_gl(&mu, &sigma, 1.0, tau).unwrap();
    within_3se(
        cf,
        mc(11, |r| {
            let v = (tau.mu + tau.sigma * r.standard_normal()).exp();
            let p = Normal::new(0.0, v.sqrt()).unwrap();
            mu.iter()
                .zip(&sigma)
                .map(|(&m, &s)| {
                    let w = m + s * r.standard_normal();
                    Normal::new(m, s).unwrap().ln_pdf(w) - p.ln_pdf(w)
                })
                .sum()
        }),
    );
}

#[test]
fn lognormal_gamma_spot_check() {
    let q = ln(1.0, 0.1);
    let cf = kl::kl_lognormal_gamma(q, GammaParams::new(4.0, 2.0).unwrap());
    let (qd, pd) = (LogNormal::new(1.0, 0.1).unwrap(), Gamma::new(4.0, 2.0).unwrap());
    within_3se(
        cf,
        mc(12, |r| {
            let x = (1.0 + 0.1 * r.standard_normal()).exp();
            qd.ln_pdf(x) - pd.ln_pdf(x)
        }),
    );
}

#[test]
fn random_rate_spot_check() {
    let (tau, vs) = (ln(0.0, 0.3), ln(0.0, 0.3));
    let cf = kl::expected_kl_lognormal_gamma_random_rate(tau, 2, vs).unwrap();
    let qd = LogNormal::new(0.0, 0.3).unwrap();
    within_3se(
        cf,
        mc(13, |r| {
            let x = (0.3 * r.standard_normal()).exp();
            let rate = (0.3 * r.standard_normal()).exp() / 2.0;
            qd.ln_pdf(x) - Gamma::new(2.0, rate).unwrap().ln_pdf(x)
        }),
    );
}
