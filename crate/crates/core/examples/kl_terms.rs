//! Evaluates the closed-form KL terms used in the negative ELBO.

use ssbnn::kl::*;

fn main() {
    let mu = [0.3, -0.2, 0.05];
    let sigma = [0.5, 0.8, 0.1];
    let tau = LogNormalParams::new(0.2, 0.4).unwrap();
    let half = LogNormalParams::new(-0.1, 0.3).unwrap();

    println!("KL(Bern(0.9) || Bern(0.1))          {:.6}", kl_bernoulli(0.9, 0.1).unwrap());
    println!("Gaussian slab, fixed variance       {:.6}", kl_gaussian(&mu, &sigma, 1.0).unwrap());
    println!("Gaussian slab, group lasso scale    {:.6}", expected_kl_gaussian_slab_gl(&mu, &sigma, 1.0, tau).unwrap());
    println!(
        "Gaussian slab, horseshoe scale      {:.6}",
        expected_kl_gaussian_slab_ghs(&mu, &sigma, 1.0, 1.0, half, half, half, half).unwrap()
    );
    println!("LN || Gamma(2, 1)                   {:.6}", kl_lognormal_gamma(tau, GammaParams::new(2.0, 1.0).unwrap()));
    println!("LN || InvGamma(0.5, 1)              {:.6}", kl_lognormal_invgamma(tau, InvGammaParams::new(0.5, 1.0).unwrap()));
    println!("LN || Gamma(2, 1/(2v)), v random    {:.6}", expected_kl_lognormal_gamma_random_rate(tau, 3, half).unwrap());
}
