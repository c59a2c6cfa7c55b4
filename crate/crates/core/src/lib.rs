//! Structurally sparse Bayesian multilayer perceptrons trained by variational inference.
//!
//! Each hidden node carries a spike-and-slab indicator over its whole incoming weight
//! group (bias included). The slab is a Gaussian whose scale is either fixed (SS-IG),
//! Gamma-mixed (group lasso, SS-GL) or regularized-horseshoe-mixed (SS-GHS). The
//! variational posterior is trained by minimizing the negative ELBO with a
//! Gumbel-softmax straight-through estimator for the indicators.
//!
//! Module map:
//! - [`tensor`], [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`sampling`]: seeded streams and reparameterized samplers.
//! - [`kl`]: closed-form KL terms.
//! - [`prior`], [`layer`], [`network`]: the model and its negative ELBO.
//! - [`train`]: optimizers, the training loop and early stopping.
//! - [`metrics`]: node/channel sparsity, compression and FLOPs.
//! - [`planner`]: rate quantities and theory-driven inclusion probabilities.
//! - [`io`]: IDX, datasets, checkpoints and run configuration.
//! - [`cli`]: the `ssbnn` command-line surface.

pub mod autodiff;
pub mod cli;
pub mod io;
pub mod kl;
pub mod layer;
pub mod metrics;
pub mod network;
pub mod planner;
pub mod prior;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, TapeError, Var};
pub use tensor::Tensor;
