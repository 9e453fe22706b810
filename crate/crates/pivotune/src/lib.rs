//! Customized text-to-music fine-tuning at desk scale.
//!
//! A compact text-conditioned 1D latent diffusion model, selection and
//! fine-tuning of concept-critical attention parameters, multi-concept
//! integration with identifier tokens, and an alignment-score evaluation
//! harness over a deterministic synthetic benchmark.
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (gradient checking, sampling, concept fine-tuning,
//! multi-concept integration, the evaluation protocol). The `pivotune`
//! binary wires the same library calls into subcommands.

pub mod autograd;
pub mod benchdata;
pub mod checkpoint;
pub mod concepts;
pub mod diffusion;
pub mod eval;
pub mod error;
pub mod model;
pub mod rng;

pub use autograd::Tensor;
pub use error::{Error, Result};
