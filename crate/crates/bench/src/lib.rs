//! Shared fixtures for the criterion benches.

use ganselect::models::{init_params, sample_latent};
use ganselect::rng::seeded;
use ganselect::{LatentPrior, NetworkSpec, ParamVector, Tensor};

/// Hidden width used throughout the 2D experiments.
pub const UNITS: usize = 64;

/// Standard normal batch of `n` rows in `dim` dimensions.
pub fn batch(n: usize, dim: usize, seed: u64) -> Tensor {
    sample_latent(LatentPrior { dim }, n, &mut seeded(seed))
}

/// Leaky-ReLU critic over 2D data with freshly initialized parameters.
pub fn critic(hidden_layers: usize) -> (NetworkSpec, ParamVector) {
    let spec = NetworkSpec::critic(2, hidden_layers, UNITS);
    let params = init_params(&spec, &mut seeded(1));
    (spec, params)
}

/// ReLU generator from `latent` to 2D with freshly initialized parameters.
pub fn generator(latent: usize, hidden_layers: usize) -> (NetworkSpec, ParamVector) {
    let spec = NetworkSpec::generator(latent, 2, hidden_layers, UNITS);
    let params = init_params(&spec, &mut seeded(2));
    (spec, params)
}
