//! Fixed benchmark inputs.

use fluidq::random::{random_reversible_model, DriftSign};
use fluidq::NetGenModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn model(n: usize, seed: u64) -> NetGenModel {
    random_reversible_model(&mut ChaCha8Rng::seed_from_u64(seed), n, DriftSign::Positive)
}
