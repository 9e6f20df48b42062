//! Shared fixtures for the kernel and pipeline benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use amen_core::backbone::{init_backbone, BackboneSpec, BranchParams};
use amen_core::tensor::Tensor;

pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen::<f64>() * 2.0 - 1.0)
}

/// The default desk backbone on 32x32 grayscale input, with seeded params.
pub fn desk_fixture(seed: u64) -> (BackboneSpec, BranchParams, Tensor) {
    let spec = BackboneSpec::desk(32, 1, 2);
    let params = init_backbone(&spec, seed).expect("valid desk spec");
    let mut rng = StdRng::seed_from_u64(seed ^ 0xA5A5);
    let image = Tensor::from_fn(&[1, 32, 32], |_| rng.gen::<f64>());
    (spec, params, image)
}
