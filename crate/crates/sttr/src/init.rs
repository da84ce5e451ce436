//! Deterministic parameter initialization.
//!
//! Every parameter's seed is derived from the model seed and the parameter's
//! checkpoint name, so values never depend on construction order and stay
//! stable across runs and platforms.

use crate::tensor::Tensor;

/// FNV-1a, fixed here so seeds cannot drift with std hasher changes.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn param_seed(base: u64, name: &str) -> u64 {
    fnv1a(name.as_bytes()) ^ base
}

/// Uniform(-limit, limit) with limit = sqrt(6 / fan_in).
pub fn fan_in_uniform(seed: u64, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    let t = Tensor::seeded(seed, shape, -limit, limit);
    t.set_requires_grad(true);
    t
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![0.0; n])
}

pub fn ones_param(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![1.0; n])
}
