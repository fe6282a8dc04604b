use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{generate_synthetic_bags, BagSplits, DatasetError, InstancePool, SynthesisSpec};
use crate::autograd::Tensor;

/// Two noisy concentric circles; points on the inner one are the positive
/// instance class (label 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirclesSpec {
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    /// Standard deviation of the Gaussian noise added to each coordinate.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Inner radius; the outer radius is 1.
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_pool_size() -> usize {
    50_000
}

fn default_noise() -> f64 {
    0.08
}

fn default_factor() -> f64 {
    0.5
}

impl Default for CirclesSpec {
    fn default() -> Self {
        Self {
            pool_size: default_pool_size(),
            noise: default_noise(),
            factor: default_factor(),
        }
    }
}

/// `n` points, alternating outer (label 0) and inner (label 1).
pub fn two_circles_pool<R: Rng>(
    n: usize,
    noise: f64,
    factor: f64,
    rng: &mut R,
) -> Result<InstancePool, DatasetError> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(DatasetError::Spec(format!("circle factor {factor} must lie in (0, 1)")));
    }
    let jitter = Normal::new(0.0, noise)
        .map_err(|_| DatasetError::Spec(format!("noise {noise} must be non-negative")))?;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let inner = i % 2 == 1;
        let radius = if inner { factor } else { 1.0 };
        let theta = rng.random::<f64>() * TAU;
        data.push((radius * theta.cos() + jitter.sample(rng)) as f32);
        data.push((radius * theta.sin() + jitter.sample(rng)) as f32);
        labels.push(u8::from(inner));
    }
    InstancePool::new(Tensor::new(vec![n, 2], data)?, labels)
}

/// Generates a pool of `circles.pool_size` points, uses the first half for
/// training bags and the second half for test bags.
pub fn two_circles_bags<R: Rng>(
    circles: &CirclesSpec,
    spec: &SynthesisSpec,
    rng: &mut R,
) -> Result<BagSplits, DatasetError> {
    let pool = two_circles_pool(circles.pool_size, circles.noise, circles.factor, rng)?;
    let half = circles.pool_size / 2;
    let train_rows: Vec<usize> = (0..half).collect();
    let test_rows: Vec<usize> = (half..circles.pool_size).collect();
    let train = InstancePool::new(
        pool.instances.select_rows(&train_rows),
        pool.labels[..half].to_vec(),
    )?;
    let test = InstancePool::new(
        pool.instances.select_rows(&test_rows),
        pool.labels[half..].to_vec(),
    )?;
    let mut splits = generate_synthetic_bags(spec, &train, &test, rng)?;
    // keep provenance in pool coordinates
    for bag in &mut splits.test {
        for p in &mut bag.provenance {
            *p += half;
        }
    }
    Ok(splits)
}
